"""Tests for the fibospec package."""

import os
import types
from unittest.mock import MagicMock, patch

import fibospec.verify
from fibospec import main
from fibospec.errors import BudgetExceeded, ConfigInvalid, IoError

# Tests need pytest fixtures


class TestMain:
    """Test the main function."""

    @patch("fibospec.execute")
    @patch("fibospec.settings_from_args")
    @patch("fibospec.logger")
    def test_main_success(self, mock_logger, mock_settings, mock_execute):
        """Test main function with a successful run."""
        mock_settings.return_value = MagicMock(log_level="INFO")
        mock_execute.return_value = 0

        result = main(["trace-map", "cocycle", "--v", "0.01"])

        assert result == 0
        mock_settings.assert_called_once()
        ns = mock_execute.call_args.args[0]
        assert ns.group == "trace-map"
        assert ns.param_v == "0.01"

    @patch("fibospec.execute")
    @patch("fibospec.settings_from_args")
    @patch("fibospec.logger")
    def test_main_debug(self, mock_logger, mock_settings, mock_execute):
        """Test that --debug keeps debug logging."""
        mock_settings.return_value = MagicMock(log_level="INFO")
        mock_execute.return_value = 0

        assert main(["--debug", "thermo", "words"]) == 0

        levels = [c.kwargs.get("level") for c in mock_logger.add.call_args_list]
        assert levels == ["DEBUG"]

    @patch("fibospec.execute")
    @patch("fibospec.settings_from_args")
    @patch("fibospec.logger")
    def test_main_failed_checks(self, mock_logger, mock_settings, mock_execute):
        """Test main function when verify reports failures."""
        mock_settings.return_value = MagicMock(log_level="INFO")
        mock_execute.return_value = 1

        assert main(["verify"]) == 1

    @patch("fibospec.execute")
    @patch("fibospec.settings_from_args")
    @patch("fibospec.logger")
    def test_main_exit_codes(self, mock_logger, mock_settings, mock_execute):
        """Test that each error class maps to its exit code."""
        mock_settings.return_value = MagicMock(log_level="INFO")
        for error, code in (
            (ConfigInvalid("bad"), 2),
            (BudgetExceeded("too many"), 3),
            (IoError("disk"), 4),
        ):
            mock_execute.side_effect = error
            assert main(["thermo", "words"]) == code
        assert mock_logger.error.call_count == 3

    @patch("fibospec.settings_from_args")
    @patch("fibospec.logger")
    def test_main_exception(self, mock_logger, mock_settings):
        """Test main function with an unexpected exception."""
        mock_settings.side_effect = RuntimeError("Test error")

        result = main(["thermo", "words"])

        assert result == 1
        mock_settings.assert_called_once()
        mock_logger.exception.assert_called_once()

    @patch("fibospec.logger")
    @patch.dict(os.environ, {}, clear=True)
    def test_main_no_command(self, mock_logger):
        """Test that running without a command is a config error."""
        assert main([]) == 2

    @patch("fibospec.logger")
    @patch.dict(os.environ, {}, clear=True)
    def test_main_end_to_end(self, mock_logger, output_dir):
        """Test a real run writing into a temporary directory."""
        result = main(
            [
                "--output-dir",
                output_dir,
                "-w",
                "1",
                "thermo",
                "words",
                "--system",
                "triadic",
                "--n",
                "2",
            ]
        )

        assert result == 0
        assert os.path.exists(os.path.join(output_dir, "thermo-words.json"))
        assert os.path.exists(os.path.join(output_dir, "thermo-words.manifest.json"))

    @patch("fibospec.logger")
    @patch.dict(os.environ, {}, clear=True)
    def test_main_invalid_params(self, mock_logger, output_dir):
        """Test that out-of-range parameters exit with code 2."""
        result = main(
            ["--output-dir", output_dir, "trace-map", "cocycle", "--v", "0.9"]
        )

        assert result == 2
        assert os.listdir(output_dir) == []


class TestExports:
    """Test the package namespace."""

    def test_submodules_stay_modules(self):
        """Package exports do not hide the submodules they come from."""
        assert isinstance(fibospec.verify, types.ModuleType)
        assert fibospec.verify.__name__ == "fibospec.verify"
        assert fibospec.verify_suite is fibospec.verify.verify
