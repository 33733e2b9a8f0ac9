"""Tests for the command-line surface."""

import json
import os
from unittest.mock import MagicMock, patch

import pytest

from fibospec.cli import build_parser, config_from_args, execute, settings_from_args
from fibospec.config import Settings
from fibospec.errors import ConfigInvalid, IoError
from fibospec.models import CriterionResult, OutputFormat, VerifyReport


@pytest.fixture
def parser():
    """Parser built from the command registry."""
    return build_parser()


class TestParser:
    """Test argument parsing."""

    def test_subcommand_and_flags(self, parser):
        """Group, action and parameter flags are parsed."""
        ns = parser.parse_args(
            ["trace-map", "cocycle", "--v", "0.01", "--v-grid", "0.1,0.01"]
        )
        assert ns.group == "trace-map"
        assert ns.action == "cocycle"
        assert ns.param_v == "0.01"
        assert ns.param_v_grid == "0.1,0.01"

    def test_common_options_either_side(self, parser):
        """Common options work before and after the subcommand."""
        before = parser.parse_args(["--seed", "9", "thermo", "words"])
        after = parser.parse_args(["thermo", "words", "--seed", "9", "-w", "2"])
        assert before.seed == 9
        assert after.seed == 9
        assert after.workers == 2

    def test_unset_params_absent(self, parser):
        """Only given parameters reach the namespace."""
        ns = parser.parse_args(["spectrum", "dos", "--sites", "64"])
        params = [k for k in vars(ns) if k.startswith("param_")]
        assert params == ["param_sites"]

    def test_unknown_flag(self, parser):
        """Flags of other commands are rejected."""
        with pytest.raises(SystemExit):
            parser.parse_args(["trace-map", "cocycle", "--sites", "64"])

    def test_verify_options(self, parser):
        """Verify takes a suite and an optional subset."""
        ns = parser.parse_args(["verify", "--suite", "full", "--only", "cocycle"])
        assert ns.group == "verify"
        assert ns.suite == "full"
        assert ns.only == "cocycle"
        with pytest.raises(SystemExit):
            parser.parse_args(["verify", "--suite", "medium"])


class TestSettingsFromArgs:
    """Test settings overrides."""

    @patch.dict(os.environ, {}, clear=True)
    def test_overrides(self, parser):
        """Flags override environment settings."""
        ns = parser.parse_args(
            ["thermo", "words", "-w", "3", "--seed", "5", "--format", "csv", "-d"]
        )
        settings = settings_from_args(ns)
        assert settings.workers == 3
        assert settings.seed == 5
        assert settings.output_format == "csv"
        assert settings.log_level == "DEBUG"

    @patch.dict(os.environ, {"FIBOSPEC_WORKERS": "many"}, clear=True)
    def test_bad_environment(self, parser):
        """Malformed environment settings are config errors."""
        with pytest.raises(ConfigInvalid):
            settings_from_args(parser.parse_args(["thermo", "words"]))

    @patch.dict(os.environ, {}, clear=True)
    def test_bad_workers(self, parser):
        """Worker count must be positive."""
        with pytest.raises(ConfigInvalid):
            settings_from_args(parser.parse_args(["thermo", "words", "-w", "0"]))


class TestConfigFromArgs:
    """Test merging config files and flags."""

    def test_flags_only(self, parser):
        """Subcommand and flags make a config."""
        ns = parser.parse_args(["thermo", "words", "--n", "3", "-o", "out/w.json"])
        config = config_from_args(ns, Settings(seed=17))
        assert config.command == "thermo.words"
        assert config.params == {"n": "3"}
        assert config.seed == 17
        assert config.output == "out/w.json"

    def test_file_with_overrides(self, parser, tmp_path):
        """Flags win over the config file."""
        path = tmp_path / "run.json"
        path.write_text(
            json.dumps(
                {
                    "command": "thermo.words",
                    "params": {"system": "nonlinear", "n": 4},
                    "seed": 3,
                }
            )
        )
        ns = parser.parse_args(["-c", str(path), "--format", "csv"])
        config = config_from_args(ns, Settings())
        assert config.params == {"system": "nonlinear", "n": 4}
        assert config.seed == 3
        assert config.output_format == OutputFormat.CSV

        ns = parser.parse_args(["-c", str(path), "thermo", "words", "--n", "2"])
        config = config_from_args(ns, Settings())
        assert config.params == {"system": "nonlinear", "n": "2"}

    def test_no_command(self, parser):
        """Without a subcommand or config there is nothing to run."""
        with pytest.raises(ConfigInvalid):
            config_from_args(parser.parse_args([]), Settings())

    def test_missing_config_file(self, parser, tmp_path):
        """Missing config files are I/O errors."""
        ns = parser.parse_args(["-c", str(tmp_path / "missing.json")])
        with pytest.raises(IoError):
            config_from_args(ns, Settings())

    def test_config_not_object(self, parser, tmp_path):
        """Config files must hold an object."""
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigInvalid):
            config_from_args(parser.parse_args(["-c", str(path)]), Settings())


class TestExecute:
    """Test dispatch."""

    def test_run_command(self, parser, sample_settings, output_dir):
        """A subcommand writes its artifact."""
        ns = parser.parse_args(["trace-map", "cocycle", "--v", "0.01"])
        assert execute(ns, sample_settings) == 0
        assert os.path.exists(os.path.join(output_dir, "trace-map-cocycle.json"))

    def test_replay(self, parser, sample_settings, output_dir):
        """--replay re-runs a stored manifest."""
        execute(parser.parse_args(["thermo", "words", "--n", "2"]), sample_settings)
        manifest = os.path.join(output_dir, "thermo-words.manifest.json")

        with patch("fibospec.cli.ExperimentRunner.run") as mock_run:
            mock_run.return_value = MagicMock(artifact="x")
            ns = parser.parse_args(["--replay", manifest])
            assert execute(ns, sample_settings) == 0
        mock_run.assert_called_once()
        assert mock_run.call_args.args[0].command == "thermo.words"

    @patch("fibospec.cli.verify")
    def test_verify_report(self, mock_verify, parser, sample_settings, output_dir):
        """Verify writes its report and exits 1 on failures."""
        mock_verify.return_value = VerifyReport(
            suite="fast",
            passed=False,
            criteria=[
                CriterionResult(name="cocycle", passed=False, detail="off"),
                CriterionResult(name="taylor", passed=True),
            ],
        )
        ns = parser.parse_args(["verify", "--only", "cocycle, taylor"])

        assert execute(ns, sample_settings) == 1
        mock_verify.assert_called_once_with(
            "fast", sample_settings, ["cocycle", "taylor"]
        )
        with open(os.path.join(output_dir, "verify-fast.json")) as f:
            report = json.load(f)
        assert report["criteria"][0]["name"] == "cocycle"

    @patch("fibospec.cli.verify")
    def test_verify_unknown_criterion(self, mock_verify, parser, sample_settings):
        """Unknown criteria are config errors."""
        mock_verify.side_effect = ValueError("Unknown criteria: nothing")
        with pytest.raises(ConfigInvalid):
            execute(parser.parse_args(["verify", "--only", "nothing"]), sample_settings)
