"""Tests for the errors module."""

import pytest

from fibospec import errors
from fibospec.errors import ConfigInvalid, FibospecError, IoError, ModuleError


class TestErrors:
    """Test the error hierarchy."""

    def test_exit_codes(self):
        """Test the exit code of each error family."""
        assert FibospecError.exit_code == 1
        assert ConfigInvalid.exit_code == 2
        assert ModuleError.exit_code == 3
        assert IoError.exit_code == 4

    def test_config_invalid_is_value_error(self):
        """Test that invalid configs can be caught as ValueError."""
        with pytest.raises(ValueError):
            raise ConfigInvalid("bad")

    def test_io_error_is_os_error(self):
        """Test that artifact I/O failures can be caught as OSError."""
        with pytest.raises(OSError):
            raise IoError("disk full")

    @pytest.mark.parametrize(
        "name",
        [
            "NoRootInBracket",
            "OffChart",
            "DegenerateSpectrum",
            "BudgetExceeded",
            "NonConvergence",
            "TruncationTooSmall",
            "InsufficientEnvelope",
            "OrbitEscaped",
            "IllConditioned",
            "SegmentFolded",
            "NoIntersection",
            "StepTooSmall",
            "ContinuationFailed",
            "InsufficientPairs",
            "EmptySlot",
        ],
    )
    def test_numerical_errors_are_module_errors(self, name):
        """Test that every numerical failure maps to the module exit code."""
        cls = getattr(errors, name)
        assert issubclass(cls, ModuleError)
        assert cls("x").exit_code == 3
