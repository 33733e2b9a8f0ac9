"""fibospec: numerical experiments on the Fibonacci Hamiltonian.

This package provides the trace map and its invariant surfaces, spectral
estimates for the Fibonacci Hamiltonian, thermodynamic formalism for coded
interval maps, temporal distances on the hyperbolic set of the trace map and
exponential sums over nonlinear Cantor sets, with a deterministic runner on
top.
"""

import sys

from loguru import logger

from fibospec.cli import build_parser, execute, settings_from_args
from fibospec.config import Budgets, EscapeParams, Settings, load_config
from fibospec.errors import ConfigInvalid, FibospecError, IoError, ModuleError
from fibospec.models import ExperimentConfig, RunManifest, VerifyReport
from fibospec.runner import ExperimentRunner
from fibospec.verify import verify as verify_suite

# No typing imports needed here due to Python 3.10+ syntax


__version__ = "0.1.0"

# Export public classes
__all__ = [
    "Settings",
    "EscapeParams",
    "Budgets",
    "load_config",
    "ExperimentConfig",
    "RunManifest",
    "VerifyReport",
    "ExperimentRunner",
    "FibospecError",
    "ConfigInvalid",
    "ModuleError",
    "IoError",
    "verify_suite",
    "main",
]


def main(args: list[str] | None = None) -> int:
    """Run the fibospec tool from the command line.

    Args:
        args: Command line arguments

    Returns:
        Exit code: 0 on success, 2 for invalid configuration, 3 for a failed
        numerical operation, 4 for I/O errors and 1 otherwise
    """
    parser = build_parser()
    parsed_args = parser.parse_args(args)

    # Configure logging
    log_level = "DEBUG" if getattr(parsed_args, "debug", False) else "INFO"
    logger.remove()
    logger.add(sys.stderr, level=log_level)

    try:
        settings = settings_from_args(parsed_args)
        if not getattr(parsed_args, "debug", False):
            logger.remove()
            logger.add(sys.stderr, level=settings.log_level)
        return execute(parsed_args, settings)
    except FibospecError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Error running fibospec: {e}")
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
