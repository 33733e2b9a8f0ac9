"""Error types for fibospec.

Every failure raised by a numerical operation derives from ``ModuleError`` so the
command line can map it to a single exit code. Configuration and I/O problems
have their own families.
"""


class FibospecError(Exception):
    """Base class for all fibospec errors."""

    exit_code = 1


class ConfigInvalid(FibospecError, ValueError):
    """An experiment configuration failed validation."""

    exit_code = 2


class ModuleError(FibospecError):
    """A numerical operation could not produce a trustworthy result."""

    exit_code = 3


class IoError(FibospecError, OSError):
    """Reading or writing an artifact failed."""

    exit_code = 4


class NoRootInBracket(ModuleError):
    """A bracketing root finder saw no sign change."""


class OffChart(ModuleError):
    """A point lies outside the (x, z) chart of the invariant surface."""


class DegenerateSpectrum(ModuleError):
    """Eigenvalues coincide to tolerance."""


class BudgetExceeded(ModuleError):
    """A node, word or term budget was exhausted."""


class NonConvergence(ModuleError):
    """An iteration did not converge within its budget."""


class TruncationTooSmall(ModuleError):
    """The finite lattice is too short for the requested time window."""


class InsufficientEnvelope(ModuleError):
    """Too few envelope points to fit a decay exponent."""


class OrbitEscaped(ModuleError):
    """An orbit left the bounded region it was expected to stay in."""


class IllConditioned(ModuleError):
    """Stable and unstable directions are too close to each other."""


class SegmentFolded(ModuleError):
    """A traced manifold segment folded back on itself."""


class NoIntersection(ModuleError):
    """Two local manifolds do not meet inside the bracket radius."""


class StepTooSmall(ModuleError):
    """Finite differences are dominated by roundoff."""


class ContinuationFailed(ModuleError):
    """Newton continuation lost a periodic orbit."""


class InsufficientPairs(ModuleError):
    """Too few sample pairs survived the rectangle restriction."""


class EmptySlot(ModuleError):
    """A slot of the zeta table has no admissible word."""
