"""Data models for fibospec.

This module defines the serializable records produced by the numerical
modules and the configuration and manifest records used by the runner.
"""

from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel, Field, field_validator

# No typing imports needed here due to Python 3.10+ syntax


class OutputFormat(str, Enum):
    """Artifact formats."""

    JSON = "json"
    CSV = "csv"


class DosMethod(str, Enum):
    """Constructions of the density of states."""

    EIGENCOUNT = "eigencount"
    TRACE_MAP_COVER = "trace-map-cover"


class ManifoldKind(str, Enum):
    """Local manifold kinds."""

    STABLE = "stable"
    UNSTABLE = "unstable"


class SurfaceParams(BaseModel):
    """The period-2 parameter of T on the surface S_V."""

    V: float
    t_V: float
    invariant_level: float
    residual: float = 0.0


class CocycleValue(BaseModel):
    """Anosov cocycle at the fixed point p_V of T^2."""

    value: float
    V: float
    # Constituent partials of the adapted map at the origin
    partials: dict[str, float] = Field(default_factory=dict)

    @property
    def scaled(self) -> float:
        """Cocycle times V squared."""
        return self.value * self.V**2


class SpectrumCover(BaseModel):
    """Interval cover of the spectrum at a given resolution."""

    V: float
    resolution: float
    intervals: list[tuple[float, float]] = Field(default_factory=list)
    escape_radius: float = 10.0
    max_iter: int = 10_000
    depth: int = 0

    @property
    def measure(self) -> float:
        """Total Lebesgue measure of the cover."""
        return float(sum(hi - lo for lo, hi in self.intervals))

    def contains(self, energy: float, pad: float = 0.0) -> bool:
        """Whether an energy lies in the cover fattened by pad."""
        return any(lo - pad <= energy <= hi + pad for lo, hi in self.intervals)


class DosHistogram(BaseModel):
    """Weighted histogram approximating the density of states."""

    V: float
    bin_edges: list[float]
    masses: list[float]
    method: DosMethod = DosMethod.EIGENCOUNT
    n_sites: int = 0
    n_phases: int = 0
    seed: int = 0

    @property
    def centers(self) -> np.ndarray:
        """Bin centers."""
        edges = np.asarray(self.bin_edges)
        return 0.5 * (edges[:-1] + edges[1:])


class CorrelationSeries(BaseModel):
    """Complex time series, stored as real and imaginary parts."""

    times: list[float]
    re: list[float]
    im: list[float]
    n_phases: int = 1
    V: float | None = None

    @property
    def values(self) -> np.ndarray:
        """Complex amplitudes."""
        return np.asarray(self.re) + 1j * np.asarray(self.im)

    @classmethod
    def from_arrays(
        cls, times: np.ndarray, values: np.ndarray, **extra: Any
    ) -> "CorrelationSeries":
        """Build a series from numpy arrays."""
        values = np.asarray(values, dtype=complex)
        return cls(
            times=[float(t) for t in times],
            re=[float(v) for v in values.real],
            im=[float(v) for v in values.imag],
            **extra,
        )


class DecayFit(BaseModel):
    """Power-law fit of an envelope."""

    rho_hat: float
    C_hat: float
    fit_window: tuple[float, float]
    r2: float
    n_points: int


class GibbsWeight(BaseModel):
    """Gibbs weight and equilibrium mass of a cylinder."""

    word: tuple[int, ...]
    weight: float
    measure_mass: float


class ThermoSummary(BaseModel):
    """Serializable view of thermodynamic constants."""

    system: str
    lyapunov: float
    delta: float
    bowen_root: float | None = None
    gibbs_constant: float | None = None
    pressure_samples: list[tuple[float, float]] = Field(default_factory=list)


class DeltaValue(BaseModel):
    """Temporal distance between two points."""

    p: tuple[float, ...]
    q: tuple[float, ...]
    value: float
    truncation: int
    tail_bound: float


class QnlHistogram(BaseModel):
    """Empirical mass profile of small temporal distances."""

    sigma_grid: list[float]
    masses: list[float]
    gamma_hat: float | None
    r2: float | None
    n_pairs: int
    seed: int
    degenerate: bool = False


class ExpSumResult(BaseModel):
    """Normalized exponential sum over the eta window."""

    n: int
    k: int
    eta: list[float]
    modulus: list[float]
    sup_modulus: float
    n_terms: int
    N: float


class NcCounter(BaseModel):
    """Pair count of nearby zeta values at one scale."""

    sigma: float
    pair_count: int
    bound_ratio: float


class ExperimentConfig(BaseModel):
    """A single runner invocation."""

    command: str
    params: dict[str, Any] = Field(default_factory=dict)
    seed: int = 20240501
    output: str | None = None
    output_format: OutputFormat = OutputFormat.JSON

    @field_validator("command")
    @classmethod
    def _known_command(cls, value: str) -> str:
        if not value or " " in value.strip():
            raise ValueError(f"Invalid command name: {value!r}")
        return value.strip()


class RunManifest(BaseModel):
    """Record of one run, sufficient to replay it."""

    config: ExperimentConfig
    manifest_hash: str
    wall_time: float
    versions: dict[str, str] = Field(default_factory=dict)
    checks: dict[str, bool] = Field(default_factory=dict)
    artifact: str | None = None
    success: bool = True
    error_message: str | None = None


class CriterionResult(BaseModel):
    """Outcome of one acceptance criterion."""

    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


class VerifyReport(BaseModel):
    """Machine-readable result of an acceptance suite."""

    suite: str
    passed: bool
    criteria: list[CriterionResult] = Field(default_factory=list)
    wall_time: float = 0.0

    @property
    def failed(self) -> list[str]:
        """Names of the failing criteria."""
        return [c.name for c in self.criteria if not c.passed]
