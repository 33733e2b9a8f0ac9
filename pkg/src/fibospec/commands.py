"""Experiment commands.

Every subcommand is a parameter model and a function that turns validated
parameters into an Artifact. The runner looks commands up in COMMANDS by their
dotted name, e.g. ``trace-map.cocycle``.
"""

import json
import math
import typing
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator
from scipy.spatial import cKDTree

from fibospec.config import Settings
from fibospec.errors import InsufficientEnvelope, IoError, ModuleError
from fibospec.hyperbolic import (
    CatMapSystem,
    PeriodicSample,
    TraceMapSystem,
    cat_sampler,
    delta,
    forward_half_identity,
    mme_sampler,
    oseledets_frame,
    periodic_orbit_counts,
    qnl_exponent,
    surface_fixed_point_count,
)
from fibospec.models import CorrelationSeries, DosHistogram, DosMethod
from fibospec.parallel import ParallelMap, task_rng
from fibospec.spectral import (
    dos_histogram,
    fit_decay,
    fourier_of_dos,
    phase_averaged_correlation,
    spectrum_cover,
)
from fibospec.sumproduct import (
    DEFAULT_EPS,
    DEFAULT_K,
    ExpSumConfig,
    build_zeta,
    delta_nc_bridge,
    fit_nc_exponent,
    nc_counter,
    sup_modulus_scan,
    zeta_blocks,
)
from fibospec.thermo import (
    MarkovSystem,
    builtin_system,
    equilibrium_masses,
    normalize_potential,
    regular_words,
    thermo_constants,
)
from fibospec.trace_map import (
    COCYCLE_LIMIT,
    PRINTED_COCYCLE_LIMIT,
    SQRT5,
    anosov_cocycle,
    chart_derivatives,
    cocycle_limit_fit,
    linearize_at_pV,
    partials_fd_error,
    periodic_point,
    solve_t_V,
)

# No typing imports needed here due to Python 3.10+ syntax

LINEAR_TEST = "linear-test"
# The cat-map sample is sparse; Delta vanishes there at any radius
LINEAR_RADIUS = 0.05
# Share of sampled triples the holonomy identity must be evaluated on
HOLONOMY_COVERAGE = 0.9


@dataclass
class RunContext:
    """What a command receives besides its parameters."""

    settings: Settings
    seed: int
    pmap: ParallelMap


@dataclass
class Artifact:
    """Result of one command.

    ``record`` is written as JSON, ``table`` (one column per array) as CSV,
    and ``checks`` end up in the run manifest.
    """

    record: dict[str, Any]
    table: dict[str, list[Any]] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)


class Params(BaseModel):
    """Base for command parameters; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    @field_validator("*", mode="before")
    @classmethod
    def _split_lists(cls, value: Any, info: ValidationInfo) -> Any:
        # Command-line values arrive as strings; list fields take a,b,c
        annotation = cls.model_fields[info.field_name].annotation
        if isinstance(value, str) and typing.get_origin(annotation) is list:
            return [item.strip() for item in value.split(",") if item.strip()]
        return value


@dataclass(frozen=True)
class Command:
    name: str
    params: type[Params]
    run: Callable[[Any, RunContext], Artifact]
    help: str


COMMANDS: dict[str, Command] = {}


def command(
    name: str, params: type[Params]
) -> Callable[[Callable[[Any, RunContext], Artifact]], Callable[..., Artifact]]:
    """Register a command function under a dotted name."""

    def register(
        func: Callable[[Any, RunContext], Artifact],
    ) -> Callable[[Any, RunContext], Artifact]:
        doc = (func.__doc__ or "").strip().splitlines()
        COMMANDS[name] = Command(name, params, func, doc[0] if doc else name)
        return func

    return register


def sigma_grid(sigma_max: float, sigma_min: float, count: int) -> list[float]:
    """Log-spaced, strictly decreasing sigma values."""
    return np.geomspace(sigma_max, sigma_min, count).tolist()


def load_system(name: str) -> MarkovSystem:
    """A built-in Markov system with its potential normalized."""
    return normalize_potential(builtin_system(name))


def _read_json(path: str) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Error reading {path}: {e}")
        raise IoError(f"Cannot read {path}: {e}") from e


# Trace map


class CouplingParams(Params):
    v: float = Field(0.01, gt=0, le=0.5, description="Coupling V")


class CocycleParams(Params):
    v: float = Field(0.01, gt=0, le=0.2, description="Coupling V")
    v_grid: list[float] = Field(
        default_factory=list, description="Couplings for the limit regression"
    )


@command("trace-map.fixed-point", CouplingParams)
def run_fixed_point(params: CouplingParams, ctx: RunContext) -> Artifact:
    """Period-2 point p_V of the trace map and its eigenvalues."""
    V = params.v
    surface = solve_t_V(V)
    lin = linearize_at_pV(V)
    ratio = (surface.t_V - 1.0) * 2.0 * SQRT5 / V
    point = periodic_point(surface.t_V)
    record = {
        **surface.model_dump(),
        "point": [point.x, point.y, point.z],
        "lambda_V": lin.lambda_V,
        "mu_V": lin.mu_V,
        "asymptotic_ratio": ratio,
    }
    checks = {
        "asymptotic": abs(ratio - 1.0) <= 3.0 * V,
        "eigenvalue_product": abs(lin.lambda_V * lin.mu_V - 1.0) <= 1e-10,
    }
    return Artifact(record, checks=checks)


@command("trace-map.cocycle", CocycleParams)
def run_cocycle(params: CocycleParams, ctx: RunContext) -> Artifact:
    """Anosov cocycle at p_V, optionally with its small-V limit."""
    value = anosov_cocycle(params.v)
    record: dict[str, Any] = {
        **value.model_dump(),
        "scaled": value.scaled,
        "limit": COCYCLE_LIMIT,
        "printed_limit": PRINTED_COCYCLE_LIMIT,
    }
    checks = {
        "nonzero": value.value != 0.0,
        "near_limit": abs(value.scaled - COCYCLE_LIMIT) <= 20.0 * params.v,
    }
    table: dict[str, list[Any]] = {}
    if params.v_grid:
        intercept, slope, residual = cocycle_limit_fit(params.v_grid)
        record["fit"] = {"limit": intercept, "slope": slope, "residual": residual}
        table = {
            "V": list(params.v_grid),
            "scaled": [anosov_cocycle(V).scaled for V in params.v_grid],
        }
    return Artifact(record, table, checks)


@command("trace-map.taylor", CouplingParams)
def run_taylor(params: CouplingParams, ctx: RunContext) -> Artifact:
    """Chart partials of y_V at p_V and the adapted Taylor coefficients."""
    partials = chart_derivatives(params.v)
    taylor = linearize_at_pV(params.v).taylor
    error = partials_fd_error(params.v)
    record = {"V": params.v, "partials": partials, "taylor": taylor, "fd_error": error}
    table = {"name": list(partials), "value": list(partials.values())}
    return Artifact(record, table, {"finite_differences": error <= 1e-4})


# Spectrum


class CoverParams(Params):
    v: float = Field(1.0, ge=0, description="Coupling V")
    resolution: float = Field(1e-3, gt=0)


class DosParams(Params):
    v: float = Field(0.0, ge=0)
    sites: int = Field(2048, ge=8)
    phases: int = Field(1, ge=1)
    bins: int = Field(128, ge=2)
    method: DosMethod = DosMethod.EIGENCOUNT


class CorrelateParams(Params):
    v: float = Field(0.0, ge=0)
    sites: int = Field(4096, ge=8)
    phases: int = Field(1, ge=1)
    t_max: float = Field(50.0, gt=0)
    n_times: int = Field(2001, ge=2)
    method: str | None = None


class FitDecayParams(Params):
    input: str | None = Field(None, description="A dos or correlate artifact")
    v: float = Field(0.0, ge=0)
    sites: int = Field(4096, ge=8)
    phases: int = Field(1, ge=1)
    t_min: float = Field(10.0, gt=0)
    t_max: float = Field(1000.0, gt=0)
    n_times: int = Field(4001, ge=2)
    blocks: int = Field(40, ge=2)
    method: str | None = None


@command("spectrum.cover", CoverParams)
def run_cover(params: CoverParams, ctx: RunContext) -> Artifact:
    """Interval cover of the spectrum at a given resolution."""
    cover = spectrum_cover(
        params.v, params.resolution, ctx.settings.escape, ctx.settings.budgets
    )
    record = {**cover.model_dump(), "measure": cover.measure}
    table = {
        "lo": [lo for lo, _ in cover.intervals],
        "hi": [hi for _, hi in cover.intervals],
    }
    return Artifact(record, table, {"nonempty": bool(cover.intervals)})


@command("spectrum.dos", DosParams)
def run_dos(params: DosParams, ctx: RunContext) -> Artifact:
    """Histogram of the density of states."""
    dos = dos_histogram(
        params.v,
        params.sites,
        params.phases,
        params.bins,
        ctx.seed,
        params.method,
        ctx.pmap,
    )
    total = float(sum(dos.masses))
    table = {"center": dos.centers.tolist(), "mass": dos.masses}
    return Artifact(dos.model_dump(), table, {"unit_mass": abs(total - 1.0) <= 1e-9})


def _series_table(series: CorrelationSeries) -> dict[str, list[Any]]:
    return {
        "t": series.times,
        "re": series.re,
        "im": series.im,
        "abs": np.abs(series.values).tolist(),
    }


@command("spectrum.correlate", CorrelateParams)
def run_correlate(params: CorrelateParams, ctx: RunContext) -> Artifact:
    """Phase-averaged return amplitude of delta_0."""
    times = np.linspace(0.0, params.t_max, params.n_times)
    series = phase_averaged_correlation(
        params.v, times, params.sites, params.phases, ctx.seed, params.method, ctx.pmap
    )
    return Artifact(series.model_dump(), _series_table(series))


def _input_series(params: FitDecayParams, times: np.ndarray) -> CorrelationSeries:
    data = _read_json(params.input or "")
    if "bin_edges" in data:
        dos = DosHistogram.model_validate(
            {k: v for k, v in data.items() if k != "manifest_hash"}
        )
        return fourier_of_dos(dos, times)
    return CorrelationSeries.model_validate(
        {k: v for k, v in data.items() if k != "manifest_hash"}
    )


@command("spectrum.fit-decay", FitDecayParams)
def run_fit_decay(params: FitDecayParams, ctx: RunContext) -> Artifact:
    """Power-law fit of the correlation envelope."""
    if params.t_min >= params.t_max:
        raise ValueError("t_min must be below t_max")
    times = np.linspace(0.0, params.t_max, params.n_times)
    if params.input:
        series = _input_series(params, times)
    else:
        series = phase_averaged_correlation(
            params.v,
            times,
            params.sites,
            params.phases,
            ctx.seed,
            params.method,
            ctx.pmap,
        )
    fit = fit_decay(series, (params.t_min, params.t_max), params.blocks)
    checks = {"positive_decay": fit.rho_hat > 0}
    return Artifact(fit.model_dump(), _series_table(series), checks)


# Thermodynamic formalism


class SystemParams(Params):
    system: str = "triadic"
    n: int = Field(6, ge=1, le=24)


class ConstantsParams(Params):
    system: str = "triadic"
    n_quad: int = Field(8, ge=1, le=20)
    bowen: bool = True


class RegularParams(Params):
    system: str = "nonlinear"
    n: int = Field(8, ge=1, le=24)
    eps: float = Field(DEFAULT_EPS, gt=0)


@command("thermo.words", SystemParams)
def run_words(params: SystemParams, ctx: RunContext) -> Artifact:
    """Cylinder words of length n with Gibbs weights and masses."""
    markov = load_system(params.system)
    weights = equilibrium_masses(markov, params.n, ctx.settings.budgets)
    total = float(sum(w.measure_mass for w in weights))
    record = {
        "system": params.system,
        "n": params.n,
        "count": len(weights),
        "total_mass": total,
    }
    table = {
        "word": ["".join(str(s) for s in w.word) for w in weights],
        "weight": [w.weight for w in weights],
        "mass": [w.measure_mass for w in weights],
    }
    return Artifact(record, table, {"unit_mass": abs(total - 1.0) <= 1e-8})


@command("thermo.constants", ConstantsParams)
def run_constants(params: ConstantsParams, ctx: RunContext) -> Artifact:
    """Lyapunov exponent, dimension, pressure and Bowen root."""
    markov = load_system(params.system)
    constants = thermo_constants(
        markov, params.n_quad, params.bowen, ctx.settings.budgets
    )
    summary = constants.summary(params.system)
    table = {
        "t": [t for t, _ in summary.pressure_samples],
        "pressure": [p for _, p in summary.pressure_samples],
    }
    checks = {"positive_lyapunov": summary.lyapunov > 0}
    return Artifact(summary.model_dump(), table, checks)


@command("thermo.regular", RegularParams)
def run_regular(params: RegularParams, ctx: RunContext) -> Artifact:
    """Regular words in the epsilon window and the discarded mass."""
    markov = load_system(params.system)
    regular = regular_words(markov, params.n, params.eps, budgets=ctx.settings.budgets)
    record = {
        "system": params.system,
        "n": params.n,
        "eps": params.eps,
        "count": len(regular),
        "kept_fraction": regular.kept_fraction,
        "discarded_mass": regular.discarded_mass,
    }
    table = {
        "word": ["".join(str(s) for s in row) for row in regular.words.tolist()],
        "log_derivative": regular.log_derivative.tolist(),
        "mass": regular.masses.tolist(),
    }
    return Artifact(record, table)


# Hyperbolic dynamics


class FrameParams(Params):
    system: str = "trace-map"
    v: float = Field(0.5, gt=0, le=1)
    point: list[float] = Field(default_factory=list)
    depth: int = Field(40, ge=1)


class SampleParams(Params):
    system: str = "trace-map"
    v: float = Field(0.5, gt=0, le=1)
    period_cap: int = Field(6, ge=1, le=12)
    pairs: int = Field(100, ge=1)
    radius: float | None = Field(None, gt=0)
    tol: float = Field(1e-10, gt=0)


class QnlParams(SampleParams):
    pairs: int = Field(1000, ge=1)
    sigma_max: float = Field(1e-1, gt=0)
    sigma_min: float = Field(1e-6, gt=0)
    n_sigma: int = Field(16, ge=3)


def _sample(params: SampleParams, ctx: RunContext) -> PeriodicSample:
    if params.system == LINEAR_TEST:
        return cat_sampler(params.period_cap, ctx.seed)
    if params.system != "trace-map":
        raise ValueError(f"Unknown system {params.system!r}")
    radius = ctx.settings.escape.radius
    return mme_sampler(params.v, params.period_cap, ctx.seed, radius)


def _radius(params: SampleParams, ctx: RunContext) -> float:
    if params.radius is not None:
        return params.radius
    if params.system == LINEAR_TEST:
        return LINEAR_RADIUS
    return ctx.settings.bracket_radius


def _tree(sample: PeriodicSample) -> tuple[cKDTree, np.ndarray]:
    points = sample.points()
    if isinstance(sample.system, CatMapSystem):
        points = np.mod(points, 1.0)
        return cKDTree(points, boxsize=1.0), points
    return cKDTree(points), points


def near_pairs(
    sample: PeriodicSample, radius: float, count: int, seed: int
) -> list[tuple[int, int]]:
    """Up to count sample pairs closer than radius, in a seeded order."""
    tree, _ = _tree(sample)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return []
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    order = task_rng(seed, 1).permutation(len(pairs))[:count]
    return [(int(i), int(j)) for i, j in pairs[order]]


def near_triples(
    sample: PeriodicSample, radius: float, count: int, seed: int
) -> list[tuple[int, int, int]]:
    """(p, s, y) index triples with s and y both within radius of p."""
    tree, points = _tree(sample)
    triples: list[tuple[int, int, int]] = []
    for p, s in near_pairs(sample, radius, 4 * count, seed):
        neighbours = sorted(tree.query_ball_point(points[p], radius))
        y = next((k for k in neighbours if k not in (p, s)), None)
        if y is not None:
            triples.append((p, s, int(y)))
        if len(triples) == count:
            break
    return triples


@command("hyperbolic.frame", FrameParams)
def run_frame(params: FrameParams, ctx: RunContext) -> Artifact:
    """Unstable and stable directions at a point."""
    if params.system == LINEAR_TEST:
        system: TraceMapSystem | CatMapSystem = CatMapSystem()
        point = np.array(params.point or [0.0, 0.0])
    else:
        system = TraceMapSystem(params.v, ctx.settings.escape.radius)
        t = solve_t_V(params.v).t_V
        p_V = periodic_point(t)
        point = np.array(params.point or [p_V.x, p_V.y, p_V.z])
    frame = oseledets_frame(system, point, params.depth)
    record = {
        "system": system.name,
        "point": system.ambient(frame.point).tolist(),
        "e_u": frame.e_u.tolist(),
        "e_s": frame.e_s.tolist(),
        "residual": frame.residual,
        "seed_spread": frame.seed_spread,
        "angle": frame.angle,
        "expansion": frame.expansion,
        "contraction": frame.contraction,
    }
    return Artifact(record, checks={"invariance": frame.residual <= 1e-8})


@command("hyperbolic.delta", SampleParams)
def run_delta(params: SampleParams, ctx: RunContext) -> Artifact:
    """Temporal distances on nearby periodic pairs, both orders."""
    sample = _sample(params, ctx)
    radius = _radius(params, ctx)
    members = list(sample)
    candidates = near_pairs(sample, radius, params.pairs, ctx.seed)

    def evaluate(pair: tuple[int, int]) -> tuple[float, float] | None:
        p, q = members[pair[0]], members[pair[1]]
        try:
            forward = delta(sample.system, p, q, params.tol, radius)
            backward = delta(sample.system, q, p, params.tol, radius)
        except ModuleError as e:
            logger.debug(f"Pair {pair} skipped: {e}")
            return None
        return forward.value, backward.value

    evaluated = ctx.pmap(evaluate, candidates)
    pairs = [pair for pair, r in zip(candidates, evaluated) if r is not None]
    results = [r for r in evaluated if r is not None]
    asymmetry = [abs(a - b) for a, b in results]
    self_distance = delta(sample.system, members[0], members[0]).value
    record = {
        "system": sample.system.name,
        "radius": radius,
        "n_pairs": len(pairs),
        "n_skipped": len(candidates) - len(pairs),
        "max_abs_delta": max((abs(a) for a, _ in results), default=0.0),
        "max_asymmetry": max(asymmetry, default=0.0),
        "self_distance": self_distance,
    }
    table = {
        "i": [i for i, _ in pairs],
        "j": [j for _, j in pairs],
        "delta": [a for a, _ in results],
        "delta_swapped": [b for _, b in results],
    }
    checks = {
        "zero_on_diagonal": self_distance == 0.0,
        "symmetric": bool(results) and max(asymmetry) <= 10.0 * params.tol,
    }
    if params.system == LINEAR_TEST:
        checks["vanishes"] = bool(results) and record["max_abs_delta"] <= 1e-8
    return Artifact(record, table, checks)


@command("hyperbolic.qnl", QnlParams)
def run_qnl(params: QnlParams, ctx: RunContext) -> Artifact:
    """Mass of small temporal distances and its exponent."""
    if params.sigma_min >= params.sigma_max:
        raise ValueError("sigma_min must be below sigma_max")
    sample = _sample(params, ctx)
    grid = sigma_grid(params.sigma_max, params.sigma_min, params.n_sigma)
    histogram = qnl_exponent(
        sample, params.pairs, grid, ctx.seed, _radius(params, ctx), params.tol, ctx.pmap
    )
    record = {"system": sample.system.name, **histogram.model_dump()}
    table = {"sigma": histogram.sigma_grid, "mass": histogram.masses}
    if params.system == LINEAR_TEST:
        checks = {"degenerate": histogram.degenerate}
    else:
        checks = {
            "positive_exponent": (histogram.gamma_hat or 0.0) > 0,
            "good_fit": (histogram.r2 or 0.0) >= 0.9,
        }
    return Artifact(record, table, checks)


@command("hyperbolic.holonomy", SampleParams)
def run_holonomy(params: SampleParams, ctx: RunContext) -> Artifact:
    """Forward temporal distance against the stable holonomy distortion."""
    sample = _sample(params, ctx)
    radius = _radius(params, ctx)
    members = list(sample)
    candidates = near_triples(sample, radius, params.pairs, ctx.seed)
    system = sample.system

    def evaluate(triple: tuple[int, int, int]) -> tuple[float, float] | None:
        p, s, y = (members[k] for k in triple)
        try:
            result = forward_half_identity(system, p, s, y, params.tol, radius)
        except ModuleError as e:
            logger.warning(f"Triple {triple} skipped: {e}")
            return None
        return result.delta_plus, result.distortion

    evaluated = ctx.pmap(evaluate, candidates)
    triples = [t for t, r in zip(candidates, evaluated) if r is not None]
    results = [r for r in evaluated if r is not None]
    gaps = [abs(a - b) for a, b in results]
    record = {
        "system": system.name,
        "radius": radius,
        "n_triples": len(triples),
        "n_skipped": len(candidates) - len(triples),
        "max_gap": max(gaps, default=0.0),
    }
    table = {
        "p": [t[0] for t in triples],
        "s": [t[1] for t in triples],
        "y": [t[2] for t in triples],
        "delta_plus": [a for a, _ in results],
        "distortion": [b for _, b in results],
    }
    checks = {
        "holonomy_identity": bool(gaps) and max(gaps) <= 1e-6,
        "coverage": len(triples) >= math.ceil(HOLONOMY_COVERAGE * params.pairs),
    }
    return Artifact(record, table, checks)


class CountParams(Params):
    v: float = Field(0.5, gt=0, le=1)
    period_cap: int = Field(6, ge=1, le=12)


@command("hyperbolic.counts", CountParams)
def run_counts(params: CountParams, ctx: RunContext) -> Artifact:
    """Periodic point counts of T^2 on S_V and the fitted entropy."""
    counts, slope = periodic_orbit_counts(params.v, params.period_cap)
    expected = [surface_fixed_point_count(n) for n in range(1, params.period_cap + 1)]
    record = {
        "V": params.v,
        "counts": counts,
        "expected": expected,
        "entropy_fit": slope,
        "entropy": 2.0 * math.log((1.0 + SQRT5) / 2.0),
    }
    table = {"n": list(range(1, params.period_cap + 1)), "count": counts}
    return Artifact(record, table, {"counts": counts == expected})


# Sum-product


class ZetaParams(Params):
    system: str = "nonlinear"
    n: int = Field(8, ge=1, le=20)
    k: int = Field(DEFAULT_K, ge=1, le=6)
    eps: float = Field(DEFAULT_EPS, gt=0)
    eps0: float | None = Field(None, gt=0)


class SumParams(ZetaParams):
    ns: list[int] = Field(default_factory=list)


class NcParams(ZetaParams):
    gamma: float = Field(0.5, gt=0)
    sigma_max: float = Field(1e-1, gt=0)
    sigma_min: float = Field(1e-4, gt=0)
    n_sigma: int = Field(12, ge=3)
    samples: int = Field(4096, ge=1)


@command("sumproduct.zeta", ZetaParams)
def run_zeta(params: ZetaParams, ctx: RunContext) -> Artifact:
    """Zeta values of one seeded block."""
    markov = load_system(params.system)
    budgets = ctx.settings.budgets
    block = zeta_blocks(
        markov, params.n, params.eps, 1, params.k, ctx.seed, budgets=budgets
    )[0]
    table_ = build_zeta(markov, block, params.n, params.eps, budgets=budgets)
    record = {
        "system": params.system,
        "n": params.n,
        "k": params.k,
        "block": block.tolist(),
        "sizes": table_.sizes,
        "log_spread": table_.log_spread,
    }
    table = {
        f"zeta_{j + 1}": values.tolist() for j, values in enumerate(table_.values)
    }
    return Artifact(record, table)


@command("sumproduct.sum", SumParams)
def run_sum(params: SumParams, ctx: RunContext) -> Artifact:
    """Normalized exponential sum over the eta window, scanned in n."""
    markov = load_system(params.system)
    ns = params.ns or [params.n]
    results, slope = sup_modulus_scan(
        markov, ns, params.k, params.eps, params.eps0, ctx.seed, ctx.settings.budgets
    )
    sups = [r.sup_modulus for r in results]
    eps0 = ExpSumConfig.for_system(markov, ns[0], params.k, params.eps0).eps0
    record = {
        "system": params.system,
        "k": params.k,
        "eps0": eps0,
        "results": [r.model_dump() for r in results],
        "sup_modulus": sups,
        "slope": slope,
    }
    table = {"n": ns, "sup_modulus": sups}
    checks = {"bounded": all(s <= 1.0 for s in sups)}
    if len(sups) > 1:
        checks["decreasing"] = all(b < a for a, b in zip(sups, sups[1:]))
    return Artifact(record, table, checks)


@command("sumproduct.nc", NcParams)
def run_nc(params: NcParams, ctx: RunContext) -> Artifact:
    """Non-concentration counts of zeta values and the bridge profile."""
    if params.sigma_min >= params.sigma_max:
        raise ValueError("sigma_min must be below sigma_max")
    markov = load_system(params.system)
    budgets = ctx.settings.budgets
    grid = sigma_grid(params.sigma_max, params.sigma_min, params.n_sigma)
    block = zeta_blocks(
        markov, params.n, params.eps, 1, params.k, ctx.seed, budgets=budgets
    )[0]
    zeta = build_zeta(markov, block, params.n, params.eps, budgets=budgets)
    counters = nc_counter(zeta, sorted(grid), params.gamma)
    try:
        exponent: float | None = fit_nc_exponent(counters, zeta.sizes[0])
    except InsufficientEnvelope as e:
        logger.warning(f"No non-concentration exponent: {e}")
        exponent = None
    bridge = delta_nc_bridge(
        markov, params.n, grid, params.samples, ctx.seed, budgets
    )
    record = {
        "system": params.system,
        "n": params.n,
        "gamma": params.gamma,
        "gamma_fit": exponent,
        "counters": [c.model_dump() for c in counters],
        "bridge": bridge.model_dump(),
    }
    table = {
        "sigma": [c.sigma for c in counters],
        "pair_count": [c.pair_count for c in counters],
        "bound_ratio": [c.bound_ratio for c in counters],
    }
    counts = [c.pair_count for c in counters]
    checks = {"monotone": all(a <= b for a, b in zip(counts, counts[1:]))}
    return Artifact(record, table, checks)
