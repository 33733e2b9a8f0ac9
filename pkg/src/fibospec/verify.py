"""Acceptance suites.

``verify("fast")`` runs every acceptance criterion at reduced sizes in a few
minutes; ``verify("full")`` runs them at their stated sizes. Each criterion
reports pass or fail with a short detail line, and a failing or crashing
criterion never stops the others.
"""

import math
import os
import tempfile
import time
from collections.abc import Callable
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Any

import numpy as np
from loguru import logger
from scipy import special

from fibospec.commands import LINEAR_TEST, load_system
from fibospec.config import Settings
from fibospec.errors import FibospecError
from fibospec.hyperbolic import mme_sampler
from fibospec.models import CriterionResult, ExperimentConfig, VerifyReport
from fibospec.runner import ExperimentRunner
from fibospec.spectral import fit_decay, phase_averaged_correlation
from fibospec.thermo import (
    bowen_root,
    fourier_transform,
    gibbs_constant,
    transfer_apply,
)
from fibospec.trace_map import (
    COCYCLE_LIMIT,
    LAMBDA_0,
    SQRT5,
    TraceMapPoint,
    anosov_cocycle,
    apply_T,
    chart_derivatives,
    fricke_vogt_drift,
    linearize_at_pV,
    periodic_point,
    solve_t_V,
)

# No typing imports needed here due to Python 3.10+ syntax

GOLDEN = (1.0 + SQRT5) / 2.0


@dataclass(frozen=True)
class Scale:
    """Problem sizes of one suite."""

    free_sites: int
    free_t_max: float
    decay_sites: int
    decay_phases: int
    decay_t_max: float
    cantor_octaves: int
    gibbs_n: int
    period_cap: int
    delta_pairs: int
    holonomy_triples: int
    qnl_pairs: int
    qnl_radius: float
    sum_ns: tuple[int, ...]
    drift_orbits: int


SCALES = {
    "fast": Scale(
        free_sites=1024,
        free_t_max=240.0,
        decay_sites=2048,
        decay_phases=8,
        decay_t_max=480.0,
        cantor_octaves=6,
        gibbs_n=4,
        period_cap=6,
        delta_pairs=50,
        holonomy_triples=10,
        qnl_pairs=2000,
        qnl_radius=0.1,
        sum_ns=(4, 6, 8),
        drift_orbits=0,
    ),
    "full": Scale(
        free_sites=4096,
        free_t_max=1000.0,
        decay_sites=8192,
        decay_phases=64,
        decay_t_max=1000.0,
        cantor_octaves=10,
        gibbs_n=5,
        period_cap=9,
        delta_pairs=1000,
        holonomy_triples=100,
        qnl_pairs=100_000,
        qnl_radius=0.1,
        sum_ns=(6, 8, 10),
        drift_orbits=8,
    ),
}

Check = Callable[[Scale, ExperimentRunner], tuple[bool, str]]
CRITERIA: dict[str, Check] = {}


def criterion(name: str) -> Callable[[Check], Check]:
    def register(func: Check) -> Check:
        CRITERIA[name] = func
        return func

    return register


def _checks(runner: ExperimentRunner, command: str, **params: Any) -> dict[str, Any]:
    config = ExperimentConfig(
        command=command, params=dict(params), seed=runner.settings.seed
    )
    artifact = runner.compute(config)
    return {"checks": artifact.checks, "record": artifact.record}


@criterion("fixed-point")
def check_fixed_point(scale: Scale, runner: ExperimentRunner) -> tuple[bool, str]:
    errors = []
    for V in (1e-1, 1e-2, 1e-3, 1e-4):
        t = solve_t_V(V).t_V
        errors.append((abs((t - 1.0) * 2.0 * SQRT5 / V - 1.0), V))
    passed = all(err <= 3.0 * V for err, V in errors)
    return passed, "relative errors " + ", ".join(f"{e:.2e}" for e, _ in errors)


@criterion("eigenvalues")
def check_eigenvalues(scale: Scale, runner: ExperimentRunner) -> tuple[bool, str]:
    passed, worst = True, 0.0
    for V in (1e-1, 1e-2, 1e-3):
        lin = linearize_at_pV(V)
        gap = abs(lin.lambda_V - LAMBDA_0)
        product = abs(lin.lambda_V * lin.mu_V - 1.0)
        passed &= gap <= 5.0 * V and product <= 1e-10
        worst = max(worst, product)
    return passed, f"max |lambda mu - 1| = {worst:.2e}"


@criterion("cocycle")
def check_cocycle(scale: Scale, runner: ExperimentRunner) -> tuple[bool, str]:
    passed, scaled = True, []
    for V in (1e-1, 1e-2, 1e-3):
        value = anosov_cocycle(V)
        scaled.append(value.scaled)
        passed &= value.value != 0.0
        passed &= abs(value.scaled - COCYCLE_LIMIT) <= 20.0 * V
    detail = ", ".join(f"{s:.4f}" for s in scaled)
    return passed, f"cocycle * V^2 = {detail} (limit {COCYCLE_LIMIT:.4f})"


@criterion("taylor")
def check_taylor(scale: Scale, runner: ExperimentRunner) -> tuple[bool, str]:
    V = 1e-3
    partials = chart_derivatives(V)
    # name -> (asymptotic constant, power of V it is scaled by)
    targets = {
        "x": (1.0 / 3.0, 0),
        "xx": (8.0 * SQRT5 / 27.0, 1),
        "xz": (-28.0 * SQRT5 / 27.0, 1),
        "xxz": (320.0 / 81.0, 2),
        "xxx": (-160.0 / 81.0, 2),
        "y": (1.0 - V / (2.0 * SQRT5), 0),
    }
    errors = {
        name: abs(partials[name] * V**power / target - 1.0)
        for name, (target, power) in targets.items()
    }
    worst = max(errors, key=errors.__getitem__)
    passed = all(err <= 10.0 * V for err in errors.values())
    return passed, f"worst relative error {errors[worst]:.2e} ({worst})"


def angle_cycle(a: Fraction, b: Fraction) -> list[TraceMapPoint]:
    """Periodic T-orbit of (cos 2pi a, cos 2pi b, cos 2pi(a - b)) on I = 0."""
    start = (a % 1, b % 1)
    cycle, (a, b) = [], start
    while True:
        cycle.append(
            TraceMapPoint(
                math.cos(2 * math.pi * a),
                math.cos(2 * math.pi * b),
                math.cos(2 * math.pi * (a - b)),
            )
        )
        a, b = (a + b) % 1, a
        if (a, b) == start:
            return cycle


@criterion("fricke-vogt")
def check_fricke_vogt(scale: Scale, runner: ExperimentRunner) -> tuple[bool, str]:
    cycles = [angle_cycle(Fraction(1, 11), Fraction(3, 11))]
    p_V = periodic_point(solve_t_V(0.5).t_V)
    cycles.append([p_V, apply_T(p_V)])
    if scale.drift_orbits:
        sample = mme_sampler(0.5, 4, runner.settings.seed)
        for orbit in sample.orbits[: scale.drift_orbits]:
            points = [TraceMapPoint.from_array(q) for q in orbit.points]
            cycles.append([c for q in points for c in (q, apply_T(q))])
    drift = max(fricke_vogt_drift(c[0], 1000, c) for c in cycles)
    return drift <= 1e-10, f"max drift {drift:.2e} over {len(cycles)} orbits"


@criterion("free-case")
def check_free_case(scale: Scale, runner: ExperimentRunner) -> tuple[bool, str]:
    times = np.linspace(0.0, scale.free_t_max, int(scale.free_t_max * 4) + 1)
    series = phase_averaged_correlation(
        0.0, times, scale.free_sites, 1, runner.settings.seed, pmap=runner.pmap
    )
    early = times <= 50.0
    gap = float(np.max(np.abs(series.values[early] - special.j0(2.0 * times[early]))))
    fit = fit_decay(series, (10.0, scale.free_t_max))
    passed = gap <= 1e-3 and abs(fit.rho_hat - 0.5) <= 0.05
    return passed, f"|C - J0(2t)| <= {gap:.2e}, rho_hat = {fit.rho_hat:.4f}"


@criterion("decay-sign")
def check_decay_sign(scale: Scale, runner: ExperimentRunner) -> tuple[bool, str]:
    times = np.linspace(0.0, scale.decay_t_max, int(scale.decay_t_max * 4) + 1)
    series = phase_averaged_correlation(
        0.1,
        times,
        scale.decay_sites,
        scale.decay_phases,
        runner.settings.seed,
        pmap=runner.pmap,
    )
    fit = fit_decay(series, (10.0, scale.decay_t_max))
    passed = fit.rho_hat > 0 and fit.r2 >= 0.8
    return passed, f"rho_hat = {fit.rho_hat:.4f}, r2 = {fit.r2:.3f}"


@criterion("cantor")
def check_cantor(scale: Scale, runner: ExperimentRunner) -> tuple[bool, str]:
    triadic = load_system("triadic")
    moduli = np.abs(fourier_transform(triadic, 3.0 ** np.arange(13)))
    spread = float(moduli.max() - moduli.min())

    nonlinear = load_system("nonlinear")
    envelope = []
    for j in range(4, 4 + scale.cantor_octaves + 1):
        xi = np.geomspace(2.0**j, 2.0 ** (j + 1), 32, endpoint=False)
        envelope.append(float(np.max(np.abs(fourier_transform(nonlinear, xi)))))
    decreasing = all(b < a for a, b in zip(envelope, envelope[1:]))
    detail = (
        f"triadic spread {spread:.2e}; nonlinear envelope "
        + ", ".join(f"{e:.3e}" for e in envelope)
    )
    return spread <= 1e-6 and decreasing, detail


@criterion("thermo")
def check_thermo(scale: Scale, runner: ExperimentRunner) -> tuple[bool, str]:
    budgets = runner.settings.budgets
    root = bowen_root(load_system("triadic"), budgets=budgets)
    root_ok = abs(root - math.log(2) / math.log(3)) <= 1e-6
    perron = math.exp(load_system("golden-mean").log_rho)
    perron_ok = abs(perron - GOLDEN) <= 1e-6

    nonlinear = load_system("nonlinear")
    one = transfer_apply(nonlinear, lambda x, s: np.ones(np.shape(x)))
    symbols = np.broadcast_to(
        np.arange(nonlinear.n_symbols)[:, None], nonlinear.nodes.shape
    )
    normalization = float(np.max(np.abs(one(nonlinear.nodes, symbols) - 1.0)))
    c_n = gibbs_constant(nonlinear, scale.gibbs_n, budgets)
    c_2n = gibbs_constant(nonlinear, 2 * scale.gibbs_n, budgets)
    gibbs_ok = math.isfinite(c_2n) and abs(math.log(c_2n / c_n)) <= 0.1
    passed = root_ok and perron_ok and normalization <= 1e-8 and gibbs_ok
    detail = (
        f"bowen {root:.10f}, perron {perron:.10f}, "
        f"|L1 - 1| {normalization:.1e}, C0 {c_n:.4f} -> {c_2n:.4f}"
    )
    return passed, detail


@criterion("delta")
def check_delta(scale: Scale, runner: ExperimentRunner) -> tuple[bool, str]:
    cap = scale.period_cap
    trace = _checks(
        runner,
        "hyperbolic.delta",
        v=0.5,
        period_cap=cap,
        pairs=scale.delta_pairs,
        radius=scale.qnl_radius,
    )
    linear = _checks(
        runner, "hyperbolic.delta", system=LINEAR_TEST, period_cap=cap, tol=1e-8
    )
    holonomy = _checks(
        runner,
        "hyperbolic.holonomy",
        v=0.5,
        period_cap=cap,
        pairs=scale.holonomy_triples,
        radius=scale.qnl_radius,
    )
    passed = (
        all(trace["checks"].values())
        and all(linear["checks"].values())
        and all(holonomy["checks"].values())
    )
    detail = (
        f"asymmetry {trace['record']['max_asymmetry']:.2e} on "
        f"{trace['record']['n_pairs']} pairs, linear max "
        f"{linear['record']['max_abs_delta']:.2e}, holonomy gap "
        f"{holonomy['record']['max_gap']:.2e} on "
        f"{holonomy['record']['n_triples']}/{scale.holonomy_triples} triples"
    )
    return passed, detail


@criterion("qnl")
def check_qnl(scale: Scale, runner: ExperimentRunner) -> tuple[bool, str]:
    trace = _checks(
        runner,
        "hyperbolic.qnl",
        v=0.5,
        period_cap=scale.period_cap,
        pairs=scale.qnl_pairs,
        radius=scale.qnl_radius,
    )
    linear = _checks(
        runner, "hyperbolic.qnl", system=LINEAR_TEST, period_cap=6, pairs=1000
    )
    passed = all(trace["checks"].values()) and all(linear["checks"].values())
    record = trace["record"]
    return passed, f"gamma_hat {record['gamma_hat']}, r2 {record['r2']}"


@criterion("sum-product")
def check_sum_product(scale: Scale, runner: ExperimentRunner) -> tuple[bool, str]:
    ns = ",".join(str(n) for n in scale.sum_ns)
    triadic = _checks(runner, "sumproduct.sum", system="triadic", ns=ns, k=3)
    nonlinear = _checks(runner, "sumproduct.sum", system="nonlinear", ns=ns, k=3)
    flat = all(abs(s - 1.0) <= 1e-12 for s in triadic["record"]["sup_modulus"])
    decreasing = nonlinear["checks"].get("decreasing", False)
    sups = ", ".join(f"{s:.4f}" for s in nonlinear["record"]["sup_modulus"])
    return flat and decreasing, f"nonlinear sup modulus {sups}"


DETERMINISM_RUNS = [
    ("trace-map.cocycle", {"v": 0.01}),
    ("spectrum.dos", {"v": 0.5, "sites": 256, "phases": 4, "bins": 32}),
    ("thermo.words", {"system": "nonlinear", "n": 4}),
    ("hyperbolic.delta", {"system": LINEAR_TEST, "period_cap": 5, "pairs": 20}),
    ("sumproduct.sum", {"system": "nonlinear", "n": 4, "k": 2}),
]


def _artifact_bytes(settings: Settings, directory: str) -> list[bytes]:
    runner = ExperimentRunner(settings, directory)
    contents = []
    for command, params in DETERMINISM_RUNS:
        manifest = runner.run(
            ExperimentConfig(command=command, params=params, seed=settings.seed)
        )
        with open(manifest.artifact or "", "rb") as f:
            contents.append(f.read())
    return contents


@criterion("determinism")
def check_determinism(scale: Scale, runner: ExperimentRunner) -> tuple[bool, str]:
    with tempfile.TemporaryDirectory() as tmp:
        serial = replace(runner.settings, workers=1)
        pooled = replace(runner.settings, workers=4)
        first = _artifact_bytes(serial, os.path.join(tmp, "a"))
        second = _artifact_bytes(serial, os.path.join(tmp, "b"))
        wide = _artifact_bytes(pooled, os.path.join(tmp, "c"))
    repeat = [c for (c, _), x, y in zip(DETERMINISM_RUNS, first, second) if x != y]
    workers = [c for (c, _), x, y in zip(DETERMINISM_RUNS, first, wide) if x != y]
    if repeat or workers:
        return False, f"differs on repeat: {repeat}; across workers: {workers}"
    return True, f"{len(first)} artifacts identical across repeats and workers"


def verify(
    suite: str = "fast",
    settings: Settings | None = None,
    only: list[str] | None = None,
) -> VerifyReport:
    """Run an acceptance suite.

    Args:
        suite: "fast" or "full"
        settings: Settings for seeds, workers and budgets
        only: Optional subset of criterion names

    Returns:
        VerifyReport listing every criterion
    """
    if suite not in SCALES:
        raise ValueError(f"Unknown suite {suite!r}; expected fast or full")
    names = only or list(CRITERIA)
    unknown = sorted(set(names) - set(CRITERIA))
    if unknown:
        raise ValueError(f"Unknown criteria: {', '.join(unknown)}")
    settings = settings or Settings()
    scale = SCALES[suite]
    runner = ExperimentRunner(settings)
    start = time.perf_counter()
    results = []
    for name in names:
        logger.info(f"Checking {name} ({suite})")
        began = time.perf_counter()
        try:
            passed, detail = CRITERIA[name](scale, runner)
        except (FibospecError, ValueError, ArithmeticError) as e:
            logger.warning(f"{name} raised {type(e).__name__}: {e}")
            passed, detail = False, f"{type(e).__name__}: {e}"
        seconds = time.perf_counter() - began
        logger.info(f"{name}: {'pass' if passed else 'FAIL'} ({seconds:.1f}s) {detail}")
        results.append(
            CriterionResult(
                name=name, passed=bool(passed), detail=detail, seconds=seconds
            )
        )
    return VerifyReport(
        suite=suite,
        passed=all(r.passed for r in results),
        criteria=results,
        wall_time=time.perf_counter() - start,
    )
