"""Spectra, density of states and correlations of the Fibonacci Hamiltonian.

(H u)(n) = u(n+1) + u(n-1) + V chi_[1-alpha0, 1)(n alpha0 + omega) u(n).

Spectral membership is decided with the trace recursion: E belongs to the
spectrum iff the orbit of ((E - V)/2, E/2, 1) under T stays bounded. Finite
lattices use Dirichlet truncation centred on site 0.
"""

import math
from dataclasses import dataclass

import numpy as np
from loguru import logger
from scipy import linalg, special

from fibospec.config import Budgets, EscapeParams
from fibospec.errors import BudgetExceeded, InsufficientEnvelope, TruncationTooSmall
from fibospec.models import (
    CorrelationSeries,
    DecayFit,
    DosHistogram,
    DosMethod,
    SpectrumCover,
)
from fibospec.parallel import SERIAL, ParallelMap, task_rng

# No typing imports needed here due to Python 3.10+ syntax

ALPHA0 = (math.sqrt(5.0) - 1.0) / 2.0
SAMPLES_PER_NODE = 5
# Extra trace-map steps beyond the resolution depth
DEPTH_MARGIN = 5


@dataclass(frozen=True)
class HamiltonianSpec:
    """Fibonacci Hamiltonian truncated to n_sites sites centred on 0.

    Sites are counted so that at omega = 0 the potential on sites 1..F_k
    spells the first F_k letters of the substitution word; site 0 carries no
    coupling there.
    """

    V: float
    omega: float
    n_sites: int
    alpha0: float = ALPHA0

    @property
    def center(self) -> int:
        """Array index of site 0."""
        return self.n_sites // 2

    def sites(self) -> np.ndarray:
        """Lattice sites of the truncation."""
        return np.arange(self.n_sites) - self.center

    def potential(self) -> np.ndarray:
        """Diagonal of the truncated operator."""
        return potential_on_sites(self.V, self.omega, self.sites(), self.alpha0)


@dataclass(frozen=True)
class OrbitStatus:
    """Outcome of a trace-map escape test."""

    bounded: bool
    escaped_at: int | None = None


def potential_on_sites(
    V: float, omega: float, sites: np.ndarray, alpha: float = ALPHA0
) -> np.ndarray:
    """Potential V chi_[1-alpha, 1)(n alpha + omega) on the given sites.

    Uses floor((n + 1) alpha + omega) - floor(n alpha + omega), which equals the
    indicator for 0 < alpha < 1. At omega = 0, sites 1, 2, ... read off the
    substitution word of ``fibonacci_word``.
    """
    n = np.asarray(sites, dtype=float)
    return V * (np.floor((n + 1.0) * alpha + omega) - np.floor(n * alpha + omega))


def fibonacci(k: int) -> int:
    """Period of the k-th approximant: F_-1 = 0, F_0 = 1, F_1 = 1, F_2 = 2, ..."""
    a, b = 0, 1
    for _ in range(k + 1):
        a, b = b, a + b
    return a


def fibonacci_word(k: int) -> np.ndarray:
    """First letters of the substitution word a -> ab, b -> a, with a = 1, b = 0."""
    word = "a"
    while len(word) < fibonacci(k):
        word = "".join("ab" if c == "a" else "a" for c in word)
    return np.array([1 if c == "a" else 0 for c in word[: fibonacci(k)]])


def _escape_steps(
    energies: np.ndarray, V: float, n_steps: int, radius: float, growth_steps: int
) -> np.ndarray:
    """Step at which each orbit escapes, or n_steps + 1 if it never does."""
    E = np.asarray(energies, dtype=float)
    x, y, z = (E - V) / 2.0, E / 2.0, np.ones_like(E)
    result = np.full(E.shape, n_steps + 1, dtype=int)
    active = np.ones(E.shape, dtype=bool)
    previous = np.maximum(np.abs(x), np.maximum(np.abs(y), np.abs(z)))
    growth = np.zeros(E.shape, dtype=int)
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, n_steps + 1):
            x, y, z = 2.0 * x * y - z, x, y
            current = np.maximum(np.abs(x), np.maximum(np.abs(y), np.abs(z)))
            increased = (current > previous) | ~np.isfinite(current)
            growth = np.where(increased, growth + 1, 0)
            fired = active & (
                ((current > radius) & (growth >= growth_steps)) | ~np.isfinite(current)
            )
            result[fired] = step
            active &= ~fired
            if not active.any():
                break
            # Escaped orbits are frozen so they cannot overflow further
            x = np.where(active, x, 0.0)
            y = np.where(active, y, 0.0)
            z = np.where(active, z, 0.0)
            previous = np.where(active, current, 0.0)
    return result


def trace_orbit(
    E: float, V: float, max_iter: int = 10_000, radius: float = 10.0
) -> OrbitStatus:
    """Iterate the trace recursion from ((E - V)/2, E/2, 1).

    Escape is declared when a coordinate exceeds radius and the largest
    coordinate has grown for three consecutive steps.
    """
    if radius <= 1.0 + V * V / 4.0:
        raise ValueError("radius must exceed 1 + V^2/4")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    step = int(_escape_steps(np.array([E]), V, max_iter, radius, 3)[0])
    if step > max_iter:
        return OrbitStatus(bounded=True)
    return OrbitStatus(bounded=False, escaped_at=step)


def escape_depth(V: float, resolution: float) -> int:
    """Smallest k with F_k * resolution >= 4 + 2V, the approximant level resolved."""
    k = 0
    while fibonacci(k) * resolution < 4.0 + 2.0 * V:
        k += 1
    return k


def classify_energy(
    E: float, V: float, resolution: float, escape: EscapeParams | None = None
) -> bool:
    """Whether E survives the trace-map test at the given energy resolution."""
    escape = escape or EscapeParams()
    n_steps = min(escape_depth(V, resolution) + DEPTH_MARGIN, escape.max_iter)
    step = _escape_steps(np.array([E]), V, n_steps, escape.radius, escape.growth_steps)
    return bool(step[0] > n_steps)


def spectrum_cover(
    V: float,
    resolution: float,
    escape: EscapeParams | None = None,
    budgets: Budgets | None = None,
) -> SpectrumCover:
    """Cover the spectrum by adaptive bisection of [-2 - V, 2 + V].

    A node survives when one of its sample points passes the escape test at the depth
    matched to the node width, so the tree for a finer resolution refines the
    tree for a coarser one.

    Raises:
        BudgetExceeded: If more nodes than the configured limit are visited
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    escape = escape or EscapeParams()
    budgets = budgets or Budgets()

    nodes = np.array([[-2.0 - V, 2.0 + V]])
    visited = 1
    depth = 0
    while True:
        width = nodes[0, 1] - nodes[0, 0] if len(nodes) else 0.0
        n_steps = min(escape_depth(V, width) + DEPTH_MARGIN, escape.max_iter)
        depth = n_steps
        samples = nodes[:, :1] + (nodes[:, 1:] - nodes[:, :1]) * np.linspace(
            0.0, 1.0, SAMPLES_PER_NODE
        )
        steps = _escape_steps(
            samples.ravel(), V, n_steps, escape.radius, escape.growth_steps
        ).reshape(samples.shape)
        nodes = nodes[(steps > n_steps).any(axis=1)]
        if len(nodes) == 0 or width <= resolution:
            break
        mid = 0.5 * (nodes[:, 0] + nodes[:, 1])
        children = np.empty((2 * len(nodes), 2))
        children[0::2, 0], children[0::2, 1] = nodes[:, 0], mid
        children[1::2, 0], children[1::2, 1] = mid, nodes[:, 1]
        nodes = children
        visited += len(nodes)
        if visited > budgets.node_limit:
            raise BudgetExceeded(
                f"Spectrum cover visited {visited} nodes (limit {budgets.node_limit})"
            )
        logger.debug(f"Cover level width {width / 2:.3e}: {len(nodes)} nodes")

    intervals: list[tuple[float, float]] = []
    for lo, hi in nodes:
        if intervals and lo <= intervals[-1][1]:
            intervals[-1] = (intervals[-1][0], float(hi))
        else:
            intervals.append((float(lo), float(hi)))
    logger.info(f"Spectrum cover V={V}: {len(intervals)} intervals at {resolution}")
    return SpectrumCover(
        V=V,
        resolution=resolution,
        intervals=intervals,
        escape_radius=escape.radius,
        max_iter=escape.max_iter,
        depth=depth,
    )


def half_traces(energies: np.ndarray, V: float, k: int) -> np.ndarray:
    """x_k(E) = tr(M_k)/2 for the period-F_k approximant; k >= 1.

    Orbits that overflow come back as non-finite values.
    """
    E = np.asarray(energies, dtype=float)
    x, y, z = (E - V) / 2.0, E / 2.0, np.ones_like(E)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(k - 1):
            x, y, z = 2.0 * x * y - z, x, y
    return x


def periodic_approximant_eigenvalues(
    V: float, k: int, bloch: float = 0.0
) -> np.ndarray:
    """Eigenvalues of the period-F_k approximant with Bloch phase 0 or pi.

    The unit cell repeats the first F_k potential values of the omega = 0
    sequence (sites 1..F_k), whose transfer-matrix half-trace is x_k.
    """
    q = fibonacci(k)
    if q < 3:
        raise ValueError("approximant period must be at least 3")
    diag = potential_on_sites(V, 0.0, np.arange(1, q + 1))
    matrix = np.diag(diag) + np.diag(np.ones(q - 1), 1) + np.diag(np.ones(q - 1), -1)
    corner = math.cos(bloch)
    matrix[0, -1] += corner
    matrix[-1, 0] += corner
    return linalg.eigvalsh(matrix)


def approximant_bands(V: float, k: int) -> np.ndarray:
    """Bands {|x_k| <= 1} as an (F_k, 2) array of edges."""
    edges = np.sort(
        np.concatenate(
            [
                periodic_approximant_eigenvalues(V, k, 0.0),
                periodic_approximant_eigenvalues(V, k, math.pi),
            ]
        )
    )
    return edges.reshape(-1, 2)


def phase_grid(n_phases: int, seed: int) -> np.ndarray:
    """Equispaced phases in [0, 1) shifted by a seed-derived offset."""
    offset = task_rng(seed, 0).uniform(0.0, 1.0)
    return (np.arange(n_phases) + offset) / n_phases


def _truncation_eigenvalues(V: float, omega: float, n_sites: int) -> np.ndarray:
    ham = HamiltonianSpec(V=V, omega=omega, n_sites=n_sites)
    return linalg.eigvalsh_tridiagonal(ham.potential(), np.ones(n_sites - 1))


def dos_histogram(
    V: float,
    n_sites: int,
    n_phases: int,
    bins: int,
    seed: int,
    method: DosMethod | str = DosMethod.EIGENCOUNT,
    pmap: ParallelMap = SERIAL,
) -> DosHistogram:
    """Histogram of the density of states on [-2 - V, 2 + V].

    Args:
        V: Coupling
        n_sites: Truncation length (eigencount) or minimal approximant period
        n_phases: Number of phase samples (eigencount only)
        bins: Number of equal-width bins
        seed: Seed for the phase offset
        method: eigencount or trace-map-cover
        pmap: Parallel map for the per-phase eigensolves

    Returns:
        DosHistogram with masses summing to 1
    """
    method = DosMethod(method)
    if n_sites < 64:
        raise ValueError("n_sites must be at least 64")
    if n_phases < 1 or bins < 1:
        raise ValueError("n_phases and bins must be positive")
    edges = np.linspace(-2.0 - V, 2.0 + V, bins + 1)

    if method is DosMethod.EIGENCOUNT:
        phases = phase_grid(n_phases, seed)
        spectra = pmap(lambda w: _truncation_eigenvalues(V, float(w), n_sites), phases)
        counts = np.zeros(bins)
        for eigenvalues in spectra:
            counts += np.histogram(eigenvalues, bins=edges)[0]
        masses = counts / (n_sites * n_phases)
    else:
        masses = _trace_map_masses(V, n_sites, edges)

    logger.info(f"DOS V={V} ({method.value}): {bins} bins, total {masses.sum():.12f}")
    return DosHistogram(
        V=V,
        bin_edges=edges.tolist(),
        masses=masses.tolist(),
        method=method,
        n_sites=n_sites,
        n_phases=n_phases,
        seed=seed,
    )


def _trace_map_masses(V: float, min_period: int, edges: np.ndarray) -> np.ndarray:
    """Bin masses of the approximant IDS built from accumulated Bloch phase."""
    k = 1
    while fibonacci(k) < min_period:
        k += 1
    q = fibonacci(k)
    grid = np.linspace(edges[0], edges[-1], 64 * q + 1)
    x = half_traces(grid, V, k)
    # Escaped energies lie in gaps of the approximant; skipping them keeps the
    # phase difference across each gap equal to that of its two edges
    valid = np.isfinite(x) & (np.abs(x) < 1e6)
    theta = np.arccos(np.clip(x[valid], -1.0, 1.0))
    ids = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(theta)))]) / (math.pi * q)
    cumulative = np.interp(edges, grid[valid], ids)
    masses = np.diff(cumulative)
    return masses / masses.sum()


def _center_weights(
    V: float, omega: float, n_sites: int
) -> tuple[np.ndarray, np.ndarray]:
    ham = HamiltonianSpec(V=V, omega=omega, n_sites=n_sites)
    w, v = linalg.eigh_tridiagonal(ham.potential(), np.ones(n_sites - 1))
    return w, v[ham.center, :] ** 2


def _chebyshev_correlation(
    V: float, omega: float, n_sites: int, times: np.ndarray
) -> np.ndarray:
    """<delta_0, exp(-itH) delta_0> by Chebyshev propagation with Bessel weights."""
    ham = HamiltonianSpec(V=V, omega=omega, n_sites=n_sites)
    diag = ham.potential()
    half_width = (4.0 + V) / 2.0 * 1.01
    shift = V / 2.0
    scaled_diag = (diag - shift) / half_width
    off = 1.0 / half_width

    def apply(vec: np.ndarray) -> np.ndarray:
        out = scaled_diag * vec
        out[:-1] += off * vec[1:]
        out[1:] += off * vec[:-1]
        return out

    at_max = half_width * float(times[-1])
    n_moments = int(at_max + 12.0 * at_max ** (1.0 / 3.0) + 40)
    moments = np.zeros(n_moments + 1)
    v_prev = np.zeros(n_sites)
    v_prev[ham.center] = 1.0
    v_curr = apply(v_prev)
    moments[0] = 1.0
    moments[1] = v_curr[ham.center]
    mu0, mu1 = moments[0], moments[1]
    m = 1
    while 2 * m <= n_moments:
        moments[2 * m] = 2.0 * v_curr @ v_curr - mu0
        v_next = 2.0 * apply(v_curr) - v_prev
        if 2 * m + 1 <= n_moments:
            moments[2 * m + 1] = 2.0 * v_next @ v_curr - mu1
        v_prev, v_curr = v_curr, v_next
        m += 1

    orders = np.arange(n_moments + 1)
    weights = np.where(orders == 0, 1.0, 2.0) * (-1j) ** orders * moments
    bessel = special.jv(orders[:, None], half_width * times[None, :])
    return np.exp(-1j * shift * times) * (weights @ bessel)


def phase_averaged_correlation(
    V: float,
    times: np.ndarray,
    n_sites: int,
    n_phases: int,
    seed: int,
    method: str | None = None,
    pmap: ParallelMap = SERIAL,
) -> CorrelationSeries:
    """Phase average of <delta_0, exp(-itH_{V,omega}) delta_0>.

    Args:
        V: Coupling
        times: Sorted nonnegative times
        n_sites: Truncation length, at least 4 t_max + 64
        n_phases: Number of phase samples
        seed: Seed for the phase offset
        method: "eigensolve" or "chebyshev"; defaults to eigensolve up to
            4096 sites and chebyshev above
        pmap: Parallel map over phases

    Raises:
        TruncationTooSmall: If reflections from the lattice ends could arrive
            before the last time
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0:
        raise ValueError("times must be a nonempty 1-d grid")
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be sorted and nonnegative")
    if n_phases < 1:
        raise ValueError("n_phases must be positive")
    t_max = float(times[-1])
    if n_sites < 4.0 * t_max + 64 or 2.0 * t_max > n_sites / 2 - 1:
        raise TruncationTooSmall(
            f"{n_sites} sites cannot resolve t_max={t_max}; need {4 * t_max + 64:.0f}"
        )
    method = method or ("eigensolve" if n_sites <= 4096 else "chebyshev")
    if method not in ("eigensolve", "chebyshev"):
        raise ValueError(f"Unknown correlation method: {method}")

    def one_phase(omega: float) -> np.ndarray:
        if method == "chebyshev":
            return _chebyshev_correlation(V, omega, n_sites, times)
        energies, weights = _center_weights(V, omega, n_sites)
        return np.exp(-1j * np.outer(times, energies)) @ weights

    phases = phase_grid(n_phases, seed)
    total = np.zeros(len(times), dtype=complex)
    for values in pmap(one_phase, [float(w) for w in phases]):
        total += values
    logger.info(f"Correlation V={V}: {n_phases} phases, {len(times)} times ({method})")
    return CorrelationSeries.from_arrays(
        times, total / n_phases, n_phases=n_phases, V=V
    )


def fourier_of_dos(dos: DosHistogram, times: np.ndarray) -> CorrelationSeries:
    """Sum over bins of mass * exp(-itE) at the bin centres."""
    times = np.asarray(times, dtype=float)
    values = np.exp(-1j * np.outer(times, dos.centers)) @ np.asarray(dos.masses)
    return CorrelationSeries.from_arrays(times, values, n_phases=dos.n_phases, V=dos.V)


def fit_decay(
    series: CorrelationSeries, window: tuple[float, float], n_blocks: int = 40
) -> DecayFit:
    """Fit |value| ~ C t^-rho to envelope maxima in log-spaced blocks.

    Envelope candidates are the local maxima of |value|; a monotone series
    uses all of its samples. Each block contributes its largest candidate.

    Raises:
        InsufficientEnvelope: If fewer than 20 envelope points are found
    """
    t_min, t_max = window
    if not 0 < t_min < t_max:
        raise ValueError("window must satisfy 0 < t_min < t_max")
    times = np.asarray(series.times)
    if t_min < times[0] or t_max > times[-1]:
        raise ValueError("window must lie inside the series time range")
    amplitude = np.abs(series.values)

    inside = (times >= t_min) & (times <= t_max)
    interior = np.zeros(len(times), dtype=bool)
    left, mid, right = amplitude[:-2], amplitude[1:-1], amplitude[2:]
    interior[1:-1] = (mid >= left) & (mid >= right) & ((mid > left) | (mid > right))
    candidates = interior & inside
    if candidates.sum() < 20:
        window_values = amplitude[inside]
        if np.all(np.diff(window_values) <= 0):
            candidates = inside
        else:
            raise InsufficientEnvelope(
                f"Only {int(candidates.sum())} local maxima in {window}"
            )

    edges = np.geomspace(t_min, t_max, n_blocks + 1)
    block = np.clip(np.searchsorted(edges, times, side="right") - 1, 0, n_blocks - 1)
    env_t, env_a = [], []
    for b in range(n_blocks):
        idx = np.flatnonzero(candidates & (block == b) & (amplitude > 0))
        if len(idx):
            best = idx[np.argmax(amplitude[idx])]
            env_t.append(times[best])
            env_a.append(amplitude[best])
    if len(env_t) < 20:
        raise InsufficientEnvelope(f"Only {len(env_t)} envelope points in {window}")

    log_t, log_a = np.log(env_t), np.log(env_a)
    slope, intercept = np.polyfit(log_t, log_a, 1)
    fitted = intercept + slope * log_t
    ss_res = float(np.sum((log_a - fitted) ** 2))
    ss_tot = float(np.sum((log_a - log_a.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(
        rho_hat=float(-slope),
        C_hat=float(math.exp(intercept)),
        fit_window=(t_min, t_max),
        r2=r2,
        n_points=len(env_t),
    )
