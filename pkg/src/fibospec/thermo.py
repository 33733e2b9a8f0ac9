"""Thermodynamic formalism for coded expanding interval maps.

A MarkovSystem is described by its inverse branches: g_ab maps the interval of
symbol b into the interval of symbol a whenever the transition a -> b is
allowed. Potentials are evaluated through the branches, so
``potential(a, b, x)`` is phi(g_ab(x)) for x in the interval of b.

Functions on the symbol intervals take ``(x, symbols)``. Transfer operators
act on values at Chebyshev nodes of each interval, with barycentric
interpolation in between, and the equilibrium measure is the left Perron
vector of that discretization.
"""

import math
from collections.abc import Callable
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from loguru import logger
from scipy import optimize
from scipy.interpolate import BarycentricInterpolator

from fibospec.config import Budgets
from fibospec.errors import (
    BudgetExceeded,
    InsufficientEnvelope,
    NoRootInBracket,
    NonConvergence,
)
from fibospec.models import GibbsWeight, ThermoSummary

# No typing imports needed here due to Python 3.10+ syntax

BranchMap = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
SymbolFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
DEFAULT_NODES = 40
NONLINEAR_EPS = 0.3
REGULAR_BETA = 4.0
PERRON_TOL = 1e-13


@dataclass(frozen=True)
class Word:
    """Admissible word a_1 ... a_{n+1} with its attach point g_a(center)."""

    symbols: tuple[int, ...]
    attach: float

    @property
    def n(self) -> int:
        """Number of branch steps."""
        return len(self.symbols) - 1

    @property
    def last(self) -> int:
        """The symbol b(a) whose interval g_a is defined on."""
        return self.symbols[-1]


def is_mixing(adjacency: np.ndarray) -> bool:
    """Whether some power of the transition matrix is positive."""
    step = np.asarray(adjacency) > 0
    m = len(step)
    power = step.copy()
    # Wielandt's bound on the primitivity exponent
    for _ in range((m - 1) ** 2 + 1):
        if power.all():
            return True
        power = (power.astype(int) @ step.astype(int)) > 0
    return bool(power.all())


def _chebyshev_nodes(lo: float, hi: float, count: int) -> np.ndarray:
    j = np.arange(count)
    return lo + (hi - lo) * (1.0 - np.cos(np.pi * (2 * j + 1) / (2 * count))) / 2.0


@dataclass(frozen=True, eq=False)
class MarkovSystem:
    """Expanding Markov map given by contracting inverse branches."""

    name: str
    intervals: tuple[tuple[float, float], ...]
    adjacency: np.ndarray
    branch: BranchMap
    branch_derivative: BranchMap
    potential: BranchMap | None = None
    n_nodes: int = DEFAULT_NODES
    normalized: bool = False
    # Accumulated ln(rho) removed by normalization
    log_rho: float = 0.0

    def __post_init__(self) -> None:
        adjacency = np.asarray(self.adjacency, dtype=int)
        object.__setattr__(self, "adjacency", adjacency)
        m = len(self.intervals)
        if adjacency.shape != (m, m):
            raise ValueError(f"adjacency must be {m}x{m}, got {adjacency.shape}")
        if not is_mixing(adjacency):
            raise ValueError(f"{self.name}: adjacency is not topologically mixing")
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be at least 2")
        if not self.kappa < 1.0:
            raise ValueError(f"{self.name}: branches are not contractions")

    @property
    def n_symbols(self) -> int:
        return len(self.intervals)

    @cached_property
    def transitions(self) -> list[tuple[int, int]]:
        """Allowed transitions a -> b in lexicographic order."""
        rows, cols = np.nonzero(self.adjacency)
        return [(int(a), int(b)) for a, b in zip(rows, cols)]

    @cached_property
    def nodes(self) -> np.ndarray:
        """Chebyshev nodes, one row per symbol interval."""
        return np.array(
            [_chebyshev_nodes(lo, hi, self.n_nodes) for lo, hi in self.intervals]
        )

    @cached_property
    def centers(self) -> np.ndarray:
        return np.array([(lo + hi) / 2.0 for lo, hi in self.intervals])

    @cached_property
    def kappa(self) -> float:
        """Sampled sup |g_ab'| over all branches."""
        worst = 0.0
        for a, b in self.transitions:
            lo, hi = self.intervals[b]
            x = np.linspace(lo, hi, 257)
            worst = max(worst, float(np.max(np.abs(self.branch_derivative(a, b, x)))))
        return worst

    @cached_property
    def _lagrange(self) -> list[BarycentricInterpolator]:
        return [
            BarycentricInterpolator(self.nodes[s], np.eye(self.n_nodes))
            for s in range(self.n_symbols)
        ]

    def lagrange(self, symbol: int, points: np.ndarray) -> np.ndarray:
        """Values of the Lagrange basis of a symbol's nodes at points."""
        return np.atleast_2d(self._lagrange[symbol](np.asarray(points, dtype=float)))

    def phi(self, a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Potential through the branch, zero when none is set."""
        if self.potential is None:
            return np.zeros(np.broadcast(a, b, x).shape)
        return np.asarray(self.potential(a, b, x), dtype=float)

    def tau(self, a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        """ln|F'| at g_ab(x), that is -ln|g_ab'(x)|."""
        return -np.log(np.abs(self.branch_derivative(a, b, x)))

    def with_potential(self, potential: BranchMap | None) -> "MarkovSystem":
        """Same dynamics with a new, unnormalized potential."""
        return replace(self, potential=potential, normalized=False, log_rho=0.0)

    @cached_property
    def transfer_matrix(self) -> np.ndarray:
        """Discretized transfer operator of the current potential."""
        return _transfer_matrix(self, self.potential)

    @cached_property
    def invariant_weights(self) -> np.ndarray:
        """Node weights c with nu(h) = c . h(nodes) and nu(1) = 1."""
        _, left = _perron(self.transfer_matrix.T, Budgets().power_iterations)
        return left / left.sum()


# Built-in systems


def triadic(n_nodes: int = DEFAULT_NODES) -> MarkovSystem:
    """Middle-thirds Cantor map x -> 3x on [0, 1/3] and [2/3, 1]."""
    return MarkovSystem(
        name="triadic",
        intervals=((0.0, 1.0 / 3.0), (2.0 / 3.0, 1.0)),
        adjacency=np.ones((2, 2), dtype=int),
        branch=lambda a, b, x: (np.asarray(x) + 2.0 * np.asarray(a)) / 3.0,
        branch_derivative=lambda a, b, x: np.full(np.broadcast(a, b, x).shape, 1 / 3),
        n_nodes=n_nodes,
    )


def doubling(n_nodes: int = DEFAULT_NODES) -> MarkovSystem:
    """Doubling map on [0, 1/2] and [1/2, 1]."""
    return MarkovSystem(
        name="doubling",
        intervals=((0.0, 0.5), (0.5, 1.0)),
        adjacency=np.ones((2, 2), dtype=int),
        branch=lambda a, b, x: (np.asarray(x) + np.asarray(a)) / 2.0,
        branch_derivative=lambda a, b, x: np.full(np.broadcast(a, b, x).shape, 0.5),
        n_nodes=n_nodes,
    )


def golden_mean(n_nodes: int = DEFAULT_NODES) -> MarkovSystem:
    """Constant-slope map coding the golden-mean shift (no 1 -> 1).

    The intervals are [0, 1/phi] and [1/phi, 1] and every branch is
    g_ab(x) = (x + a) / phi.
    """
    alpha = 1.0 / GOLDEN
    return MarkovSystem(
        name="golden-mean",
        intervals=((0.0, alpha), (alpha, 1.0)),
        adjacency=np.array([[1, 1], [1, 0]]),
        branch=lambda a, b, x: alpha * (np.asarray(x) + np.asarray(a)),
        branch_derivative=lambda a, b, x: np.full(np.broadcast(a, b, x).shape, alpha),
        n_nodes=n_nodes,
    )


def _cookie_cutter_inverse(x: np.ndarray, eps: float) -> np.ndarray:
    """Solve u + eps/(6 pi) (1 - cos 2 pi u) = x for u in [0, 1]."""
    x = np.asarray(x, dtype=float)
    c = eps / (6.0 * math.pi)

    def residual(u: np.ndarray, target: np.ndarray) -> np.ndarray:
        return u + c * (1.0 - np.cos(2.0 * math.pi * u)) - target

    def slope(u: np.ndarray, target: np.ndarray) -> np.ndarray:
        return 1.0 + (eps / 3.0) * np.sin(2.0 * math.pi * u)

    flat = x.ravel()
    if flat.size == 0:
        return x.copy()
    if flat.size == 1:
        root = optimize.newton(
            residual, flat[0], fprime=slope, args=(flat[0],), tol=1e-15, maxiter=50
        )
        return np.full(x.shape, float(root))
    roots = optimize.newton(
        residual, flat.copy(), fprime=slope, args=(flat,), tol=1e-15, maxiter=50
    )
    return np.asarray(roots).reshape(x.shape)


def nonlinear(eps: float = NONLINEAR_EPS, n_nodes: int = DEFAULT_NODES) -> MarkovSystem:
    """Cookie-cutter on the triadic intervals with slopes 3 + eps sin(2 pi u).

    F(y) = h(3y - 2a) on the interval of symbol a, where
    h(u) = u + eps/(6 pi) (1 - cos 2 pi u) is an increasing bijection of
    [0, 1].
    """
    if not 0.0 <= eps < 3.0:
        raise ValueError("eps must lie in [0, 3)")

    def branch(a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        a, b, x = np.broadcast_arrays(a, b, np.asarray(x, dtype=float))
        return (_cookie_cutter_inverse(x, eps) + 2.0 * a) / 3.0

    def derivative(a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        a, b, x = np.broadcast_arrays(a, b, np.asarray(x, dtype=float))
        u = _cookie_cutter_inverse(x, eps)
        return 1.0 / (3.0 + eps * np.sin(2.0 * math.pi * u))

    return MarkovSystem(
        name="nonlinear",
        intervals=((0.0, 1.0 / 3.0), (2.0 / 3.0, 1.0)),
        adjacency=np.ones((2, 2), dtype=int),
        branch=branch,
        branch_derivative=derivative,
        n_nodes=n_nodes,
    )


BUILTIN_SYSTEMS: dict[str, Callable[[], MarkovSystem]] = {
    "triadic": triadic,
    "doubling": doubling,
    "golden-mean": golden_mean,
    "nonlinear": nonlinear,
}


def builtin_system(name: str) -> MarkovSystem:
    """Look up a built-in system by name."""
    try:
        return BUILTIN_SYSTEMS[name]()
    except KeyError:
        known = ", ".join(sorted(BUILTIN_SYSTEMS))
        raise ValueError(f"Unknown system {name!r}; expected one of {known}") from None


# Transfer operators


def _piecewise(
    interpolants: list[BarycentricInterpolator], symbols: np.ndarray, x: np.ndarray
) -> np.ndarray:
    out = np.empty(x.shape)
    for s, interpolant in enumerate(interpolants):
        mask = symbols == s
        if mask.any():
            out[mask] = interpolant(x[mask])
    return out


def _transfer_matrix(sys: MarkovSystem, potential: BranchMap | None) -> np.ndarray:
    """Matrix of L_phi on node values; row (b, j) evaluates at node j of b."""
    m, k = sys.n_symbols, sys.n_nodes
    matrix = np.zeros((m * k, m * k))
    for a, b in sys.transitions:
        x = sys.nodes[b]
        y = sys.branch(a, b, x)
        if potential is None:
            weights = np.ones(k)
        else:
            weights = np.exp(potential(a, b, x))
        matrix[b * k : (b + 1) * k, a * k : (a + 1) * k] += weights[:, None] * (
            sys.lagrange(a, y)
        )
    return matrix


def _perron(matrix: np.ndarray, iterations: int) -> tuple[float, np.ndarray]:
    """Leading eigenvalue and positive eigenvector by power iteration."""
    vector = np.ones(matrix.shape[0]) / math.sqrt(matrix.shape[0])
    rho = 0.0
    for _ in range(iterations):
        image = matrix @ vector
        norm = float(np.linalg.norm(image))
        if norm == 0.0 or not math.isfinite(norm):
            break
        image /= norm
        if abs(norm - rho) <= PERRON_TOL * norm and (
            np.linalg.norm(image - vector) <= 1e-11
        ):
            return norm, image
        vector, rho = image, norm
    raise NonConvergence(f"Power iteration did not converge in {iterations} steps")


def transfer_apply(sys: MarkovSystem, h: SymbolFunction, n: int = 1) -> SymbolFunction:
    """The function L_phi^n h, evaluated lazily through the branches."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    result = h
    for _ in range(n):
        result = _transfer_step(sys, result)
    return result


def _transfer_step(sys: MarkovSystem, h: SymbolFunction) -> SymbolFunction:
    def stepped(x: np.ndarray, symbols: np.ndarray) -> np.ndarray:
        x, symbols = np.broadcast_arrays(np.asarray(x, dtype=float), symbols)
        total = np.zeros(x.shape)
        for a, b in sys.transitions:
            mask = symbols == b
            if not mask.any():
                continue
            xb = x[mask]
            y = sys.branch(a, b, xb)
            total[mask] += np.exp(sys.phi(a, b, xb)) * h(y, np.full(y.shape, a))
        return total

    return stepped


def bowen_potential(sys: MarkovSystem, t: float) -> BranchMap:
    """The potential -t tau_F, i.e. t ln|g_ab'|."""

    def potential(a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        return t * np.log(np.abs(sys.branch_derivative(a, b, x)))

    return potential


def pressure(sys: MarkovSystem, t: float, budgets: Budgets | None = None) -> float:
    """P(-t tau_F), the log of the leading eigenvalue of L_{-t tau_F}."""
    budgets = budgets or Budgets()
    rho, _ = _perron(
        _transfer_matrix(sys, bowen_potential(sys, t)), budgets.power_iterations
    )
    return math.log(rho)


def bowen_root(
    sys: MarkovSystem,
    bracket: tuple[float, float] = (0.0, 2.0),
    budgets: Budgets | None = None,
) -> float:
    """The zero of t -> P(-t tau_F) by bisection.

    Raises:
        NoRootInBracket: If the pressure has the same sign at both ends
    """
    lo, hi = bracket
    p_lo, p_hi = pressure(sys, lo, budgets), pressure(sys, hi, budgets)
    if p_lo * p_hi > 0:
        raise NoRootInBracket(
            f"{sys.name}: pressure {p_lo:.3e}, {p_hi:.3e} at {bracket} "
            "has no sign change"
        )
    root = optimize.bisect(lambda t: pressure(sys, t, budgets), lo, hi, xtol=1e-13)
    logger.debug(f"Bowen root of {sys.name}: {root:.12f}")
    return float(root)


def normalize_potential(
    sys: MarkovSystem, budgets: Budgets | None = None
) -> MarkovSystem:
    """Replace phi by phi + ln h - ln h o F - ln rho so that L(1) = 1.

    Raises:
        NonConvergence: If power iteration exhausts its budget
    """
    budgets = budgets or Budgets()
    rho, vector = _perron(sys.transfer_matrix, budgets.power_iterations)
    if vector.sum() < 0:
        vector = -vector
    values = vector.reshape(sys.n_symbols, sys.n_nodes)
    if np.any(values <= 0):
        raise NonConvergence(f"{sys.name}: leading eigenfunction is not positive")
    values = values / values.mean()
    eigenfunction = [
        BarycentricInterpolator(sys.nodes[s], values[s]) for s in range(sys.n_symbols)
    ]
    log_rho = math.log(rho)
    base = sys

    def normalized(a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        a, b, x = np.broadcast_arrays(a, b, np.asarray(x, dtype=float))
        y = base.branch(a, b, x)
        return (
            base.phi(a, b, x)
            + np.log(_piecewise(eigenfunction, a, y))
            - np.log(_piecewise(eigenfunction, b, x))
            - log_rho
        )

    logger.debug(f"Normalized {sys.name}: rho = {rho:.12f}")
    return replace(
        sys, potential=normalized, normalized=True, log_rho=sys.log_rho + log_rho
    )


# Words and cylinders


def word_array(
    sys: MarkovSystem, n: int, budgets: Budgets | None = None
) -> np.ndarray:
    """All admissible words of length n + 1, one per row, in lexicographic order.

    Raises:
        BudgetExceeded: If the count passes the configured word cap
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    budgets = budgets or Budgets()
    words = np.arange(sys.n_symbols)[:, None]
    for _ in range(n):
        rows, cols = np.nonzero(sys.adjacency[words[:, -1]])
        words = np.column_stack([words[rows], cols])
        if len(words) > budgets.word_cap:
            raise BudgetExceeded(
                f"{len(words)} words of length {words.shape[1]} exceed the cap "
                f"{budgets.word_cap}"
            )
    return words


def pull_back(
    sys: MarkovSystem, words: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Push points through the inverse branches of each word.

    Args:
        sys: The system
        words: (W, L) word array
        x: Points in the interval of each word's last symbol, shape (W,) or
            (W, P)

    Returns:
        Images g_a(x), Birkhoff sums S_n phi(g_a x) and ln|g_a'(x)|
    """
    words = np.asarray(words)
    y = np.array(x, dtype=float)
    if y.shape[0] != words.shape[0]:
        raise ValueError("x needs one row per word")
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    log_weight = np.zeros(y.shape)
    log_derivative = np.zeros(y.shape)
    for k in range(words.shape[1] - 2, -1, -1):
        a, b = words[:, k : k + 1], words[:, k + 1 : k + 2]
        log_weight += sys.phi(a, b, y)
        log_derivative += np.log(np.abs(sys.branch_derivative(a, b, y)))
        y = sys.branch(a, b, y)
    if squeeze:
        return y[:, 0], log_weight[:, 0], log_derivative[:, 0]
    return y, log_weight, log_derivative


@dataclass(frozen=True)
class WordQuadrature:
    """Depth-n quadrature for the invariant functional.

    ``weights[w, j]`` is c_j w_a(x_j) for node j of the last symbol of word w,
    and ``points[w, j]`` is g_a(x_j).
    """

    words: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    log_weight: np.ndarray
    log_derivative: np.ndarray

    @property
    def masses(self) -> np.ndarray:
        """Cylinder masses nu(U_a)."""
        return self.weights.sum(axis=1)


def word_quadrature(
    sys: MarkovSystem, n: int, budgets: Budgets | None = None
) -> WordQuadrature:
    words = word_array(sys, n, budgets)
    last = words[:, -1]
    points, log_weight, log_derivative = pull_back(sys, words, sys.nodes[last])
    c = sys.invariant_weights.reshape(sys.n_symbols, sys.n_nodes)[last]
    return WordQuadrature(
        words=words,
        points=points,
        weights=c * np.exp(log_weight),
        log_weight=log_weight,
        log_derivative=log_derivative,
    )


def enumerate_words(
    sys: MarkovSystem, n: int, budgets: Budgets | None = None
) -> list[Word]:
    """All admissible words of length n + 1 with their attach points."""
    if n < 1:
        raise ValueError("n must be at least 1")
    words = word_array(sys, n, budgets)
    attach, _, _ = pull_back(sys, words, sys.centers[words[:, -1]])
    return [
        Word(symbols=tuple(int(s) for s in row), attach=float(x))
        for row, x in zip(words, attach)
    ]


def _require_normalized(sys: MarkovSystem) -> None:
    if not sys.normalized:
        raise ValueError(f"{sys.name}: potential must be normalized first")


def equilibrium_masses(
    sys: MarkovSystem, n: int, budgets: Budgets | None = None
) -> list[GibbsWeight]:
    """Gibbs weights at the interval centres and equilibrium masses of cylinders."""
    _require_normalized(sys)
    quad = word_quadrature(sys, n, budgets)
    _, log_weight, _ = pull_back(sys, quad.words, sys.centers[quad.words[:, -1]])
    return [
        GibbsWeight(
            word=tuple(int(s) for s in row), weight=float(w), measure_mass=float(m)
        )
        for row, w, m in zip(quad.words, np.exp(log_weight), quad.masses)
    ]


def gibbs_constant(sys: MarkovSystem, n: int, budgets: Budgets | None = None) -> float:
    """Smallest C0 with C0^-1 w_a(x) <= nu(U_a) <= C0 w_a(x) over sampled x."""
    _require_normalized(sys)
    quad = word_quadrature(sys, n, budgets)
    ratio = quad.masses[:, None] / np.exp(quad.log_weight)
    return float(max(ratio.max(), (1.0 / ratio).max()))


def concatenation_constant(
    sys: MarkovSystem, n: int, budgets: Budgets | None = None
) -> float:
    """Largest deviation of nu(U_{a'b}) / (nu(U_a) nu(U_b)) from 1, as a factor.

    a' drops the last symbol of a, and b must start where a ends.
    """
    _require_normalized(sys)
    short = word_quadrature(sys, n, budgets)
    long = word_quadrature(sys, 2 * n, budgets)
    index = {tuple(row): m for row, m in zip(short.words.tolist(), short.masses)}
    worst = 1.0
    for row, mass in zip(long.words.tolist(), long.masses):
        left, right = tuple(row[: n + 1]), tuple(row[n:])
        ratio = mass / (index[left] * index[right])
        worst = max(worst, ratio, 1.0 / ratio)
    return float(worst)


def integrate(
    sys: MarkovSystem, f: SymbolFunction, depth: int = 6, budgets: Budgets | None = None
) -> float | complex:
    """nu(f) through the depth-n quadrature; f takes (x, symbols)."""
    _require_normalized(sys)
    quad = word_quadrature(sys, depth, budgets)
    first = np.broadcast_to(quad.words[:, :1], quad.points.shape)
    value = np.sum(quad.weights * f(quad.points, first))
    return complex(value) if np.iscomplexobj(value) else float(value)


# Constants


@dataclass(frozen=True)
class ThermoConstants:
    """Lyapunov exponent, dimension and pressure of a normalized system."""

    lyapunov: float
    delta: float
    pressure_fn: Callable[[float], float]
    bowen_root: float | None = None
    gibbs_constant: float | None = None

    def summary(self, system: str, ts: list[float] | None = None) -> ThermoSummary:
        """Serializable view with pressure sampled at ts."""
        ts = ts if ts is not None else [0.0, 0.5, 1.0, 1.5, 2.0]
        return ThermoSummary(
            system=system,
            lyapunov=self.lyapunov,
            delta=self.delta,
            bowen_root=self.bowen_root,
            gibbs_constant=self.gibbs_constant,
            pressure_samples=[(float(t), float(self.pressure_fn(t))) for t in ts],
        )


def thermo_constants(
    sys: MarkovSystem,
    n_quad: int = 8,
    with_bowen: bool = True,
    budgets: Budgets | None = None,
) -> ThermoConstants:
    """Lyapunov exponent and dimension by Birkhoff averages at depth n_quad.

    lambda = int tau_F dnu and delta = -(1/lambda) int phi dnu, both computed
    as (1/n) int S_n(.) dnu which is exact for an invariant nu.

    Raises:
        NonConvergence: If power iteration fails
        NoRootInBracket: If the Bowen bisection finds no sign change
    """
    _require_normalized(sys)
    if n_quad < 1:
        raise ValueError("n_quad must be at least 1")
    quad = word_quadrature(sys, n_quad, budgets)
    lyapunov = float(-np.sum(quad.weights * quad.log_derivative) / n_quad)
    mean_phi = float(np.sum(quad.weights * quad.log_weight) / n_quad)
    delta = -mean_phi / lyapunov
    root = bowen_root(sys, budgets=budgets) if with_bowen else None

    def pressure_fn(t: float) -> float:
        return pressure(sys, t, budgets)

    logger.info(f"{sys.name}: lambda={lyapunov:.10f} delta={delta:.10f}")
    return ThermoConstants(
        lyapunov=lyapunov,
        delta=delta,
        pressure_fn=pressure_fn,
        bowen_root=root,
        gibbs_constant=gibbs_constant(sys, n_quad, budgets),
    )


@dataclass(frozen=True)
class RegularWords:
    """Words whose derivative and mass sit in the epsilon window."""

    words: np.ndarray
    attach: np.ndarray
    log_derivative: np.ndarray
    masses: np.ndarray
    n: int
    eps: float
    kept_fraction: float
    discarded_mass: float

    def __len__(self) -> int:
        return len(self.words)

    def as_words(self) -> list[Word]:
        return [
            Word(symbols=tuple(int(s) for s in row), attach=float(x))
            for row, x in zip(self.words, self.attach)
        ]


def regular_words(
    sys: MarkovSystem,
    n: int,
    eps: float,
    constants: ThermoConstants | None = None,
    beta: float = REGULAR_BETA,
    budgets: Budgets | None = None,
) -> RegularWords:
    """Keep words with |g_a'| and nu(U_a) within e^{+-eps beta n} of their means.

    The derivative window is e^{-n lambda +- eps beta n}. The mass window is
    e^{-delta lambda n +- eps beta n}, widened by the Gibbs constant C0 at
    depth n.
    """
    _require_normalized(sys)
    if eps <= 0:
        raise ValueError("eps must be positive")
    constants = constants or thermo_constants(sys, with_bowen=False, budgets=budgets)
    quad = word_quadrature(sys, n, budgets)
    attach, _, log_derivative = pull_back(
        sys, quad.words, sys.centers[quad.words[:, -1]]
    )
    masses = quad.masses
    lam, delta = constants.lyapunov, constants.delta
    slack = eps * beta * n
    mass_slack = slack + math.log(gibbs_constant(sys, n, budgets))
    with np.errstate(divide="ignore"):
        log_mass = np.log(masses)
    keep = (np.abs(log_derivative + n * lam) <= slack) & (
        np.abs(log_mass + delta * lam * n) <= mass_slack
    )
    discarded = float(masses[~keep].sum())
    logger.debug(f"{sys.name} n={n} eps={eps}: kept {keep.sum()}/{len(keep)} words")
    return RegularWords(
        words=quad.words[keep],
        attach=attach[keep],
        log_derivative=log_derivative[keep],
        masses=masses[keep],
        n=n,
        eps=eps,
        kept_fraction=float(keep.mean()),
        discarded_mass=discarded,
    )


def large_deviation_rate(
    sys: MarkovSystem,
    ns: list[int],
    eps: float,
    constants: ThermoConstants | None = None,
    budgets: Budgets | None = None,
) -> tuple[float, np.ndarray]:
    """Fit discarded mass ~ e^{-delta_1 n} across word lengths.

    Returns:
        The fitted rate delta_1 and the discarded masses per n

    Raises:
        InsufficientEnvelope: If fewer than three lengths discard any mass
    """
    constants = constants or thermo_constants(sys, with_bowen=False, budgets=budgets)
    discarded = np.array(
        [
            regular_words(sys, n, eps, constants, budgets=budgets).discarded_mass
            for n in ns
        ]
    )
    positive = discarded > 0
    if positive.sum() < 3:
        raise InsufficientEnvelope(
            f"Only {int(positive.sum())} word lengths discard mass at eps={eps}"
        )
    slope, _ = np.polyfit(np.asarray(ns)[positive], np.log(discarded[positive]), 1)
    return float(-slope), discarded


def fourier_transform(
    sys: MarkovSystem,
    xi: float | np.ndarray,
    depth: int | None = None,
    budgets: Budgets | None = None,
) -> np.ndarray:
    """nu-hat(xi) = int exp(-2 pi i xi x) dnu(x).

    The default depth makes each cylinder image shorter than one oscillation
    of the largest frequency.
    """
    _require_normalized(sys)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if depth is None:
        width = max(hi - lo for lo, hi in sys.intervals)
        scale = 2.0 * math.pi * float(np.max(np.abs(xi))) * width + 1.0
        depth = max(1, math.ceil(math.log(scale) / -math.log(sys.kappa)))
    quad = word_quadrature(sys, depth, budgets)
    points, weights = quad.points.ravel(), quad.weights.ravel()
    out = np.empty(len(xi), dtype=complex)
    step = max(1, 2**22 // len(points))
    for start in range(0, len(xi), step):
        chunk = xi[start : start + step]
        out[start : start + step] = np.exp(-2j * math.pi * np.outer(chunk, points)) @ (
            weights
        )
    return out
