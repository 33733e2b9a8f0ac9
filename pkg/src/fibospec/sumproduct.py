"""Exponential sums and non-concentration counts over regular words.

A block A = (a_0, ..., a_k) of regular words fixes k slots. Slot j holds the
regular words b with a_{j-1} -> b -> a_j, meaning b starts with the last
symbol of a_{j-1} and ends with the first symbol of a_j, and gives each of
them the value zeta_j(b) = e^{2 lambda n} |g'_{a'_{j-1} b}(x_{a_j})|, where
a' drops the last symbol of a and x_a is the attach point of a.
"""

import math
from dataclasses import dataclass

import numpy as np
from loguru import logger

from fibospec.config import Budgets
from fibospec.errors import BudgetExceeded, EmptySlot, InsufficientEnvelope
from fibospec.hyperbolic import qnl_from_values
from fibospec.models import ExpSumResult, NcCounter, QnlHistogram
from fibospec.parallel import task_rng
from fibospec.thermo import (
    MarkovSystem,
    RegularWords,
    ThermoConstants,
    pull_back,
    regular_words,
    thermo_constants,
    word_quadrature,
)

# No typing imports needed here due to Python 3.10+ syntax

DEFAULT_K = 3
DEFAULT_EPS = 0.1
ETA_POINTS = 32
# Stand-in for the Holder exponent in the window constant
HOLDER_STANDIN = 0.5
CHUNK_TERMS = 1 << 16


def default_eps0(sys: MarkovSystem) -> float:
    """Window constant alpha |ln kappa| / 8 with alpha = 0.5."""
    return HOLDER_STANDIN * abs(math.log(sys.kappa)) / 8.0


def eta_grid(n: int, eps0: float, size: int = ETA_POINTS) -> np.ndarray:
    """Log-spaced frequencies in J_n = [e^{eps0 n / 2}, e^{2 eps0 n}]."""
    if eps0 <= 0 or n < 1 or size < 1:
        raise ValueError("eps0, n and size must be positive")
    return np.geomspace(math.exp(eps0 * n / 2.0), math.exp(2.0 * eps0 * n), size)


@dataclass
class ExpSumConfig:
    """Word length, number of factors and the frequency window."""

    n: int
    k: int
    eps0: float
    eta_grid: np.ndarray

    @classmethod
    def for_system(
        cls, sys: MarkovSystem, n: int, k: int = DEFAULT_K, eps0: float | None = None
    ) -> "ExpSumConfig":
        eps0 = eps0 if eps0 is not None else default_eps0(sys)
        return cls(n=n, k=k, eps0=eps0, eta_grid=eta_grid(n, eps0))

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")
        lo, hi = math.exp(self.eps0 * self.n / 2.0), math.exp(2.0 * self.eps0 * self.n)
        eta = np.abs(np.asarray(self.eta_grid, dtype=float))
        low, high = lo * (1 - 1e-12), hi * (1 + 1e-12)
        if len(eta) == 0 or eta.min() < low or eta.max() > high:
            raise ValueError(f"eta_grid must lie in [{lo:.4g}, {hi:.4g}]")


@dataclass
class ZetaTable:
    """Slot sets and zeta values for one block."""

    system: str
    n: int
    eps: float
    block: np.ndarray
    slots: list[np.ndarray]
    values: list[np.ndarray]
    lyapunov: float

    @property
    def k(self) -> int:
        return len(self.slots)

    @property
    def sizes(self) -> list[int]:
        return [len(v) for v in self.values]

    @property
    def log_spread(self) -> float:
        """Largest |ln zeta| over all slots."""
        return float(max(np.max(np.abs(np.log(v))) for v in self.values))


def _context(
    sys: MarkovSystem,
    n: int,
    eps: float,
    constants: ThermoConstants | None,
    regular: RegularWords | None,
    budgets: Budgets | None,
) -> tuple[ThermoConstants, RegularWords]:
    constants = constants or thermo_constants(sys, with_bowen=False, budgets=budgets)
    regular = regular or regular_words(sys, n, eps, constants, budgets=budgets)
    return constants, regular


def build_zeta(
    sys: MarkovSystem,
    block: np.ndarray,
    n: int,
    eps: float = DEFAULT_EPS,
    constants: ThermoConstants | None = None,
    regular: RegularWords | None = None,
    budgets: Budgets | None = None,
) -> ZetaTable:
    """zeta_j(b) for every slot of the block.

    Args:
        sys: Normalized system
        block: (k + 1, n + 1) array of words a_0..a_k
        n: Word length in branches
        eps: Regular-word window

    Raises:
        EmptySlot: If no regular word fits between two neighbours of the block
    """
    block = np.asarray(block)
    if block.ndim != 2 or len(block) < 2 or block.shape[1] != n + 1:
        raise ValueError(f"block must be a (k + 1, {n + 1}) word array")
    constants, regular = _context(sys, n, eps, constants, regular, budgets)
    lam = constants.lyapunov
    attach, _, _ = pull_back(sys, block, sys.centers[block[:, -1]])

    slots, values = [], []
    for j in range(1, len(block)):
        fits = (regular.words[:, 0] == block[j - 1, -1]) & (
            regular.words[:, -1] == block[j, 0]
        )
        members = regular.words[fits]
        if len(members) == 0:
            raise EmptySlot(
                f"No regular word of length {n} joins {block[j - 1].tolist()} "
                f"to {block[j].tolist()}"
            )
        prefix = np.broadcast_to(block[j - 1, :-1], (len(members), n))
        joined = np.concatenate([prefix, members], axis=1)
        _, _, log_derivative = pull_back(sys, joined, np.full(len(members), attach[j]))
        slots.append(members)
        values.append(np.exp(log_derivative + 2.0 * lam * n))
    logger.debug(f"{sys.name} n={n}: slot sizes {[len(s) for s in slots]}")
    return ZetaTable(
        system=sys.name,
        n=n,
        eps=eps,
        block=block,
        slots=slots,
        values=values,
        lyapunov=lam,
    )


def zeta_blocks(
    sys: MarkovSystem,
    n: int,
    eps: float = DEFAULT_EPS,
    count: int = 1,
    k: int = DEFAULT_K,
    seed: int = 0,
    regular: RegularWords | None = None,
    budgets: Budgets | None = None,
    max_tries: int = 64,
) -> list[np.ndarray]:
    """count blocks of k + 1 regular words, block i drawn from stream (seed, i).

    Draws that would leave a slot empty are redrawn.

    Raises:
        EmptySlot: If a block with nonempty slots is not found in max_tries draws
    """
    _, regular = _context(sys, n, eps, None, regular, budgets)
    if len(regular) == 0:
        raise EmptySlot(f"No regular words of length {n} at eps={eps}")
    pairs = {(int(w[0]), int(w[-1])) for w in regular.words}
    blocks = []
    for i in range(count):
        rng = task_rng(seed, i)
        for _ in range(max_tries):
            picks = regular.words[rng.integers(0, len(regular), size=k + 1)]
            joins = zip(picks[:-1, -1].tolist(), picks[1:, 0].tolist())
            if all(join in pairs for join in joins):
                blocks.append(picks)
                break
        else:
            raise EmptySlot(f"No admissible block found for index {i}")
    return blocks


def phase_modulus(
    values: list[np.ndarray], eta: np.ndarray, budgets: Budgets | None = None
) -> np.ndarray:
    """|mean of exp(i eta v_1 ... v_k)| over all choices v_j in values[j].

    Terms are accumulated in a fixed chunk order, so results are reproducible.

    Raises:
        BudgetExceeded: If the number of terms passes the term budget
    """
    budgets = budgets or Budgets()
    total = math.prod(len(v) for v in values)
    if total > budgets.term_budget:
        raise BudgetExceeded(f"{total} terms exceed the budget {budgets.term_budget}")
    head = np.asarray(values[0], dtype=float)
    for v in values[1:-1]:
        head = np.outer(head, v).ravel()
    tail = np.asarray(values[-1], dtype=float) if len(values) > 1 else np.ones(1)
    eta = np.asarray(eta, dtype=float)
    sums = np.zeros(len(eta), dtype=complex)
    rows = max(1, CHUNK_TERMS // len(tail))
    for start in range(0, len(head), rows):
        products = np.outer(head[start : start + rows], tail).ravel()
        sums += np.exp(1j * np.outer(eta, products)).sum(axis=1)
    return np.minimum(np.abs(sums) / total, 1.0)


def exp_sum(
    table: ZetaTable, cfg: ExpSumConfig, budgets: Budgets | None = None
) -> ExpSumResult:
    """|prod |Z_j|^-1 sum exp(i eta zeta_1 ... zeta_k)| for every eta in the grid.

    Raises:
        BudgetExceeded: If the number of terms passes the term budget
    """
    if cfg.k != table.k:
        raise ValueError(f"Table has {table.k} slots, config asks for {cfg.k}")
    sizes = table.sizes
    eta = np.asarray(cfg.eta_grid, dtype=float)
    modulus = phase_modulus(table.values, eta, budgets)
    total = math.prod(sizes)
    return ExpSumResult(
        n=table.n,
        k=table.k,
        eta=eta.tolist(),
        modulus=modulus.tolist(),
        sup_modulus=float(modulus.max()),
        n_terms=total,
        N=float(math.exp(np.mean(np.log(sizes)))),
    )


def sup_modulus_scan(
    sys: MarkovSystem,
    ns: list[int],
    k: int = DEFAULT_K,
    eps: float = DEFAULT_EPS,
    eps0: float | None = None,
    seed: int = 0,
    budgets: Budgets | None = None,
) -> tuple[list[ExpSumResult], float]:
    """Grid-sup of the exponential sum for each n and its log-slope in n."""
    constants = thermo_constants(sys, with_bowen=False, budgets=budgets)
    results = []
    for n in ns:
        regular = regular_words(sys, n, eps, constants, budgets=budgets)
        block = zeta_blocks(sys, n, eps, 1, k, seed, regular, budgets)[0]
        table = build_zeta(sys, block, n, eps, constants, regular, budgets)
        cfg = ExpSumConfig.for_system(sys, n, k, eps0)
        results.append(exp_sum(table, cfg, budgets))
    sups = np.array([r.sup_modulus for r in results])
    slope = 0.0
    if len(ns) >= 2:
        slope = float(np.polyfit(ns, np.log(np.maximum(sups, 1e-300)), 1)[0])
    return results, slope


def nc_counter(
    table: ZetaTable, sigma_grid: list[float], gamma: float, slot: int = 0
) -> list[NcCounter]:
    """#{(b, c) in Z_j^2 : |zeta_j(b) - zeta_j(c)| <= sigma}, diagonal included."""
    values = np.sort(table.values[slot])
    size = len(values)
    counters = []
    for sigma in sigma_grid:
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        hi = np.searchsorted(values, values + sigma, side="right")
        lo = np.searchsorted(values, values - sigma, side="left")
        pairs = int(np.sum(hi - lo))
        counters.append(
            NcCounter(
                sigma=float(sigma),
                pair_count=pairs,
                bound_ratio=pairs / (size * size * sigma**gamma),
            )
        )
    return counters


def fit_nc_exponent(counters: list[NcCounter], size: int) -> float:
    """Slope of ln(pair_count / N^2) against ln sigma.

    Raises:
        InsufficientEnvelope: If fewer than three scales have a proper fraction
    """
    sigma = np.array([c.sigma for c in counters])
    fraction = np.array([c.pair_count for c in counters]) / float(size * size)
    usable = (fraction > 0) & (fraction < 1)
    if usable.sum() < 3:
        raise InsufficientEnvelope(f"Only {int(usable.sum())} scales are informative")
    slope, _ = np.polyfit(np.log(sigma[usable]), np.log(fraction[usable]), 1)
    return float(slope)


def bridge_expression(
    sys: MarkovSystem,
    a: np.ndarray,
    b: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
) -> np.ndarray:
    """S_n tau(g_a x) - S_n tau(g_a y) - S_n tau(g_b x) + S_n tau(g_b y).

    With tau = ln |F'|, S_n tau(g_a x) = -ln |g_a'(x)|. Words in a row share
    their last symbol; x and y lie in its interval.
    """
    _, _, ax = pull_back(sys, a, x)
    _, _, ay = pull_back(sys, a, y)
    _, _, bx = pull_back(sys, b, x)
    _, _, by = pull_back(sys, b, y)
    return (bx - by) - (ax - ay)


def delta_nc_bridge(
    sys: MarkovSystem,
    n: int,
    sigma_grid: list[float],
    n_samples: int = 4096,
    seed: int = 0,
    budgets: Budgets | None = None,
) -> QnlHistogram:
    """Mass profile of the four-term Birkhoff expression over random (a, b, x, y).

    a and b are drawn from the equilibrium measure on words of length n with
    a common last symbol; x and y are uniform in that symbol's interval.
    """
    quad = word_quadrature(sys, n, budgets)
    masses = quad.masses / quad.masses.sum()
    rng = task_rng(seed, 0)
    a = quad.words[rng.choice(len(masses), size=n_samples, p=masses)]
    b = np.empty_like(a)
    for symbol in np.unique(a[:, -1]):
        rows = np.flatnonzero(a[:, -1] == symbol)
        candidates = np.flatnonzero(quad.words[:, -1] == symbol)
        weights = masses[candidates] / masses[candidates].sum()
        b[rows] = quad.words[rng.choice(candidates, size=len(rows), p=weights)]
    bounds = np.asarray(sys.intervals, dtype=float)[a[:, -1]]
    lo, hi = bounds[:, 0], bounds[:, 1]
    x = rng.uniform(lo, hi)
    y = rng.uniform(lo, hi)
    values = bridge_expression(sys, a, b, x, y)
    return qnl_from_values(values, sigma_grid, seed)
