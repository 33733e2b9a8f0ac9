"""Fibonacci trace map, its invariant cubic surfaces and the Anosov cocycle.

The trace map T(x, y, z) = (2xy - z, x, y) preserves the Fricke-Vogt invariant
I(x, y, z) = x^2 + y^2 + z^2 - 2xyz - 1, whose level sets I = V^2/4 are the
surfaces S_V. T^2 has a fixed point p_V = (t_V, t_V/(2t_V - 1), t_V) on S_V. Near
it the surface is the graph y = y_V(x, z) of the lower square-root branch, and
all derivatives of y_V and of f_V = T^2 in that chart are written out in closed
form below. Finite differences are only used to check them.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from loguru import logger
from scipy import optimize

from fibospec.errors import DegenerateSpectrum, NoRootInBracket, OffChart
from fibospec.models import CocycleValue, SurfaceParams

# No typing imports needed here due to Python 3.10+ syntax

SQRT5 = math.sqrt(5.0)
LAMBDA_0 = (7.0 + 3.0 * SQRT5) / 2.0
MU_0 = (7.0 - 3.0 * SQRT5) / 2.0
# Limit of cocycle * V^2 implied by the degree-3 Taylor data at p_V
COCYCLE_LIMIT = -(200.0 + 40.0 * SQRT5) / 3.0
# Value printed alongside the Taylor data; kept for reports only
PRINTED_COCYCLE_LIMIT = -(140.0 + 76.0 * SQRT5) / 3.0

T_BRACKET = (1.0 + 1e-14, 1.5)

# Index tuples of the chart partials, x = 0 and z = 1
PARTIAL_KEYS = {
    "x": (0,),
    "z": (1,),
    "xx": (0, 0),
    "xz": (0, 1),
    "zz": (1, 1),
    "xxx": (0, 0, 0),
    "xxz": (0, 0, 1),
    "xzz": (0, 1, 1),
    "zzz": (1, 1, 1),
}


@dataclass(frozen=True)
class TraceMapPoint:
    """A point of R^3; coordinates are half-traces of transfer matrices."""

    x: float
    y: float
    z: float

    @classmethod
    def from_energy(cls, E: float, V: float) -> "TraceMapPoint":
        """Initial condition ((E - V)/2, E/2, 1) on the line l_V."""
        return cls((E - V) / 2.0, E / 2.0, 1.0)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "TraceMapPoint":
        """Build a point from a length-3 array."""
        return cls(float(values[0]), float(values[1]), float(values[2]))

    def as_array(self) -> np.ndarray:
        """Coordinates as a numpy array."""
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class SurfaceChartPoint:
    """A point of S_V in the (x, z) chart, with its y coordinate."""

    u_x: float
    u_z: float
    y_val: float

    def ambient(self) -> TraceMapPoint:
        """The corresponding point of R^3."""
        return TraceMapPoint(self.u_x, self.y_val, self.u_z)


@dataclass
class LinearizationData:
    """Jacobian, eigenbasis and Taylor data of f_V at (t_V, t_V).

    ``d1``, ``d2`` and ``d3`` are the derivative tensors of the adapted map
    f~_V(X, Y) = P^-1 (f_V(p + P(X, Y)) - p) at the origin, indexed as
    ``d2[component, i, j]`` with component 0 = F, 1 = G and X = 0, Y = 1.
    """

    V: float
    t_V: float
    J: np.ndarray
    lambda_V: float
    mu_V: float
    P: np.ndarray
    P_inv: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    chart_partials: dict[str, float] = field(default_factory=dict)

    def partial(self, component: str, axes: str) -> float:
        """Named partial such as ``partial("G", "XYY")``."""
        index = 0 if component == "F" else 1
        idx = tuple(0 if a == "X" else 1 for a in axes)
        tensor = {1: self.d1, 2: self.d2, 3: self.d3}[len(idx)]
        return float(tensor[(index, *idx)])

    @property
    def taylor(self) -> dict[str, float]:
        """Taylor coefficients of F and G up to total degree 3."""
        coefficients: dict[str, float] = {}
        for comp in ("F", "G"):
            for axes in ("X", "Y", "XX", "XY", "YY", "XXX", "XXY", "XYY", "YYY"):
                multiplicity = math.factorial(axes.count("X")) * math.factorial(
                    axes.count("Y")
                )
                coefficients[f"{comp}_{axes}"] = (
                    self.partial(comp, axes) / multiplicity
                )
        return coefficients


def apply_T(p: TraceMapPoint) -> TraceMapPoint:
    """Apply the trace map once."""
    return TraceMapPoint(2.0 * p.x * p.y - p.z, p.x, p.y)


def apply_T_inverse(p: TraceMapPoint) -> TraceMapPoint:
    """Apply the inverse trace map once."""
    return TraceMapPoint(p.y, p.z, 2.0 * p.y * p.z - p.x)


def apply_T2(p: TraceMapPoint) -> TraceMapPoint:
    """T composed with itself; the third coordinate of the image is x."""
    return apply_T(apply_T(p))


def fricke_vogt(p: TraceMapPoint) -> float:
    """Fricke-Vogt invariant x^2 + y^2 + z^2 - 2xyz - 1."""
    return p.x * p.x + p.y * p.y + p.z * p.z - 2.0 * p.x * p.y * p.z - 1.0


def fricke_vogt_drift(
    p: TraceMapPoint, n_iter: int, cycle: list[TraceMapPoint] | None = None
) -> float:
    """Largest change of the invariant along n_iter iterates of p.

    Args:
        p: Starting point
        n_iter: Number of iterates
        cycle: Optional periodic cycle starting at p. When given, every step maps
            the stored cycle point instead of the previous image, so the result
            measures per-step roundoff rather than the divergence of nearby
            orbits on a hyperbolic set.

    Returns:
        max_k |I(T^k p) - I(p)|
    """
    level = fricke_vogt(p)
    drift = 0.0
    current = p
    for k in range(n_iter):
        if cycle:
            current = apply_T(cycle[k % len(cycle)])
        else:
            current = apply_T(current)
        drift = max(drift, abs(fricke_vogt(current) - level))
    return drift


# Vectorized maps on arrays of shape (..., 3), used by the hyperbolic module


def trace_map_array(points: np.ndarray) -> np.ndarray:
    """T applied to every row of an (..., 3) array."""
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    return np.stack([2.0 * x * y - z, x, y], axis=-1)


def trace_map_inverse_array(points: np.ndarray) -> np.ndarray:
    """T^-1 applied to every row of an (..., 3) array."""
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    return np.stack([y, z, 2.0 * y * z - x], axis=-1)


def trace_map_jacobian(points: np.ndarray) -> np.ndarray:
    """Jacobian of T at each point, shape (..., 3, 3)."""
    x, y = points[..., 0], points[..., 1]
    jac = np.zeros(points.shape[:-1] + (3, 3))
    jac[..., 0, 0] = 2.0 * y
    jac[..., 0, 1] = 2.0 * x
    jac[..., 0, 2] = -1.0
    jac[..., 1, 0] = 1.0
    jac[..., 2, 1] = 1.0
    return jac


def trace_map_inverse_jacobian(points: np.ndarray) -> np.ndarray:
    """Jacobian of T^-1 at each point, shape (..., 3, 3)."""
    y, z = points[..., 1], points[..., 2]
    jac = np.zeros(points.shape[:-1] + (3, 3))
    jac[..., 0, 1] = 1.0
    jac[..., 1, 2] = 1.0
    jac[..., 2, 0] = -1.0
    jac[..., 2, 1] = 2.0 * z
    jac[..., 2, 2] = 2.0 * y
    return jac


def fricke_vogt_array(points: np.ndarray) -> np.ndarray:
    """Invariant evaluated row-wise."""
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    return x * x + y * y + z * z - 2.0 * x * y * z - 1.0


def fricke_vogt_gradient(points: np.ndarray) -> np.ndarray:
    """Gradient of the invariant, the normal of S_V."""
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    return np.stack(
        [2.0 * x - 2.0 * y * z, 2.0 * y - 2.0 * x * z, 2.0 * z - 2.0 * x * y],
        axis=-1,
    )


def periodic_point(t: float) -> TraceMapPoint:
    """Point (t, t/(2t - 1), t) of the 2-periodic curve of T."""
    return TraceMapPoint(t, t / (2.0 * t - 1.0), t)


def _quartic_residual(t: float, V: float) -> float:
    return (t - 1.0) ** 2 * (4.0 * t * t + 2.0 * t - 1.0) / (
        2.0 * t - 1.0
    ) ** 2 - V * V / 4.0


def _half_relation(t: float, V: float) -> float:
    # Square root of the quartic relation; monotone and linear near t = 1
    return (t - 1.0) * math.sqrt(4.0 * t * t + 2.0 * t - 1.0) / (
        2.0 * t - 1.0
    ) - V / 2.0


def _half_relation_prime(t: float) -> float:
    s = math.sqrt(4.0 * t * t + 2.0 * t - 1.0)
    ds = (4.0 * t + 1.0) / s
    num = (s + (t - 1.0) * ds) * (2.0 * t - 1.0) - 2.0 * (t - 1.0) * s
    return num / (2.0 * t - 1.0) ** 2


def solve_t_V(V: float, tol: float = 1e-14) -> SurfaceParams:
    """Solve for the period-2 parameter t_V in (1, 1.5).

    Args:
        V: Coupling constant, 0 < V <= 1
        tol: Bisection tolerance on t

    Returns:
        SurfaceParams with t_V and the residual of the quartic relation

    Raises:
        ValueError: If V is outside (0, 1] or tol is not positive
        NoRootInBracket: If the relation does not change sign on the bracket
    """
    if not 0.0 < V <= 1.0:
        raise ValueError(f"V must lie in (0, 1], got {V}")
    if tol <= 0:
        raise ValueError("tol must be positive")

    lo, hi = T_BRACKET
    f_lo, f_hi = _half_relation(lo, V), _half_relation(hi, V)
    if f_lo * f_hi > 0:
        raise NoRootInBracket(f"No sign change for t_V on {T_BRACKET} at V={V}")

    t = optimize.bisect(_half_relation, lo, hi, args=(V,), xtol=tol, maxiter=200)
    # One Newton polish
    t = t - _half_relation(t, V) / _half_relation_prime(t)
    residual = abs(_quartic_residual(t, V))
    logger.debug(f"t_V({V}) = {t!r}, residual {residual:.3e}")
    return SurfaceParams(
        V=V, t_V=t, invariant_level=1.0 + V * V / 4.0, residual=residual
    )


def chart_y(V: float, u_x: float, u_z: float) -> SurfaceChartPoint:
    """Lower-branch chart y = xz - sqrt((x^2 - 1)(z^2 - 1) + V^2/4).

    Raises:
        OffChart: If the radicand is negative
    """
    radicand = (u_x * u_x - 1.0) * (u_z * u_z - 1.0) + V * V / 4.0
    if radicand < 0:
        raise OffChart(f"Negative radicand {radicand:.3e} at ({u_x}, {u_z})")
    return SurfaceChartPoint(u_x, u_z, u_x * u_z - math.sqrt(radicand))


def chart_partials(V: float, x: float, z: float) -> dict[str, float]:
    """Closed-form partials of y_V up to order 3 at (x, z).

    Writing R = (x^2 - 1)(z^2 - 1) + V^2/4 and s = sqrt(R), the partials of s
    follow from those of R by the chain rule; y = xz - s.
    """
    a = x * x - 1.0
    b = z * z - 1.0
    radicand = a * b + V * V / 4.0
    if radicand <= 0:
        raise OffChart(f"Radicand {radicand:.3e} not positive at ({x}, {z})")
    s = math.sqrt(radicand)

    r1 = [2.0 * x * b, 2.0 * z * a]
    r2 = [[2.0 * b, 4.0 * x * z], [4.0 * x * z, 2.0 * a]]

    def r3(i: int, j: int, k: int) -> float:
        n_x = (i, j, k).count(0)
        # R_xxz = 4z, R_xzz = 4x, pure third partials vanish
        if n_x == 2:
            return 4.0 * z
        if n_x == 1:
            return 4.0 * x
        return 0.0

    def s1(i: int) -> float:
        return r1[i] / (2.0 * s)

    def s2(i: int, j: int) -> float:
        return r2[i][j] / (2.0 * s) - r1[i] * r1[j] / (4.0 * s**3)

    def s3(i: int, j: int, k: int) -> float:
        return (
            r3(i, j, k) / (2.0 * s)
            - (r2[i][j] * r1[k] + r2[i][k] * r1[j] + r2[j][k] * r1[i]) / (4.0 * s**3)
            + 3.0 * r1[i] * r1[j] * r1[k] / (8.0 * s**5)
        )

    return {
        "y": x * z - s,
        "x": z - s1(0),
        "z": x - s1(1),
        "xx": -s2(0, 0),
        "xz": 1.0 - s2(0, 1),
        "zz": -s2(1, 1),
        "xxx": -s3(0, 0, 0),
        "xxz": -s3(0, 0, 1),
        "xzz": -s3(0, 1, 1),
        "zzz": -s3(1, 1, 1),
    }


def chart_derivatives(V: float, order: int = 3) -> dict[str, float]:
    """Partials of y_V at the diagonal point (t_V, t_V).

    Args:
        V: Coupling, 0 < V <= 0.5
        order: Highest derivative order to return (1 to 3)

    Returns:
        Mapping from partial name ("y", "x", "xz", "xxz", ...) to value
    """
    if not 0.0 < V <= 0.5:
        raise ValueError(f"V must lie in (0, 0.5], got {V}")
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    t = solve_t_V(V).t_V
    partials = chart_partials(V, t, t)
    return {k: v for k, v in partials.items() if k == "y" or len(k) <= order}


def chart_f(V: float, x: float, z: float) -> dict[str, float]:
    """First component F of f_V = T^2 in the chart, with its partials.

    f_V(x, z) = ((4x^2 - 1) y_V(x, z) - 2xz, x); the second component is x.
    """
    y = chart_partials(V, x, z)
    u = 4.0 * x * x - 1.0
    return {
        "F": u * y["y"] - 2.0 * x * z,
        "x": 8.0 * x * y["y"] + u * y["x"] - 2.0 * z,
        "z": u * y["z"] - 2.0 * x,
        "xx": 8.0 * y["y"] + 16.0 * x * y["x"] + u * y["xx"],
        "xz": 8.0 * x * y["z"] + u * y["xz"] - 2.0,
        "zz": u * y["zz"],
        "xxx": 24.0 * y["x"] + 24.0 * x * y["xx"] + u * y["xxx"],
        "xxz": 8.0 * y["z"] + 16.0 * x * y["xz"] + u * y["xxz"],
        "xzz": 8.0 * x * y["zz"] + u * y["xzz"],
        "zzz": u * y["zzz"],
    }


def partials_fd_error(V: float, h: float | None = None) -> float:
    """Largest relative gap between closed-form and finite-difference partials.

    Each partial of order k is compared with a central difference of the
    closed-form partial of order k - 1, at step h (default V * 1e-3).
    """
    t = solve_t_V(V).t_V
    h = V * 1e-3 if h is None else h
    base = chart_f(V, t, t)
    shifted = {
        (0, +1): chart_f(V, t + h, t),
        (0, -1): chart_f(V, t - h, t),
        (1, +1): chart_f(V, t, t + h),
        (1, -1): chart_f(V, t, t - h),
    }
    worst = 0.0
    for key, axes in PARTIAL_KEYS.items():
        lower = key[:-1] if len(key) > 1 else "F"
        lower = "".join(sorted(lower)) if lower != "F" else "F"
        last = axes[-1]
        approx = (shifted[(last, +1)][lower] - shifted[(last, -1)][lower]) / (2.0 * h)
        scale = max(abs(base[key]), 1.0)
        worst = max(worst, abs(approx - base[key]) / scale)
    return worst


def _chart_tensors(V: float, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Derivative tensors of f_V at (t, t): shapes (2,2), (2,2,2), (2,2,2,2)."""
    f = chart_f(V, t, t)
    d1 = np.array([[f["x"], f["z"]], [1.0, 0.0]])
    d2 = np.zeros((2, 2, 2))
    d3 = np.zeros((2, 2, 2, 2))
    names = "xz"
    for i in range(2):
        for j in range(2):
            d2[0, i, j] = f["".join(sorted(names[i] + names[j]))]
            for k in range(2):
                d3[0, i, j, k] = f["".join(sorted(names[i] + names[j] + names[k]))]
    return d1, d2, d3


def linearize_at_pV(V: float) -> LinearizationData:
    """Jacobian, eigenbasis and degree-3 Taylor data of f_V at p_V.

    Args:
        V: Coupling, 0 < V <= 0.5

    Returns:
        LinearizationData in the P_V eigenbasis

    Raises:
        DegenerateSpectrum: If the two eigenvalues coincide to tolerance
    """
    if not 0.0 < V <= 0.5:
        raise ValueError(f"V must lie in (0, 0.5], got {V}")
    t = solve_t_V(V).t_V
    J, H, K = _chart_tensors(V, t)

    trace = J[0, 0] + J[1, 1]
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    disc = trace * trace - 4.0 * det
    if disc <= 1e-12 * max(1.0, trace * trace):
        raise DegenerateSpectrum(f"Discriminant {disc:.3e} at V={V}")
    lam = (trace + math.sqrt(disc)) / 2.0
    mu = det / lam
    if not lam > 1.0 > mu > 0.0:
        raise DegenerateSpectrum(f"Eigenvalues {lam}, {mu} not hyperbolic at V={V}")

    # Eigenvectors of [[a, b], [1, 0]] are (lambda, 1) and (mu, 1)
    P = np.array([[lam, mu], [1.0, 1.0]])
    P_inv = np.linalg.inv(P)
    d1 = P_inv @ J @ P
    d2 = np.einsum("ij,jkl,ka,lb->iab", P_inv, H, P, P)
    d3 = np.einsum("ij,jklm,ka,lb,mc->iabc", P_inv, K, P, P, P)

    return LinearizationData(
        V=V,
        t_V=t,
        J=J,
        lambda_V=lam,
        mu_V=mu,
        P=P,
        P_inv=P_inv,
        d1=d1,
        d2=d2,
        d3=d3,
        chart_partials=chart_partials(V, t, t),
    )


def cocycle_from_taylor(lam: float, mu: float, d2: np.ndarray, d3: np.ndarray) -> float:
    """Four-term Anosov cocycle of an adapted map with the given Taylor data."""
    F_XY, F_YY = d2[0, 0, 1], d2[0, 1, 1]
    G_XX, G_XY, G_YY = d2[1, 0, 0], d2[1, 0, 1], d2[1, 1, 1]
    G_XYY = d3[1, 0, 1, 1]
    return float(
        G_XYY / mu
        - F_XY * G_XY / (lam - 1.0)
        - G_XX * F_YY / (1.0 - mu**3)
        - G_XY * G_YY / mu**2
    )


def anosov_cocycle(V: float) -> CocycleValue:
    """Anosov cocycle of T^2 at p_V in the P_V-adapted coordinates.

    Args:
        V: Coupling, 0 < V <= 0.2

    Returns:
        CocycleValue with the constituent partials
    """
    if not 0.0 < V <= 0.2:
        raise ValueError(f"V must lie in (0, 0.2], got {V}")
    lin = linearize_at_pV(V)
    value = cocycle_from_taylor(lin.lambda_V, lin.mu_V, lin.d2, lin.d3)
    partials = {
        name: lin.partial(name[0], name[2:])
        for name in ("G_XYY", "F_XY", "G_XY", "G_XX", "F_YY", "G_YY")
    }
    logger.debug(f"cocycle(V={V}) = {value:.6e}")
    return CocycleValue(value=value, V=V, partials=partials)


def cocycle_limit_fit(V_grid: list[float]) -> tuple[float, float, float]:
    """Regress cocycle * V^2 on V.

    Returns:
        (intercept, slope, max residual) of the least-squares line
    """
    if len(V_grid) < 3:
        raise ValueError("Need at least three couplings for the fit")
    Vs = np.asarray(V_grid, dtype=float)
    scaled = np.array([anosov_cocycle(float(V)).scaled for V in Vs])
    slope, intercept = np.polyfit(Vs, scaled, 1)
    residual = float(np.max(np.abs(scaled - (intercept + slope * Vs))))
    return float(intercept), float(slope), residual
