"""Hyperbolic geometry of T^2 on the surfaces S_V.

Points live in the ambient space of the map (R^3 for the trace map, the unit
square for the cat map used as a linear test system). Orbits are handled as
finite pieces: a PeriodicPoint repeats its cycle forever, a Trajectory is a
window z_-H..z_H of a true orbit together with unit seeds for the unstable
direction at z_-H and the stable direction at z_H. Brackets are found as
orbits shadowing the forward orbit of one point and the backward orbit of the
other, so they never require iterating an expanding map for long.

tau is ln |df e_u| in the Euclidean metric of the ambient space. Changing the
metric changes tau by a coboundary, which cancels in every temporal distance.
"""

import math
from abc import ABC, abstractmethod
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from loguru import logger
from scipy import optimize, sparse
from scipy.sparse.linalg import spsolve
from scipy.spatial import cKDTree

from fibospec.errors import (
    ContinuationFailed,
    IllConditioned,
    InsufficientPairs,
    ModuleError,
    NoIntersection,
    NonConvergence,
    OrbitEscaped,
    SegmentFolded,
    StepTooSmall,
)
from fibospec.models import DeltaValue, ManifoldKind, QnlHistogram
from fibospec.parallel import SERIAL, ParallelMap, task_rng
from fibospec.trace_map import (
    SurfaceChartPoint,
    fricke_vogt_array,
    fricke_vogt_gradient,
    periodic_point,
    solve_t_V,
    trace_map_array,
    trace_map_inverse_array,
    trace_map_inverse_jacobian,
    trace_map_jacobian,
)

# No typing imports needed here due to Python 3.10+ syntax

CAT_MATRIX = np.array([[2, 1], [1, 1]], dtype=np.int64)
CAT_INVERSE = np.array([[1, -1], [-1, 2]], dtype=np.int64)
GENERIC_MIX = np.array([1.0, math.sqrt(2.0) - 1.0])
GENERIC_MIX /= np.linalg.norm(GENERIC_MIX)
ALTERNATE_MIX = np.array([GENERIC_MIX[1], -GENERIC_MIX[0]])
ANGLE_MARGIN = 1e-3
DEFAULT_RADIUS = 1e-2
DEFAULT_HORIZON = 16
MAX_HORIZON = 64
FRAME_DEPTH = 40
MIN_PAIRS = 100
# Arclength steps 2^-6 .. 2^-16 along a stable leaf
DYADIC_STEPS = tuple(2.0**-k for k in range(6, 17))
# Sign changes (x, y, z) -> (-x, -y, z) etc.; T-conjugate to each other
SIGN_FLIPS = (
    np.array([-1.0, -1.0, 1.0]),
    np.array([-1.0, 1.0, -1.0]),
    np.array([1.0, -1.0, -1.0]),
)


class SurfaceMap(ABC):
    """An area-preserving surface diffeomorphism f given in ambient coordinates."""

    name: str
    dim: int
    constrained: bool

    @abstractmethod
    def forward(self, points: np.ndarray) -> np.ndarray:
        """f applied to an (..., dim) array."""

    @abstractmethod
    def backward(self, points: np.ndarray) -> np.ndarray:
        """f^-1 applied to an (..., dim) array."""

    @abstractmethod
    def jacobian(self, points: np.ndarray) -> np.ndarray:
        """df at each point, shape (..., dim, dim)."""

    @abstractmethod
    def inverse_jacobian(self, points: np.ndarray) -> np.ndarray:
        """d(f^-1) at each point, shape (..., dim, dim)."""

    @abstractmethod
    def tangent_basis(self, point: np.ndarray) -> np.ndarray:
        """Orthonormal basis of the tangent plane as a (dim, 2) array."""

    @abstractmethod
    def chart(self, point: np.ndarray) -> SurfaceChartPoint:
        """Chart coordinates of an ambient point."""

    @abstractmethod
    def chart_vector(self, vector: np.ndarray) -> np.ndarray:
        """Chart components of a tangent vector."""

    @abstractmethod
    def ambient(self, point: SurfaceChartPoint) -> np.ndarray:
        """Ambient coordinates of a chart point."""

    def displacement(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Vector from a to b."""
        return b - a

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        """Ambient distance between two points."""
        return float(np.linalg.norm(self.displacement(a, b)))

    def project(self, points: np.ndarray) -> np.ndarray:
        """Nearest points of the surface."""
        return points

    def reduce(self, points: np.ndarray) -> np.ndarray:
        """Canonical representatives of points."""
        return points

    def constraint(self, points: np.ndarray) -> np.ndarray | None:
        """Defining function of the surface, or None when there is none."""
        return None

    def constraint_gradient(self, points: np.ndarray) -> np.ndarray | None:
        """Gradient of the defining function."""
        return None

    def is_bounded(self, points: np.ndarray) -> bool:
        """Whether all points are finite and inside the working region."""
        return bool(np.all(np.isfinite(points)))


class TraceMapSystem(SurfaceMap):
    """f = T^2 restricted to S_V = {I = V^2/4}."""

    dim = 3
    constrained = True

    def __init__(self, V: float, radius: float = 10.0):
        """Initialize the system.

        Args:
            V: Coupling, 0 < V <= 1
            radius: Orbits leaving the cube of this half-width have escaped
        """
        if not 0.0 < V <= 1.0:
            raise ValueError(f"V must lie in (0, 1], got {V}")
        self.V = V
        self.level = V * V / 4.0
        self.radius = radius
        self.name = f"trace-map(V={V})"

    def forward(self, points: np.ndarray) -> np.ndarray:
        return trace_map_array(trace_map_array(points))

    def backward(self, points: np.ndarray) -> np.ndarray:
        return trace_map_inverse_array(trace_map_inverse_array(points))

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        return trace_map_jacobian(trace_map_array(points)) @ trace_map_jacobian(points)

    def inverse_jacobian(self, points: np.ndarray) -> np.ndarray:
        inner = trace_map_inverse_array(points)
        return trace_map_inverse_jacobian(inner) @ trace_map_inverse_jacobian(points)

    def constraint(self, points: np.ndarray) -> np.ndarray:
        return fricke_vogt_array(points) - self.level

    def constraint_gradient(self, points: np.ndarray) -> np.ndarray:
        return fricke_vogt_gradient(points)

    def normal(self, point: np.ndarray) -> np.ndarray:
        """Unit normal of S_V."""
        grad = fricke_vogt_gradient(point)
        return grad / np.linalg.norm(grad, axis=-1, keepdims=True)

    def project(self, points: np.ndarray) -> np.ndarray:
        projected = np.array(points, dtype=float)
        for _ in range(4):
            grad = fricke_vogt_gradient(projected)
            scale = self.constraint(projected) / np.sum(grad * grad, axis=-1)
            projected = projected - scale[..., None] * grad
        return projected

    def tangent_basis(self, point: np.ndarray) -> np.ndarray:
        n = self.normal(point)
        axis = np.eye(3)[int(np.argmin(np.abs(n)))]
        e1 = np.cross(n, axis)
        e1 /= np.linalg.norm(e1)
        return np.column_stack([e1, np.cross(n, e1)])

    def chart(self, point: np.ndarray) -> SurfaceChartPoint:
        return SurfaceChartPoint(float(point[0]), float(point[2]), float(point[1]))

    def chart_vector(self, vector: np.ndarray) -> np.ndarray:
        return np.array([vector[0], vector[2]])

    def ambient(self, point: SurfaceChartPoint) -> np.ndarray:
        return np.array([point.u_x, point.y_val, point.u_z])

    def is_bounded(self, points: np.ndarray) -> bool:
        finite = bool(np.all(np.isfinite(points)))
        return finite and float(np.max(np.abs(points))) <= self.radius


class CatMapSystem(SurfaceMap):
    """The linear automorphism [[2, 1], [1, 1]] of the unit torus.

    Its unstable derivative is the constant golden-ratio square, so every
    temporal distance and holonomy distortion vanishes.
    """

    name = "cat-map"
    dim = 2
    constrained = False

    def forward(self, points: np.ndarray) -> np.ndarray:
        return np.mod(points @ CAT_MATRIX.T, 1.0)

    def backward(self, points: np.ndarray) -> np.ndarray:
        return np.mod(points @ CAT_INVERSE.T, 1.0)

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(CAT_MATRIX.astype(float), points.shape + (2,)).copy()

    def inverse_jacobian(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(CAT_INVERSE.astype(float), points.shape + (2,)).copy()

    def displacement(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d = b - a
        return d - np.round(d)

    def reduce(self, points: np.ndarray) -> np.ndarray:
        return np.mod(points, 1.0)

    def tangent_basis(self, point: np.ndarray) -> np.ndarray:
        return np.eye(2)

    def chart(self, point: np.ndarray) -> SurfaceChartPoint:
        # The torus is its own chart; the y slot is unused
        return SurfaceChartPoint(float(point[0]), float(point[1]), 0.0)

    def chart_vector(self, vector: np.ndarray) -> np.ndarray:
        return np.array(vector[:2])

    def ambient(self, point: SurfaceChartPoint) -> np.ndarray:
        return np.array([point.u_x, point.u_z])


def _unit(vector: np.ndarray) -> np.ndarray:
    return vector / np.linalg.norm(vector)


def _sin_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Sine of the angle between two unit vectors, insensitive to orientation."""
    return float(np.linalg.norm(a - np.dot(a, b) * b))


def _oriented(vector: np.ndarray) -> np.ndarray:
    # Largest component positive
    return vector if vector[int(np.argmax(np.abs(vector)))] >= 0 else -vector


def _seed(system: SurfaceMap, point: np.ndarray, mix: np.ndarray) -> np.ndarray:
    return system.tangent_basis(point) @ mix


def _dual_rows(
    system: SurfaceMap, point: np.ndarray, e_u: np.ndarray, e_s: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Rows extracting the e_u and e_s components of a vector at point."""
    columns = [e_u, e_s]
    if isinstance(system, TraceMapSystem):
        columns.append(system.normal(point))
    dual = np.linalg.inv(np.column_stack(columns))
    return dual[0], dual[1]


def _push_forward(
    jacobians: np.ndarray, seed: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Unit images of seed along an orbit and the log-stretch at each step."""
    dirs = np.empty((len(jacobians), len(seed)))
    logs = np.empty(len(jacobians))
    v = _unit(seed)
    for k, jac in enumerate(jacobians):
        dirs[k] = v
        w = jac @ v
        logs[k] = math.log(np.linalg.norm(w))
        v = w / math.exp(logs[k])
    return dirs, logs


def _pull_back(
    jacobians: np.ndarray, inverse_jacobians: np.ndarray, seed: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Stable directions from a seed at the last point, and ln |df e_s|."""
    count = len(jacobians)
    dirs = np.empty((count, len(seed)))
    dirs[-1] = _unit(seed)
    for k in range(count - 2, -1, -1):
        dirs[k] = _unit(inverse_jacobians[k + 1] @ dirs[k + 1])
    logs = np.log(np.linalg.norm(np.einsum("kij,kj->ki", jacobians, dirs), axis=1))
    return dirs, logs


@dataclass
class HyperbolicFrame:
    """Splitting of the tangent plane at a point of the hyperbolic set.

    ``residual`` is the invariance residual: the sine of the angle between
    df e and the direction estimated at the image point (the cycle image for
    periodic points), the larger of the two sides. ``seed_spread`` is the sine
    of the angle between estimates grown from independent seeds.
    ``expansion`` and ``contraction`` are ln |df e_u| and ln |df e_s| there.
    """

    point: SurfaceChartPoint
    e_u: np.ndarray
    e_s: np.ndarray
    residual: float
    seed_spread: float
    expansion: float
    contraction: float
    ambient: np.ndarray = field(repr=False)
    tangent_u: np.ndarray = field(repr=False)
    tangent_s: np.ndarray = field(repr=False)

    @property
    def angle(self) -> float:
        """Sine of the angle between the two directions."""
        return _sin_angle(self.tangent_u, self.tangent_s)


def _make_frame(
    system: SurfaceMap,
    point: np.ndarray,
    tangent_u: np.ndarray,
    tangent_s: np.ndarray,
    residual: float,
    seed_spread: float,
    margin: float,
) -> HyperbolicFrame:
    tangent_u, tangent_s = _oriented(_unit(tangent_u)), _oriented(_unit(tangent_s))
    jac = system.jacobian(point)
    frame = HyperbolicFrame(
        point=system.chart(point),
        e_u=_oriented(_unit(system.chart_vector(tangent_u))),
        e_s=_oriented(_unit(system.chart_vector(tangent_s))),
        residual=residual,
        seed_spread=seed_spread,
        expansion=math.log(np.linalg.norm(jac @ tangent_u)),
        contraction=math.log(np.linalg.norm(jac @ tangent_s)),
        ambient=np.array(point, dtype=float),
        tangent_u=tangent_u,
        tangent_s=tangent_s,
    )
    if frame.angle < margin:
        raise IllConditioned(
            f"Splitting angle {frame.angle:.2e} below margin {margin} at {point}"
        )
    return frame


@dataclass(frozen=True, eq=False)
class PeriodicOrbit:
    """A periodic cycle of f with its invariant splitting along the cycle."""

    system: SurfaceMap
    points: np.ndarray
    e_u: np.ndarray
    e_s: np.ndarray
    tau_u: np.ndarray
    tau_s: np.ndarray
    seed_spread: float

    @classmethod
    def from_points(
        cls, system: SurfaceMap, points: np.ndarray, depth: int = FRAME_DEPTH
    ) -> "PeriodicOrbit":
        """Grow the splitting by power iteration around the cycle.

        Args:
            system: The map
            points: Cycle points in orbit order, shape (m, dim)
            depth: Number of iterates the seeds are pushed before recording
        """
        points = np.array(points, dtype=float)
        period = len(points)
        rounds = max(2, math.ceil(depth / period))
        jac = system.jacobian(points)
        inv = system.inverse_jacobian(points)

        def unstable(seed: np.ndarray) -> np.ndarray:
            v = _unit(seed)
            for _ in range(rounds):
                for k in range(period):
                    v = _unit(jac[k] @ v)
            return v

        def stable(seed: np.ndarray) -> np.ndarray:
            # inv[k] carries the tangent plane at point k to the one at k - 1
            v = _unit(seed)
            for _ in range(rounds):
                for k in range(period, 0, -1):
                    v = _unit(inv[k % period] @ v)
            return v

        start = points[0]
        u_main = unstable(_seed(system, start, GENERIC_MIX))
        u_alt = unstable(_seed(system, start, ALTERNATE_MIX))
        s_main = stable(_seed(system, start, GENERIC_MIX))
        s_alt = stable(_seed(system, start, ALTERNATE_MIX))
        spread = max(_sin_angle(u_main, u_alt), _sin_angle(s_main, s_alt))

        e_u, tau_u = _push_forward(jac, u_main)
        e_s = np.empty_like(points)
        e_s[0] = s_main
        for k in range(period - 1, 0, -1):
            e_s[k] = _unit(inv[(k + 1) % period] @ e_s[(k + 1) % period])
        tau_s = np.log(np.linalg.norm(np.einsum("kij,kj->ki", jac, e_s), axis=1))
        return cls(system, points, e_u, e_s, tau_u, tau_s, spread)

    @property
    def period(self) -> int:
        return len(self.points)

    @property
    def multiplier(self) -> float:
        """Unstable multiplier of f^period along the cycle."""
        return math.exp(float(np.sum(self.tau_u)))

    def point(self, index: int) -> "PeriodicPoint":
        return PeriodicPoint(self, index % self.period)

    def frame(self, index: int, margin: float = ANGLE_MARGIN) -> HyperbolicFrame:
        k = index % self.period
        jac = self.system.jacobian(self.points)
        u, s = self.e_u[k], self.e_s[k]
        for step in range(self.period):
            u = _unit(jac[(k + step) % self.period] @ u)
            s = _unit(jac[(k + step) % self.period] @ s)
        residual = max(_sin_angle(u, self.e_u[k]), _sin_angle(s, self.e_s[k]))
        return _make_frame(
            self.system,
            self.points[k],
            self.e_u[k],
            self.e_s[k],
            residual,
            self.seed_spread,
            margin,
        )


@dataclass(frozen=True, eq=False)
class PeriodicPoint:
    """A point of a periodic orbit."""

    orbit: PeriodicOrbit
    index: int

    @property
    def system(self) -> SurfaceMap:
        return self.orbit.system

    @property
    def base(self) -> np.ndarray:
        return self.orbit.points[self.index]

    def shifted(self, steps: int) -> "PeriodicPoint":
        """The point f^steps of this one."""
        return self.orbit.point(self.index + steps)

    def trajectory(self, horizon: int) -> "Trajectory":
        """The orbit window from f^-horizon to f^horizon."""
        period = self.orbit.period
        idx = (self.index + np.arange(-horizon, horizon + 1)) % period
        return Trajectory(
            self.system,
            self.orbit.points[idx],
            unstable_seed=self.orbit.e_u[idx[0]],
            stable_seed=self.orbit.e_s[idx[-1]],
        )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Orbit window z_-H..z_H with direction seeds at its two ends."""

    system: SurfaceMap
    points: np.ndarray
    unstable_seed: np.ndarray
    stable_seed: np.ndarray

    @classmethod
    def from_history(
        cls, system: SurfaceMap, point: np.ndarray, depth: int
    ) -> "Trajectory":
        """Iterate point depth steps each way, seeding with generic vectors.

        Raises:
            OrbitEscaped: If either half-orbit leaves the working region
        """
        past, future = [np.array(point, dtype=float)], [np.array(point, dtype=float)]
        for _ in range(depth):
            past.append(system.backward(past[-1]))
            future.append(system.forward(future[-1]))
            if not (system.is_bounded(past[-1]) and system.is_bounded(future[-1])):
                raise OrbitEscaped(f"Orbit of {point} escaped within {depth} steps")
        points = np.array(past[::-1] + future[1:])
        return cls(
            system,
            points,
            unstable_seed=_seed(system, points[0], GENERIC_MIX),
            stable_seed=_seed(system, points[-1], GENERIC_MIX),
        )

    @property
    def horizon(self) -> int:
        return (len(self.points) - 1) // 2

    @property
    def base(self) -> np.ndarray:
        return self.points[self.horizon]

    def at(self, n: int) -> np.ndarray:
        """The point f^n of the base."""
        return self.points[self.horizon + n]

    @cached_property
    def _jacobians(self) -> np.ndarray:
        return self.system.jacobian(self.points)

    @cached_property
    def unstable(self) -> tuple[np.ndarray, np.ndarray]:
        """Unstable directions and ln |df e_u| at every point."""
        return _push_forward(self._jacobians, self.unstable_seed)

    @cached_property
    def stable(self) -> tuple[np.ndarray, np.ndarray]:
        """Stable directions and ln |df e_s| at every point."""
        inverse = self.system.inverse_jacobian(self.points)
        return _pull_back(self._jacobians, inverse, self.stable_seed)

    @property
    def tau(self) -> np.ndarray:
        return self.unstable[1]

    def window(self, offset: int, horizon: int) -> "Trajectory":
        """The window of half-width horizon centred at f^offset of the base."""
        centre = self.horizon + offset
        lo, hi = centre - horizon, centre + horizon
        if horizon < 0 or lo < 0 or hi >= len(self.points):
            raise ValueError(
                f"Window {offset}+-{horizon} outside trajectory of horizon "
                f"{self.horizon}"
            )
        return Trajectory(
            self.system,
            self.points[lo : hi + 1],
            unstable_seed=self.unstable[0][lo],
            stable_seed=self.stable[0][hi],
        )

    def trajectory(self, horizon: int) -> "Trajectory":
        return self.window(0, horizon)


OrbitSource = PeriodicPoint | Trajectory


def _as_trajectory(source: OrbitSource, horizon: int) -> Trajectory:
    return source.trajectory(horizon)


def _horizon_limit(*sources: OrbitSource) -> int:
    limits = [s.horizon for s in sources if isinstance(s, Trajectory)]
    return min(limits) if limits else MAX_HORIZON


def _source_point(source: OrbitSource) -> np.ndarray:
    return np.asarray(source.base)


def _detect_cycle(
    system: SurfaceMap, point: np.ndarray, max_period: int = 12, tol: float = 1e-9
) -> PeriodicPoint | None:
    """The point as a PeriodicPoint if f^k returns it within tol for small k."""
    orbit = [np.array(point, dtype=float)]
    for _ in range(max_period):
        image = system.forward(orbit[-1])
        if not system.is_bounded(image):
            return None
        if system.distance(orbit[0], image) < tol:
            return PeriodicOrbit.from_points(system, np.array(orbit)).point(0)
        orbit.append(image)
    return None


def _trajectory_frame(
    system: SurfaceMap, traj: Trajectory, margin: float
) -> HyperbolicFrame:
    h = traj.horizon
    e_u = traj.unstable[0][h]
    e_s = traj.stable[0][h]
    alt_u, _ = _push_forward(
        traj._jacobians[: h + 2], _seed(system, traj.points[0], ALTERNATE_MIX)
    )
    inverse = system.inverse_jacobian(traj.points[h:])
    alt_s, _ = _pull_back(
        traj._jacobians[h:], inverse, _seed(system, traj.points[-1], ALTERNATE_MIX)
    )
    spread = max(_sin_angle(e_u, alt_u[h]), _sin_angle(e_s, alt_s[0]))
    # Alternate-seed directions at f(x) against df e at x
    jac = traj._jacobians[h]
    residual = max(
        _sin_angle(_unit(jac @ e_u), alt_u[h + 1]),
        _sin_angle(_unit(jac @ e_s), alt_s[1]),
    )
    return _make_frame(system, traj.base, e_u, e_s, residual, spread, margin)


def oseledets_frame(
    system: SurfaceMap,
    p: OrbitSource | SurfaceChartPoint | np.ndarray,
    depth: int = FRAME_DEPTH,
    margin: float = ANGLE_MARGIN,
) -> HyperbolicFrame:
    """Unstable and stable directions at p.

    Periodic points use their cycle, so depth can be large. Other points are
    iterated depth steps each way and raise OrbitEscaped when the numerical
    orbit leaves the bounded region, as points off the hyperbolic set do.

    Raises:
        OrbitEscaped: If the orbit of a raw point is unbounded
        IllConditioned: If the two directions are closer than margin
    """
    if depth < 1:
        raise ValueError("depth must be positive")
    if isinstance(p, PeriodicPoint):
        orbit = PeriodicOrbit.from_points(system, p.orbit.points, depth)
        return orbit.frame(p.index, margin)
    if isinstance(p, Trajectory):
        return _trajectory_frame(system, p.window(0, min(depth, p.horizon)), margin)
    point = system.ambient(p) if isinstance(p, SurfaceChartPoint) else np.asarray(p)
    cycle = _detect_cycle(system, point)
    if cycle is not None:
        logger.debug(f"{point} is periodic with period {cycle.orbit.period}")
        return oseledets_frame(system, cycle, depth, margin)
    return _trajectory_frame(
        system, Trajectory.from_history(system, point, depth), margin
    )


def birkhoff_tau(orbit: PeriodicOrbit) -> tuple[float, float]:
    """Sums of ln |df e_u| and ln |df e_s| around a cycle; they cancel."""
    return float(np.sum(orbit.tau_u)), float(np.sum(orbit.tau_s))


# Local manifolds


@dataclass
class ManifoldCurve:
    """A local stable or unstable curve through base, sampled by arclength."""

    base: HyperbolicFrame
    kind: ManifoldKind
    samples: np.ndarray
    arclength: np.ndarray
    half_length: float
    contraction_ratio: float

    @property
    def chart_samples(self) -> np.ndarray:
        """Samples in chart coordinates, shape (n, 2)."""
        if self.samples.shape[1] == 3:
            return self.samples[:, [0, 2]]
        return self.samples

    @property
    def tangent(self) -> np.ndarray:
        """Unit tangent at the base point."""
        mid = len(self.samples) // 2
        return _unit(self.samples[mid + 1] - self.samples[mid - 1])

    def point_at(self, s: float) -> np.ndarray:
        """Interpolated point at signed arclength s from the base."""
        return np.array(
            [np.interp(s, self.arclength, column) for column in self.samples.T]
        )


def trace_manifold(
    system: SurfaceMap,
    base: OrbitSource,
    kind: ManifoldKind,
    half_length: float,
    n_samples: int = 201,
    depth: int = 5,
    margin: float = ANGLE_MARGIN,
) -> ManifoldCurve:
    """Trace W^u_loc or W^s_loc of base by pushing a short seed segment.

    For the unstable curve a segment along e_u at f^-depth(base) is pushed
    forward depth steps; the stable curve is the same construction for f^-1.

    Args:
        system: The map
        base: Point whose local manifold is traced
        kind: STABLE or UNSTABLE
        half_length: Arclength on each side of the base
        n_samples: Number of output samples, odd so the base is a sample
        depth: Number of iterates used to grow the curve

    Raises:
        OrbitEscaped: If the pushed segment leaves the working region
        SegmentFolded: If the pushed segment folds or is too short
        IllConditioned: If the splitting at the base is degenerate or the
            traced curve does not contract back under the reverse map
    """
    if half_length <= 0 or n_samples < 3 or depth < 1:
        raise ValueError("half_length, n_samples and depth must be positive")
    if n_samples % 2 == 0:
        n_samples += 1
    traj = _as_trajectory(base, depth)
    frame = _trajectory_frame(system, traj, margin)
    h = traj.horizon
    if kind is ManifoldKind.UNSTABLE:
        start = traj.at(-depth)
        direction = traj.unstable[0][0]
        gain = math.exp(float(np.sum(traj.tau[:h])))
        step, reverse = system.forward, system.backward
    else:
        start = traj.at(depth)
        direction = traj.stable[0][-1]
        gain = math.exp(-float(np.sum(traj.stable[1][h:-1])))
        step, reverse = system.backward, system.forward

    fine = 8 * n_samples + 1
    seed_half = 1.5 * half_length / gain
    t = np.linspace(-seed_half, seed_half, fine)
    segment = system.project(start + t[:, None] * direction)
    for _ in range(depth):
        segment = step(segment)
        if not system.is_bounded(segment):
            raise OrbitEscaped(f"{kind.value} segment of {traj.base} escaped")
    segment = traj.base + system.displacement(traj.base, segment)

    chords = np.diff(segment, axis=0)
    if np.any(np.einsum("ij,ij->i", chords[:-1], chords[1:]) <= 0):
        raise SegmentFolded(f"{kind.value} curve at {traj.base} folds")
    arclength = np.concatenate([[0.0], np.cumsum(np.linalg.norm(chords, axis=1))])
    arclength -= arclength[fine // 2]
    if arclength[0] > -half_length or arclength[-1] < half_length:
        raise SegmentFolded(
            f"{kind.value} curve covers [{arclength[0]:.3e}, {arclength[-1]:.3e}], "
            f"need +-{half_length:.3e}"
        )

    # Exact images, not the interpolated samples, go back through the map
    inner = segment[np.abs(arclength) <= half_length]
    for _ in range(depth):
        inner = reverse(inner)
    spread = float(np.max(np.linalg.norm(system.displacement(start, inner), axis=1)))
    contraction_ratio = spread * gain / half_length
    if contraction_ratio > 4.0:
        raise IllConditioned(
            f"{kind.value} curve at {traj.base} contracts by {contraction_ratio:.2f} "
            f"of the expected rate"
        )

    grid = np.linspace(-half_length, half_length, n_samples)
    samples = np.column_stack(
        [np.interp(grid, arclength, segment[:, k]) for k in range(segment.shape[1])]
    )
    return ManifoldCurve(
        base=frame,
        kind=kind,
        samples=system.project(samples),
        arclength=grid,
        half_length=half_length,
        contraction_ratio=contraction_ratio,
    )


# Brackets


@dataclass
class BracketResult:
    """[p, q] = W^s_loc(p) & W^u_loc(q) and [q, p], with their orbits."""

    p: SurfaceChartPoint
    q: SurfaceChartPoint
    bracket_pq: SurfaceChartPoint
    bracket_qp: SurfaceChartPoint
    residual: float
    pq_orbit: Trajectory = field(repr=False)
    qp_orbit: Trajectory = field(repr=False)


def _shadow(
    system: SurfaceMap,
    forward_ref: Trajectory,
    backward_ref: Trajectory,
    radius: float,
    tol: float = 1e-12,
    max_iter: int = 30,
) -> tuple[Trajectory, float]:
    """Orbit asymptotic to forward_ref in the future and backward_ref in the past.

    Solves z_{k+1} = f(z_k) for k = -N..N-1 by Newton's method, with the
    unstable component of z_N - p_N and the stable component of
    z_-N - q_-N set to zero (and z_0 on the surface when it is constrained).

    Raises:
        NoIntersection: If Newton's method fails or lands far from the references
    """
    n = forward_ref.horizon
    dim = system.dim
    size = (2 * n + 1) * dim
    p_end, q_start = forward_ref.points[-1], backward_ref.points[0]
    row_u, _ = _dual_rows(
        system, p_end, forward_ref.unstable[0][-1], forward_ref.stable[0][-1]
    )
    _, row_s = _dual_rows(
        system, q_start, backward_ref.unstable[0][0], backward_ref.stable[0][0]
    )

    z = np.concatenate([backward_ref.points[:n], forward_ref.points[n:]])
    blocks = np.arange(2 * n)
    diag_rows = (blocks[:, None, None] * dim + np.arange(dim)[None, :, None]).repeat(
        dim, axis=2
    )
    diag_cols = (blocks[:, None, None] * dim + np.arange(dim)[None, None, :]).repeat(
        dim, axis=1
    )
    shift_rows = (blocks[:, None] * dim + np.arange(dim)[None, :]).ravel()
    extra = 2 * n * dim
    residual = math.inf
    for _ in range(max_iter):
        defects = system.displacement(z[1:], system.forward(z[:-1]))
        equations = [
            defects.ravel(),
            [row_u @ system.displacement(p_end, z[-1])],
            [row_s @ system.displacement(q_start, z[0])],
        ]
        if system.constrained:
            equations.append(system.constraint(z[n : n + 1]))
        res = np.concatenate(equations)
        if not np.all(np.isfinite(res)):
            raise NoIntersection("Shadowing iteration diverged")
        residual = float(np.max(np.abs(res)))
        if residual < tol:
            break

        jac = system.jacobian(z[:-1])
        rows = [
            diag_rows.ravel(),
            shift_rows,
            np.full(dim, extra),
            np.full(dim, extra + 1),
        ]
        cols = [
            diag_cols.ravel(),
            shift_rows + dim,
            np.arange(size - dim, size),
            np.arange(dim),
        ]
        vals = [jac.ravel(), -np.ones(len(shift_rows)), row_u, row_s]
        if system.constrained:
            rows.append(np.full(dim, extra + 2))
            cols.append(np.arange(n * dim, (n + 1) * dim))
            vals.append(system.constraint_gradient(z[n]))
        matrix = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(size, size),
        ).tocsc()
        step = spsolve(matrix, res).reshape(z.shape)
        if not np.all(np.isfinite(step)):
            raise NoIntersection("Singular shadowing system")
        z = system.reduce(z - step)
        if float(np.max(np.abs(step))) < 1e-15:
            break
    else:
        raise NoIntersection(f"Shadowing did not converge, residual {residual:.2e}")

    if residual > 1e3 * tol:
        raise NoIntersection(f"Shadowing stalled at residual {residual:.2e}")
    offset = system.distance(z[n], forward_ref.base)
    if offset > 10.0 * radius:
        raise NoIntersection(f"Bracket lands {offset:.2e} away, radius {radius:.2e}")
    orbit = Trajectory(
        system,
        z,
        unstable_seed=backward_ref.unstable[0][0],
        stable_seed=forward_ref.stable[0][-1],
    )
    return orbit, residual


def bracket(
    system: SurfaceMap,
    p: OrbitSource,
    q: OrbitSource,
    radius: float = DEFAULT_RADIUS,
    horizon: int = DEFAULT_HORIZON,
) -> BracketResult:
    """Brackets of two nearby points.

    [p, q] shares its future with p and its past with q.

    Raises:
        NoIntersection: If p and q are farther apart than radius or the
            shadowing orbit cannot be found
    """
    x, y = _source_point(p), _source_point(q)
    gap = system.distance(x, y)
    if gap > radius:
        raise NoIntersection(f"Points {gap:.3e} apart exceed radius {radius:.3e}")
    traj_p, traj_q = _as_trajectory(p, horizon), _as_trajectory(q, horizon)
    if gap == 0.0:
        return BracketResult(
            p=system.chart(x),
            q=system.chart(y),
            bracket_pq=system.chart(x),
            bracket_qp=system.chart(y),
            residual=0.0,
            pq_orbit=traj_p,
            qp_orbit=traj_q,
        )
    pq, res_pq = _shadow(system, traj_p, traj_q, radius)
    qp, res_qp = _shadow(system, traj_q, traj_p, radius)
    return BracketResult(
        p=system.chart(x),
        q=system.chart(y),
        bracket_pq=system.chart(pq.base),
        bracket_qp=system.chart(qp.base),
        residual=max(res_pq, res_qp),
        pq_orbit=pq,
        qp_orbit=qp,
    )


def _signed_offset(
    curve: np.ndarray, normal: np.ndarray, point: np.ndarray
) -> tuple[float, np.ndarray]:
    nearest = int(np.argmin(np.linalg.norm(curve - point, axis=1)))
    best = None
    for j in (nearest - 1, nearest):
        if j < 0 or j + 1 >= len(curve):
            continue
        a, b = curve[j], curve[j + 1]
        w = float(np.clip(np.dot(point - a, b - a) / np.dot(b - a, b - a), 0.0, 1.0))
        foot = a + w * (b - a)
        if best is None or np.linalg.norm(point - foot) < np.linalg.norm(point - best):
            best = foot
    return float(np.dot(point - best, normal)), best


def bracket_by_curves(
    system: SurfaceMap,
    p: OrbitSource,
    q: OrbitSource,
    half_length: float = 2 * DEFAULT_RADIUS,
    n_samples: int = 401,
) -> tuple[np.ndarray, float]:
    """[p, q] as the crossing of the traced W^s_loc(p) and W^u_loc(q).

    Returns:
        The crossing point and the gap between the two curves there

    Raises:
        NoIntersection: If the traced curves do not cross
    """
    stable = trace_manifold(system, p, ManifoldKind.STABLE, half_length, n_samples)
    unstable = trace_manifold(system, q, ManifoldKind.UNSTABLE, half_length, n_samples)
    origin = stable.base.ambient
    s_curve = origin + system.displacement(origin, stable.samples)
    u_curve = origin + system.displacement(origin, unstable.samples)
    along = _unit(s_curve[-1] - s_curve[0])
    normal = _unit(unstable.tangent - np.dot(unstable.tangent, along) * along)

    def offset(s: float) -> float:
        point = np.array([np.interp(s, unstable.arclength, c) for c in u_curve.T])
        return _signed_offset(s_curve, normal, point)[0]

    values = np.array([offset(s) for s in unstable.arclength])
    crossings = np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0)
    if len(crossings) == 0:
        raise NoIntersection("Traced stable and unstable curves do not cross")
    k = int(crossings[0])
    lo, hi = unstable.arclength[k], unstable.arclength[k + 1]
    s_star = lo if values[k] == 0 else optimize.brentq(offset, lo, hi, xtol=1e-15)
    point = np.array([np.interp(s_star, unstable.arclength, c) for c in u_curve.T])
    _, foot = _signed_offset(s_curve, normal, point)
    return system.reduce(point), float(np.linalg.norm(point - foot))


# Temporal distance


def _point_tuple(source: OrbitSource) -> tuple[float, ...]:
    return tuple(float(c) for c in _source_point(source))


def _same_point(system: SurfaceMap, p: OrbitSource, q: OrbitSource) -> bool:
    return system.distance(_source_point(p), _source_point(q)) == 0.0


def delta_terms(
    system: SurfaceMap,
    p: OrbitSource,
    q: OrbitSource,
    radius: float = DEFAULT_RADIUS,
    horizon: int = DEFAULT_HORIZON,
) -> np.ndarray:
    """T_n for n = -horizon..horizon, indexed n + horizon.

    T_n = tau(p_n) - tau([p,q]_n) - tau([q,p]_n) + tau(q_n).
    """
    result = bracket(system, p, q, radius, horizon)
    traj_p, traj_q = _as_trajectory(p, horizon), _as_trajectory(q, horizon)
    return traj_p.tau - result.pq_orbit.tau - result.qp_orbit.tau + traj_q.tau


def _tail_bound(terms: np.ndarray, n: int, scale: float, forward_only: bool) -> float:
    """Geometric tail estimate beyond |index| = n, plus a rounding floor."""
    h = (len(terms) - 1) // 2
    theta = min(0.9, math.exp(-scale))
    head = abs(terms[h + n]) + (0.0 if forward_only else abs(terms[h - n]))
    count = n + 1 if forward_only else 2 * n + 1
    floor = 16.0 * count * np.finfo(float).eps * float(np.max(np.abs(terms)) + 1.0)
    return head * theta / (1.0 - theta) + floor


def _mean_expansion(*sources: Trajectory) -> float:
    return float(np.mean([np.mean(s.tau) for s in sources]))


def _adaptive_sum(
    system: SurfaceMap,
    p: OrbitSource,
    q: OrbitSource,
    tol: float,
    radius: float,
    horizon: int,
    max_horizon: int,
    forward_only: bool,
) -> DeltaValue:
    limit = min(max_horizon, _horizon_limit(p, q))
    h = min(horizon, limit)
    best = math.inf
    while True:
        terms = delta_terms(system, p, q, radius, h)
        scale = _mean_expansion(_as_trajectory(p, h), _as_trajectory(q, h))
        for n in range(min(4, h), h + 1):
            bound = _tail_bound(terms, n, scale, forward_only)
            best = min(best, bound)
            if bound < tol:
                lo = h if forward_only else h - n
                value = float(np.sum(terms[lo : h + n + 1]))
                return DeltaValue(
                    p=_point_tuple(p),
                    q=_point_tuple(q),
                    value=value,
                    truncation=n,
                    tail_bound=bound,
                )
        if h >= limit:
            raise NonConvergence(
                f"Tail bound {best:.2e} above {tol:.2e} at horizon {h}"
            )
        h = min(h + 8, limit)
        logger.debug(f"Raising temporal-distance horizon to {h}")


def delta(
    system: SurfaceMap,
    p: OrbitSource,
    q: OrbitSource,
    tol: float = 1e-10,
    radius: float = DEFAULT_RADIUS,
    horizon: int = DEFAULT_HORIZON,
    max_horizon: int = MAX_HORIZON,
) -> DeltaValue:
    """Temporal distance Delta(p, q), the sum of T_n over all n.

    The truncation n_max is the smallest one whose geometric tail estimate,
    with ratio exp(-mean tau), drops below tol.

    Raises:
        NoIntersection: If the brackets cannot be formed
        NonConvergence: If the tail stays above tol up to max_horizon
    """
    if _same_point(system, p, q):
        return DeltaValue(
            p=_point_tuple(p),
            q=_point_tuple(q),
            value=0.0,
            truncation=0,
            tail_bound=0.0,
        )
    return _adaptive_sum(system, p, q, tol, radius, horizon, max_horizon, False)


def delta_plus(
    system: SurfaceMap,
    p: OrbitSource,
    q: OrbitSource,
    tol: float = 1e-10,
    radius: float = DEFAULT_RADIUS,
    horizon: int = DEFAULT_HORIZON,
    max_horizon: int = MAX_HORIZON,
) -> DeltaValue:
    """Forward half Delta^+_p(q), the sum of T_n over n >= 0."""
    if _same_point(system, p, q):
        return DeltaValue(
            p=_point_tuple(p),
            q=_point_tuple(q),
            value=0.0,
            truncation=0,
            tail_bound=0.0,
        )
    return _adaptive_sum(system, p, q, tol, radius, horizon, max_horizon, True)


def holonomy_distortion(
    system: SurfaceMap,
    p: OrbitSource,
    s: OrbitSource,
    r: OrbitSource,
    tol: float = 1e-10,
    radius: float = DEFAULT_RADIUS,
    horizon: int = DEFAULT_HORIZON,
) -> float:
    """ln of the unstable derivative at r of the stable holonomy r -> [r, s].

    The holonomy slides W^u_loc(p) onto W^u_loc(s) along stable leaves, and
    its log-derivative is the sum over n >= 0 of tau(r_n) - tau([r, s]_n).

    Raises:
        NoIntersection: If [r, s] cannot be formed
        NonConvergence: If the series tail stays above tol
    """
    if _same_point(system, r, s):
        return 0.0
    h = min(horizon, _horizon_limit(p, s, r))
    traj_r = _as_trajectory(r, h)
    image = bracket(system, r, s, radius, h).pq_orbit
    terms = np.concatenate([np.zeros(h), traj_r.tau[h:] - image.tau[h:]])
    scale = float(np.mean(traj_r.tau))
    for n in range(min(4, h), h + 1):
        if _tail_bound(terms, n, scale, True) < tol:
            return float(np.sum(terms[h : h + n + 1]))
    raise NonConvergence(f"Holonomy series did not settle within horizon {h}")


def holonomy_chord_ratio(
    system: SurfaceMap,
    p: OrbitSource,
    s: OrbitSource,
    r: OrbitSource,
    radius: float = DEFAULT_RADIUS,
    horizon: int = DEFAULT_HORIZON,
) -> float:
    """ln of |pi(p) pi(r)| / |p r| for the holonomy pi = [., s].

    A finite-difference reading of the holonomy derivative at p, for r on
    W^u_loc(p) close to p.
    """
    h = min(horizon, _horizon_limit(p, s, r))
    image_p = bracket(system, p, s, radius, h).pq_orbit.base
    image_r = bracket(system, r, s, radius, h).pq_orbit.base
    return math.log(
        system.distance(image_p, image_r)
        / system.distance(_source_point(p), _source_point(r))
    )


@dataclass
class HolonomyIdentity:
    """Both sides of Delta^+_p([r, s]) = hol(p, s, p) - hol(p, s, r)."""

    delta_plus: float
    distortion: float
    horizon: int

    @property
    def gap(self) -> float:
        return abs(self.delta_plus - self.distortion)


def forward_half_identity(
    system: SurfaceMap,
    p: PeriodicPoint,
    s: OrbitSource,
    y: OrbitSource,
    tol: float = 1e-10,
    radius: float = DEFAULT_RADIUS,
    horizon: int = DEFAULT_HORIZON,
    max_horizon: int = MAX_HORIZON,
) -> HolonomyIdentity:
    """Delta^+_p at the corner [[y, p], s] and the matching holonomy difference.

    r = [y, p] lies on W^u_loc(p). The corner and r are shadowing orbits of
    finite horizon, so both series are summed within it; when a tail does not
    settle, the brackets are rebuilt with a horizon 8 steps longer.

    Raises:
        NoIntersection: If a bracket cannot be formed
        NonConvergence: If a tail stays above tol up to max_horizon
    """
    h = horizon
    while True:
        try:
            r = bracket(system, y, p, radius, h).pq_orbit
            corner = bracket(system, r, s, radius, h).pq_orbit
            series = delta_plus(system, p, corner, tol, radius, h, h).value
            distortion = holonomy_distortion(
                system, p, s, p, tol, radius, h
            ) - holonomy_distortion(system, p, s, r, tol, radius, h)
            return HolonomyIdentity(series, distortion, h)
        except NonConvergence as e:
            if h >= max_horizon:
                raise
            h = min(h + 8, max_horizon)
            logger.debug(f"Rebuilding corner at horizon {h}: {e}")


@dataclass
class StableDerivative:
    """Extrapolated stable derivative of Delta^+_p at r."""

    value: float
    consistency: float
    scales: list[float]
    quotients: list[float]


def _neville_at_zero(h: np.ndarray, values: np.ndarray) -> list[float]:
    """Diagonal of the Neville table for extrapolation to h = 0."""
    table = list(values.astype(float))
    diagonal = [table[0]]
    for order in range(1, len(values)):
        for i in range(len(values) - 1, order - 1, -1):
            table[i] = (h[i] * table[i - 1] - h[i - order] * table[i]) / (
                h[i] - h[i - order]
            )
        diagonal.append(table[order])
    return diagonal


def stable_derivative_delta_plus(
    system: SurfaceMap,
    p: PeriodicPoint,
    r: OrbitSource,
    x: OrbitSource,
    n_scales: int = 5,
    noise_tol: float = 1e-8,
    radius: float = DEFAULT_RADIUS,
    horizon: int = DEFAULT_HORIZON,
    tol: float = 1e-12,
    h_grid: Sequence[float] | None = None,
) -> StableDerivative:
    """Derivative of Delta^+_p along the stable leaf through r.

    By default the stable steps are s_j = f^(jm)[p, x] for the period m of p,
    which lie on W^s_loc(p) and approach p geometrically. With h_grid the
    steps are the points of the traced W^s_loc(p) at those arclengths, for
    example DYADIC_STEPS; their orbits are built by iteration, so this needs
    a map whose stable points keep bounded pasts, such as the cat map.
    Delta^+_p([r, s_j]) divided by the signed stable coordinate of s_j is
    extrapolated to zero step.

    Raises:
        StepTooSmall: If the extrapolation table stops improving above noise_tol
        OrbitEscaped: If a point of h_grid has an unbounded orbit
    """
    if not isinstance(p, PeriodicPoint):
        raise ValueError("The base point must be periodic")
    if n_scales < 2 or (h_grid is not None and len(h_grid) < 2):
        raise ValueError("At least two scales are needed")
    frame = p.orbit.frame(p.index)
    _, row_s = _dual_rows(system, p.base, frame.tangent_u, frame.tangent_s)
    if h_grid is None:
        period = p.orbit.period
        far = bracket(system, p, x, radius, horizon + (n_scales - 1) * period)
        steps = [far.pq_orbit.window(j * period, horizon) for j in range(n_scales)]
    else:
        grid = sorted((float(h) for h in h_grid), reverse=True)
        leaf = trace_manifold(system, p, ManifoldKind.STABLE, 2.0 * grid[0])
        steps = [
            Trajectory.from_history(system, leaf.point_at(h), horizon) for h in grid
        ]

    scales, quotients = [], []
    for s_j in steps:
        step = float(row_s @ system.displacement(p.base, s_j.base))
        if step == 0.0:
            break
        corner = bracket(system, r, s_j, radius, horizon).pq_orbit
        value = delta_plus(system, p, corner, tol, radius, horizon, horizon).value
        scales.append(step)
        quotients.append(value / step)
    if len(scales) < 2:
        raise StepTooSmall("x lies on the unstable leaf of p")

    diagonal = _neville_at_zero(np.abs(scales), np.array(quotients))
    changes = np.abs(np.diff(diagonal))
    accepted = len(diagonal) - 1
    for k in range(1, len(changes)):
        if changes[k] > changes[k - 1] and changes[k] > noise_tol:
            if k == 1:
                raise StepTooSmall(
                    f"Extrapolation table is non-monotone from the first order, "
                    f"changes {changes.tolist()}"
                )
            accepted = k
            break
    return StableDerivative(
        value=float(diagonal[accepted]),
        consistency=float(changes[accepted - 1]),
        scales=scales,
        quotients=quotients,
    )


@dataclass
class ContinuityScan:
    """Stable derivatives along W^u_loc(p) against the distance to p."""

    exponent: float
    distances: list[float]
    values: list[float]


def modulus_of_continuity(
    system: SurfaceMap,
    p: PeriodicPoint,
    y: OrbitSource,
    x: OrbitSource,
    n_points: int = 6,
    radius: float = DEFAULT_RADIUS,
    horizon: int = DEFAULT_HORIZON,
) -> ContinuityScan:
    """Log-log slope of |d_s Delta^+_p(r)| against |r - p| for r on W^u_loc(p).

    The points r_j = f^(-jm)[y, p] lie on W^u_loc(p) and approach p.

    Raises:
        NonConvergence: If fewer than three scales give a derivative
    """
    period = p.orbit.period
    far = bracket(system, y, p, radius, horizon + n_points * period).pq_orbit
    distances, values = [], []
    for j in range(1, n_points + 1):
        r_j = far.window(-j * period, horizon)
        try:
            derivative = stable_derivative_delta_plus(
                system, p, r_j, x, radius=radius, horizon=horizon
            )
        except ModuleError as exc:
            logger.debug(f"Skipping scale {j}: {exc}")
            continue
        distances.append(system.distance(p.base, r_j.base))
        values.append(abs(derivative.value))
    if len(values) < 3 or min(values) <= 0.0:
        raise NonConvergence(f"Only {len(values)} usable scales")
    slope, _ = np.polyfit(np.log(distances), np.log(values), 1)
    return ContinuityScan(exponent=float(slope), distances=distances, values=values)


# Periodic orbits and the measure of maximal entropy


def lucas(n: int) -> int:
    """Lucas number L_n."""
    a, b = 2, 1
    for _ in range(n):
        a, b = b, a + b
    return a


def surface_fixed_point_count(n: int) -> int:
    """|Fix(f^n)| on the hyperbolic set of S_V for small V.

    Torus points with cat^n v = +-v, up to sign and without 2-torsion, plus
    two points for every 2-torsion point fixed by cat^n.
    """
    return lucas(2 * n) + (4 if n % 3 == 0 else 1)


def _lattice_solutions(power: int, twist: int) -> tuple[np.ndarray, int]:
    """Numerators mod D of the torus points with cat^power v = twist v."""
    matrix = np.linalg.matrix_power(CAT_MATRIX, power) - twist * np.eye(
        2, dtype=np.int64
    )
    a, b, c, d = (int(v) for v in matrix.ravel())
    denominator = abs(a * d - b * c)
    # Columns of the adjugate generate the solution group
    g1 = np.array([d, -c], dtype=np.int64) % denominator
    g2 = np.array([-b, a], dtype=np.int64) % denominator
    order = denominator // math.gcd(denominator, int(g1[0]), int(g1[1]))
    i = np.arange(order, dtype=np.int64)[:, None, None]
    j = np.arange(denominator // order, dtype=np.int64)[None, :, None]
    points = ((i * g1 + j * g2) % denominator).reshape(-1, 2)
    points = np.unique(points, axis=0)
    if len(points) != denominator:
        raise ContinuationFailed(
            f"Expected {denominator} torus points for power {power}, "
            f"found {len(points)}"
        )
    return points, denominator


def _torus_cycles(power: int, twist: int, fold_negation: bool) -> list[np.ndarray]:
    """Cycles of cat on the solutions of cat^power v = twist v.

    With fold_negation, v and -v are identified, 2-torsion is dropped and a
    cycle containing -v is cut to the part before -v.
    """
    points, denominator = _lattice_solutions(power, twist)
    index = {(int(u), int(v)): k for k, (u, v) in enumerate(points)}
    images = (points @ CAT_MATRIX.T) % denominator
    successor = [index[(int(u), int(v))] for u, v in images]
    seen = np.zeros(len(points), dtype=bool)
    cycles = []
    for start in range(len(points)):
        if seen[start]:
            continue
        cycle = []
        k = start
        while not seen[k]:
            seen[k] = True
            cycle.append(k)
            k = successor[k]
        if fold_negation:
            u, v = (-points[start]) % denominator
            negative = index[(int(u), int(v))]
            if negative == start:
                continue
            if negative in cycle:
                cycle = cycle[: cycle.index(negative)]
            else:
                k = negative
                while not seen[k]:
                    seen[k] = True
                    k = successor[k]
        cycles.append(points[cycle] / denominator)
    return cycles


def _cayley_seed(angles: np.ndarray) -> np.ndarray:
    """Points of the Cayley cubic S_0 over torus points (a, b)."""
    a, b = angles[..., 0], angles[..., 1]
    return np.stack(
        [np.cos(2 * np.pi * a), np.cos(2 * np.pi * b), np.cos(2 * np.pi * (a - b))],
        axis=-1,
    )


def _shooting_system(
    system: TraceMapSystem, orbits: np.ndarray, level: float
) -> tuple[np.ndarray, np.ndarray]:
    """Residuals and Jacobians of f(z_k) = z_{k+1}, I(z_0) = level, batched."""
    count, period, _ = orbits.shape
    defects = system.forward(orbits) - np.roll(orbits, -1, axis=1)
    residual = np.concatenate(
        [
            defects.reshape(count, 3 * period),
            (fricke_vogt_array(orbits[:, 0]) - level)[:, None],
        ],
        axis=1,
    )
    jac = np.zeros((count, 3 * period + 1, 3 * period))
    local = system.jacobian(orbits)
    for k in range(period):
        nxt = (k + 1) % period
        jac[:, 3 * k : 3 * k + 3, 3 * k : 3 * k + 3] += local[:, k]
        jac[:, 3 * k : 3 * k + 3, 3 * nxt : 3 * nxt + 3] -= np.eye(3)
    jac[:, 3 * period, 0:3] = fricke_vogt_gradient(orbits[:, 0])
    return residual, jac


def _newton_cycles(
    system: TraceMapSystem,
    orbits: np.ndarray,
    level: float,
    tol: float = 1e-12,
    max_iter: int = 20,
) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton on a batch of periodic orbits; returns orbits and success."""
    z = np.array(orbits, dtype=float)
    count, period, _ = z.shape
    alive = np.ones(count, dtype=bool)
    converged = np.zeros(count, dtype=bool)
    for _ in range(max_iter):
        residual, jac = _shooting_system(system, z, level)
        finite = np.all(np.isfinite(residual), axis=1) & np.all(
            np.abs(z) <= system.radius, axis=(1, 2)
        )
        alive &= finite
        converged = alive & (np.max(np.abs(np.nan_to_num(residual)), axis=1) < tol)
        active = alive & ~converged
        if not active.any():
            break
        step = np.linalg.pinv(jac[active]) @ residual[active][..., None]
        z[active] -= step[..., 0].reshape(-1, period, 3)
    return z, converged


def _continue_cycles(
    system: TraceMapSystem,
    seeds: np.ndarray,
    first_step: float = 1e-3,
    max_step: float = 0.05,
    min_step: float = 1e-6,
    max_jump: float = 0.25,
) -> tuple[np.ndarray, np.ndarray]:
    """Follow periodic orbits from the level of S_0 to the level of S_V.

    Each orbit carries its own coupling and step, grown by 1.5 on success and
    halved on failure.
    """
    target = system.V
    z = np.array(seeds, dtype=float)
    count = len(z)
    coupling = np.zeros(count)
    step = np.full(count, first_step)
    failed = np.zeros(count, dtype=bool)
    while True:
        active = ~failed & (coupling < target)
        if not active.any():
            break
        idx = np.flatnonzero(active)
        trial = np.minimum(coupling[idx] + step[idx], target)
        ok = np.zeros(len(idx), dtype=bool)
        candidates = z[idx].copy()
        for value in np.unique(trial):
            chosen = trial == value
            solved, good = _newton_cycles(system, z[idx][chosen], value * value / 4.0)
            candidates[chosen] = solved
            ok[chosen] = good
        jump = np.max(np.abs(candidates - z[idx]), axis=(1, 2))
        ok &= jump <= max_jump
        good, bad = idx[ok], idx[~ok]
        z[good] = candidates[ok]
        coupling[good] = trial[ok]
        step[good] = np.minimum(step[good] * 1.5, max_step)
        step[bad] /= 2.0
        failed[bad] |= step[bad] < min_step
    return z, ~failed


def _orbit_key(points: np.ndarray) -> tuple[float, ...]:
    return tuple(np.round(np.sort(points, axis=0), 6).ravel())


def _collapsed(points: np.ndarray, tol: float = 1e-6) -> bool:
    # A cycle whose points coincide has a smaller period
    for shift in range(1, len(points)):
        if np.max(np.abs(np.roll(points, shift, axis=0) - points)) < tol:
            return True
    return False


def _special_orbits(system: TraceMapSystem, period_cap: int) -> list[np.ndarray]:
    """p_V, T(p_V) and, from period 3, their images under the sign changes."""
    p = periodic_point(solve_t_V(system.V).t_V).as_array()
    orbits = []
    for point in (p, trace_map_array(p)):
        orbits.append(point[None, :])
        if period_cap >= 3:
            orbits.append(np.array([flip * point for flip in SIGN_FLIPS]))
    return orbits


@dataclass
class PeriodicSample:
    """Periodic orbits of f up to a period cap, weighted uniformly by point."""

    system: SurfaceMap
    orbits: list[PeriodicOrbit]
    period_cap: int
    failures: int
    seed: int

    def fixed_points(self, n: int) -> int:
        """Number of sampled points fixed by f^n."""
        return sum(o.period for o in self.orbits if n % o.period == 0)

    def counts(self) -> list[int]:
        return [self.fixed_points(n) for n in range(1, self.period_cap + 1)]

    def positions(self) -> list[tuple[int, int]]:
        """(orbit, index) of every sampled point, in a fixed order."""
        return [(i, k) for i, o in enumerate(self.orbits) for k in range(o.period)]

    def points(self) -> np.ndarray:
        return np.concatenate([o.points for o in self.orbits])

    def __iter__(self) -> Iterator[PeriodicPoint]:
        for i, k in self.positions():
            yield self.orbits[i].point(k)

    def __len__(self) -> int:
        return sum(o.period for o in self.orbits)

    def draw(self, n: int, seed: int | None = None) -> list[PeriodicPoint]:
        """n points drawn uniformly with replacement."""
        rng = task_rng(self.seed if seed is None else seed, 0)
        positions = self.positions()
        picks = rng.integers(0, len(positions), size=n)
        return [self.orbits[positions[k][0]].point(positions[k][1]) for k in picks]

    @property
    def mean_tau(self) -> float:
        """Average of tau over the sampled points."""
        return float(np.mean(np.concatenate([o.tau_u for o in self.orbits])))


def mme_sampler(
    V: float, period_cap: int = 7, seed: int = 20240501, radius: float = 10.0
) -> PeriodicSample:
    """Periodic orbits of T^2 on S_V up to period_cap, continued from V = 0.

    Raises:
        ContinuationFailed: If every seed of some period fails to continue
    """
    if period_cap < 1:
        raise ValueError("period_cap must be at least 1")
    system = TraceMapSystem(V, radius)
    found: list[np.ndarray] = _special_orbits(system, period_cap)
    failures = 0
    for period in range(1, period_cap + 1):
        cycles = [
            c
            for twist in (1, -1)
            for c in _torus_cycles(period, twist, fold_negation=True)
            if len(c) == period
        ]
        if not cycles:
            continue
        seeds = _cayley_seed(np.array(cycles))
        orbits, ok = _continue_cycles(system, seeds)
        if not ok.any():
            raise ContinuationFailed(f"No orbit of period {period} reached V={V}")
        lost = int(np.sum(~ok))
        for orbit in orbits[ok]:
            if _collapsed(orbit):
                lost += 1
            else:
                found.append(orbit)
        if lost:
            logger.warning(f"Continuation lost {lost} orbits of period {period}")
        failures += lost

    unique: dict[tuple[float, ...], np.ndarray] = {}
    for orbit in found:
        polished, ok = _newton_cycles(system, orbit[None], system.level)
        if not ok[0]:
            failures += 1
            continue
        unique.setdefault(_orbit_key(polished[0]), polished[0])
    orbits = []
    for points in unique.values():
        try:
            orbits.append(PeriodicOrbit.from_points(system, points))
        except ModuleError as exc:
            logger.warning(f"Dropping periodic orbit: {exc}")
            failures += 1
    sample = PeriodicSample(system, orbits, period_cap, failures, seed)
    expected = [surface_fixed_point_count(n) for n in range(1, period_cap + 1)]
    logger.info(f"Periodic points at V={V}: {sample.counts()} (expected {expected})")
    return sample


def cat_sampler(period_cap: int = 7, seed: int = 20240501) -> PeriodicSample:
    """Periodic orbits of the cat map up to period_cap, all exact rationals."""
    system = CatMapSystem()
    orbits = [
        PeriodicOrbit.from_points(system, cycle)
        for period in range(1, period_cap + 1)
        for cycle in _torus_cycles(period, 1, fold_negation=False)
        if len(cycle) == period
    ]
    return PeriodicSample(system, orbits, period_cap, 0, seed)


def periodic_orbit_counts(
    V: float, period_cap: int = 7
) -> tuple[list[int], float]:
    """Counts |Fix(f^n)| for n <= period_cap and the fitted entropy.

    The entropy is the slope of ln |Fix(f^n)| over the upper half of n.
    """
    counts = mme_sampler(V, period_cap).counts()
    ns = np.arange(1, period_cap + 1)
    upper = ns > period_cap // 2
    if upper.sum() < 2:
        upper = ns >= 1
    slope, _ = np.polyfit(ns[upper], np.log(np.maximum(counts, 1))[upper], 1)
    return counts, float(slope)


# Quasi-non-linearity


def qnl_from_values(
    values: Sequence[float], sigma_grid: Sequence[float], seed: int = 0
) -> QnlHistogram:
    """Mass of |Delta| <= sigma on a decreasing grid and its log-log slope.

    Only grid points with mass strictly between 0 and 1 enter the fit, and at
    least three are needed; otherwise the exponent is left undefined.
    """
    grid = np.asarray(sigma_grid, dtype=float)
    if len(grid) < 2 or np.any(np.diff(grid) >= 0) or grid[-1] <= 0:
        raise ValueError("sigma_grid must be positive and strictly decreasing")
    magnitudes = np.abs(np.asarray(values, dtype=float))
    masses = np.array([np.mean(magnitudes <= s) for s in grid])
    degenerate = bool(np.all(masses == 1.0))
    usable = (masses > 0.0) & (masses < 1.0)
    gamma_hat = r2 = None
    if usable.sum() >= 3:
        log_s, log_m = np.log(grid[usable]), np.log(masses[usable])
        slope, intercept = np.polyfit(log_s, log_m, 1)
        fitted = intercept + slope * log_s
        ss_res = float(np.sum((log_m - fitted) ** 2))
        ss_tot = float(np.sum((log_m - log_m.mean()) ** 2))
        gamma_hat = float(slope)
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return QnlHistogram(
        sigma_grid=grid.tolist(),
        masses=masses.tolist(),
        gamma_hat=gamma_hat,
        r2=r2,
        n_pairs=len(magnitudes),
        seed=seed,
        degenerate=degenerate,
    )


def qnl_pair_values(
    sample: PeriodicSample,
    n_pairs: int,
    seed: int,
    radius: float = DEFAULT_RADIUS,
    tol: float = 1e-10,
    pmap: ParallelMap = SERIAL,
) -> list[tuple[int, int, float | None]]:
    """Delta on up to n_pairs sampled pairs closer than radius.

    Returns:
        (i, j, Delta) per pair, Delta None where it could not be computed

    Raises:
        InsufficientPairs: If fewer than 100 candidate pairs exist
    """
    points = sample.points()
    if isinstance(sample.system, CatMapSystem):
        tree = cKDTree(np.mod(points, 1.0), boxsize=1.0)
    else:
        tree = cKDTree(points)
    candidates = tree.query_pairs(radius, output_type="ndarray")
    if len(candidates) < MIN_PAIRS:
        raise InsufficientPairs(
            f"Only {len(candidates)} pairs within {radius:.2e}, need {MIN_PAIRS}"
        )
    candidates = candidates[np.lexsort((candidates[:, 1], candidates[:, 0]))]
    order = task_rng(seed, 0).permutation(len(candidates))[:n_pairs]
    chosen = candidates[order]
    members = list(sample)

    def evaluate(pair: np.ndarray) -> tuple[int, int, float | None]:
        i, j = int(pair[0]), int(pair[1])
        try:
            value = delta(sample.system, members[i], members[j], tol, radius).value
        except ModuleError as exc:
            logger.debug(f"Pair ({i}, {j}) skipped: {exc}")
            value = None
        return i, j, value

    logger.info(f"Evaluating Delta on {len(chosen)} of {len(candidates)} pairs")
    return pmap(evaluate, chosen)


def qnl_exponent(
    sample: PeriodicSample,
    n_pairs: int,
    sigma_grid: Sequence[float],
    seed: int,
    radius: float = DEFAULT_RADIUS,
    tol: float = 1e-10,
    pmap: ParallelMap = SERIAL,
) -> QnlHistogram:
    """Empirical exponent of mu x mu(|Delta| <= sigma) ~ sigma^Gamma.

    The grid is cut at the first sigma whose bin |Delta| <= sigma holds fewer
    than 100 pairs, so every bin entering the histogram has at least 100.

    Raises:
        InsufficientPairs: If fewer than two sigma bins hold 100 pairs
    """
    if len(sigma_grid) < 2:
        raise ValueError("sigma_grid needs at least two values")
    records = qnl_pair_values(sample, n_pairs, seed, radius, tol, pmap)
    magnitudes = np.abs([value for _, _, value in records if value is not None])
    counts = [int(np.sum(magnitudes <= s)) for s in sigma_grid]
    kept = next((k for k, c in enumerate(counts) if c < MIN_PAIRS), len(counts))
    if kept < 2:
        raise InsufficientPairs(
            f"Only {counts[min(kept, len(counts) - 1)]} of {len(magnitudes)} pairs "
            f"in the smallest sigma bin, need {MIN_PAIRS}"
        )
    if kept < len(counts):
        logger.warning(
            f"Sigma grid cut at {sigma_grid[kept - 1]:.2e}: "
            f"{counts[kept]} pairs within {sigma_grid[kept]:.2e}"
        )
    return qnl_from_values(magnitudes, list(sigma_grid)[:kept], seed)
