"""
Spline geometry
===============

Quartic cardinal B-spline baselines: fitting from sketch waypoints, evaluation
with derivatives, the progress <-> station tables, and projection of Cartesian
points into spline-space (p, n), n positive to the left of the tangent.

Control point i is centered at progress p = i, knots sit at half-integers and
the valid domain of an N-point spline is [1.5, N - 2.5].
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.integrate import cumulative_trapezoid

from sketchwrap.errors import DomainError, FitError, SketchError

logger = logging.getLogger(__name__)

DOMAIN_START = 1.5
MIN_CONTROL_POINTS = 6
STATION_STEP = 0.25
STATION_SUBSTEPS = 8
DOMAIN_TOL = 1e-9
COINCIDENT_TOL = 1e-9
STRAIGHT_KAPPA = 1e-6
AMBIGUOUS_RADIUS = 1e-6
PROJECTION_ITERATIONS = 3

# Uniform quartic B-spline segment matrix. Row r holds the u**r coefficients,
# column c the weight of control k - 2 + c on segment k.
_BASIS = np.array([
    [1.0, 11.0, 11.0, 1.0, 0.0],
    [-4.0, -12.0, 12.0, 4.0, 0.0],
    [6.0, -6.0, -6.0, 6.0, 0.0],
    [-4.0, 12.0, -12.0, 4.0, 0.0],
    [1.0, -4.0, 6.0, -4.0, 1.0],
]) / 24.0


def _differentiate(matrix: np.ndarray) -> np.ndarray:
    out = np.zeros_like(matrix)
    for r in range(1, matrix.shape[0]):
        out[r - 1] = r * matrix[r]
    return out


_BASIS_DERIVS = [_BASIS]
for _ in range(3):
    _BASIS_DERIVS.append(_differentiate(_BASIS_DERIVS[-1]))
_BASIS_DERIVS = tuple(_BASIS_DERIVS)
# Orders 1..3 side by side, for the scalar fast path used by the MPC rollout
_FRAME_STACK = np.hstack(_BASIS_DERIVS[1:4])
_OFFSETS = np.arange(-2, 3)


def _powers(u: np.ndarray) -> np.ndarray:
    return np.stack([np.ones_like(u), u, u * u, u ** 3, u ** 4], axis=-1)


def domain_of(n_control: int) -> Tuple[float, float]:
    return DOMAIN_START, n_control - 2.5


def _spans(p: np.ndarray, n_control: int) -> Tuple[np.ndarray, np.ndarray]:
    k = np.clip(np.floor(p + 0.5).astype(int), 2, n_control - 3)
    return k, p + 0.5 - k


def _check_domain(p: np.ndarray, n_control: int):
    lo, hi = domain_of(n_control)
    if np.any(p < lo - DOMAIN_TOL) or np.any(p > hi + DOMAIN_TOL) or not np.all(np.isfinite(p)):
        bad = p[(p < lo - DOMAIN_TOL) | (p > hi + DOMAIN_TOL) | ~np.isfinite(p)]
        raise DomainError(f"progress {bad[0]:.6g} outside spline domain [{lo}, {hi}]")


def basis_rows(p, n_control: int, derivative: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized basis evaluation.

    Args:
        p: Progress values (any shape), already inside the domain
        n_control: Number of control values of the spline
        derivative: Derivative order with respect to p (0..4)

    Returns:
        (weights, indices), both of shape p.shape + (5,)
    """
    p = np.asarray(p, dtype=float)
    k, u = _spans(p, n_control)
    weights = _powers(u) @ _BASIS_DERIVS[derivative]
    return weights, k[..., None] + _OFFSETS


def basis(p: float, n_control: int, derivative: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Basis weights of the five active control points at progress p.

    Raises:
        DomainError: p outside [1.5, n_control - 2.5]
    """
    p_arr = np.asarray(float(p))
    _check_domain(p_arr.reshape(1), n_control)
    return basis_rows(p_arr, n_control, derivative)


def basis_matrix(p_values: Iterable[float], n_control: int, derivative: int = 0) -> np.ndarray:
    """Dense (len(p_values), n_control) design matrix."""
    p_values = np.asarray(p_values, dtype=float).reshape(-1)
    weights, idx = basis_rows(p_values, n_control, derivative)
    matrix = np.zeros((p_values.size, n_control))
    np.put_along_axis(matrix, idx, weights, axis=1)
    return matrix


def evaluate_values(values: np.ndarray, p, derivative: int = 0, clamp: bool = True) -> np.ndarray:
    """
    Evaluate a spline with the cardinal basis for arbitrary control values.

    Args:
        values: (N,) or (N, d) control values
        p: Progress values
        derivative: Derivative order
        clamp: Clamp p into the domain (derivatives are zeroed where clamped)
    """
    values = np.asarray(values, dtype=float)
    n_control = values.shape[0]
    p = np.asarray(p, dtype=float)
    lo, hi = domain_of(n_control)
    if clamp:
        outside = (p < lo) | (p > hi)
        p = np.clip(p, lo, hi)
    else:
        _check_domain(p.reshape(-1), n_control)
        outside = None
    weights, idx = basis_rows(p, n_control, derivative)
    if values.ndim == 1:
        out = np.sum(weights * values[idx], axis=-1)
        if derivative and outside is not None:
            out = np.where(outside, 0.0, out)
    else:
        out = np.einsum('...k,...kd->...d', weights, values[idx])
        if derivative and outside is not None:
            out = np.where(outside[..., None], 0.0, out)
    return out


def second_difference(n: int) -> np.ndarray:
    """(n - 2, n) matrix with rows [-1, 2, -1]."""
    matrix = np.zeros((max(n - 2, 0), n))
    for i in range(n - 2):
        matrix[i, i:i + 3] = (-1.0, 2.0, -1.0)
    return matrix


def first_difference(n: int) -> np.ndarray:
    """(n - 1, n) matrix with rows [-1, 1]."""
    matrix = np.zeros((max(n - 1, 0), n))
    for i in range(n - 1):
        matrix[i, i:i + 2] = (-1.0, 1.0)
    return matrix


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    t: Optional[float] = None


@dataclass(frozen=True)
class Sketch:
    """
    Planner output: ordered waypoints, a trajectory when every waypoint is timed.

    Coincident consecutive waypoints are accepted here and dropped by
    fit_baseline, which owns the distinctness requirement.
    """

    waypoints: Tuple[Waypoint, ...]

    def __post_init__(self):
        object.__setattr__(self, 'waypoints', tuple(self.waypoints))
        if len(self.waypoints) < 2:
            raise SketchError(f"sketch needs at least 2 waypoints, got {len(self.waypoints)}")
        xy = self.xy
        if not np.all(np.isfinite(xy)):
            raise SketchError("sketch coordinates must be finite")
        timed = [w.t is not None for w in self.waypoints]
        if any(timed) and not all(timed):
            raise SketchError("either every waypoint carries a timestamp or none does")
        if all(timed):
            t = self.times
            if not np.all(np.isfinite(t)) or np.any(np.diff(t) <= 0):
                raise SketchError("timestamps must be finite and strictly increasing")

    @classmethod
    def from_arrays(cls, xy, t: Optional[Sequence[float]] = None) -> 'Sketch':
        xy = np.asarray(xy, dtype=float)
        if t is None:
            return cls(tuple(Waypoint(float(x), float(y)) for x, y in xy))
        return cls(tuple(Waypoint(float(x), float(y), float(tk)) for (x, y), tk in zip(xy, t)))

    @property
    def has_timestamps(self) -> bool:
        return all(w.t is not None for w in self.waypoints)

    @property
    def xy(self) -> np.ndarray:
        return np.array([[w.x, w.y] for w in self.waypoints], dtype=float)

    @property
    def times(self) -> Optional[np.ndarray]:
        if not self.has_timestamps:
            return None
        return np.array([w.t for w in self.waypoints], dtype=float)

    def __len__(self):
        return len(self.waypoints)


@dataclass(frozen=True)
class SplinePoint:
    p: float
    n: float
    ambiguous: bool = False
    clamped: bool = False


class Baseline:
    """
    2D quartic cardinal B-spline with its progress/station table.

    Instances are immutable; control points are stored read-only.
    """

    def __init__(self, control_points):
        control = np.array(control_points, dtype=float)
        if control.ndim != 2 or control.shape[1] != 2:
            raise ValueError(f"control points must be N x 2, got {control.shape}")
        if control.shape[0] < MIN_CONTROL_POINTS:
            raise ValueError(f"baseline needs at least {MIN_CONTROL_POINTS} control points")
        if not np.all(np.isfinite(control)):
            raise ValueError("control points must be finite")
        control.setflags(write=False)
        self._control = control
        self.n_control = control.shape[0]
        self.domain = domain_of(self.n_control)
        self.station_table = self._build_station_table()

    @property
    def control_points(self) -> np.ndarray:
        return self._control

    def _build_station_table(self) -> np.ndarray:
        lo, hi = self.domain
        intervals = int(round((hi - lo) / STATION_STEP))
        fine = np.linspace(lo, hi, intervals * STATION_SUBSTEPS + 1)
        speed = np.linalg.norm(evaluate_values(self._control, fine, derivative=1), axis=1)
        arclength = cumulative_trapezoid(speed, fine, initial=0.0)
        table = np.column_stack([fine[::STATION_SUBSTEPS], arclength[::STATION_SUBSTEPS]])
        if np.any(np.diff(table[:, 1]) <= 0):
            raise FitError("degenerate baseline: station table is not strictly increasing")
        table.setflags(write=False)
        return table

    # -- evaluation -------------------------------------------------------

    def clamp(self, p):
        return np.clip(p, self.domain[0], self.domain[1])

    def contains(self, p: float) -> bool:
        return self.domain[0] - DOMAIN_TOL <= p <= self.domain[1] + DOMAIN_TOL

    def derivative(self, p, order: int = 0) -> np.ndarray:
        """Position (order 0) or d^order/dp^order of the curve; DomainError outside."""
        p = np.asarray(p, dtype=float)
        _check_domain(p.reshape(-1), self.n_control)
        return evaluate_values(self._control, self.clamp(p), derivative=order)

    def eval(self, p) -> np.ndarray:
        return self.derivative(p, 0)

    def eval_tangent(self, p) -> np.ndarray:
        d1 = self.derivative(p, 1)
        return d1 / np.linalg.norm(d1, axis=-1, keepdims=True)

    def eval_normal(self, p) -> np.ndarray:
        t = self.eval_tangent(p)
        return np.stack([-t[..., 1], t[..., 0]], axis=-1)

    def eval_curvature(self, p):
        d1 = self.derivative(p, 1)
        d2 = self.derivative(p, 2)
        cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        kappa = cross / np.linalg.norm(d1, axis=-1) ** 3
        return float(kappa) if np.ndim(kappa) == 0 else kappa

    def speed(self, p):
        """Meters per unit progress, g = |d eval / dp|."""
        g = np.linalg.norm(self.derivative(p, 1), axis=-1)
        return float(g) if np.ndim(g) == 0 else g

    def heading_at(self, p):
        d1 = self.derivative(p, 1)
        heading = np.arctan2(d1[..., 1], d1[..., 0])
        return float(heading) if np.ndim(heading) == 0 else heading

    def to_cartesian(self, p, n) -> np.ndarray:
        """Spline-space (p, n) to Cartesian (x, y); p is clamped to the domain."""
        p = self.clamp(np.asarray(p, dtype=float))
        n = np.asarray(n, dtype=float)
        return self.eval(p) + n[..., None] * self.eval_normal(p)

    def frame_terms(self, p: float) -> Tuple[float, float, float, float]:
        """
        Scale and curvature with their progress derivatives at a clamped p.

        Returns:
            (g, dg/dp, kappa, dkappa/dp); derivatives are zero where p was clamped
        """
        lo, hi = self.domain
        clamped = p < lo or p > hi
        pc = min(max(p, lo), hi)
        k = min(max(int(math.floor(pc + 0.5)), 2), self.n_control - 3)
        u = pc + 0.5 - k
        weights = np.array([1.0, u, u * u, u * u * u, u * u * u * u]) @ _FRAME_STACK
        ctrl = self._control[k - 2:k + 3]
        (x1, y1), (x2, y2), (x3, y3) = weights.reshape(3, 5) @ ctrl
        g = math.hypot(x1, y1)
        cross = x1 * y2 - y1 * x2
        kappa = cross / (g * g * g)
        if clamped:
            return g, 0.0, kappa, 0.0
        dg = (x1 * x2 + y1 * y2) / g
        dcross = x1 * y3 - y1 * x3
        dkappa = dcross / (g * g * g) - 3.0 * cross * dg / (g * g * g * g)
        return g, dg, kappa, dkappa

    def scale_terms(self, p) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized (g, dg/dp) at clamped p; dg is zero where clamped."""
        p = np.asarray(p, dtype=float)
        outside = (p < self.domain[0]) | (p > self.domain[1])
        pc = self.clamp(p)
        d1 = evaluate_values(self._control, pc, 1)
        d2 = evaluate_values(self._control, pc, 2)
        g = np.linalg.norm(d1, axis=-1)
        dg = np.sum(d1 * d2, axis=-1) / g
        return g, np.where(outside, 0.0, dg)

    # -- stations ---------------------------------------------------------

    @property
    def length(self) -> float:
        return float(self.station_table[-1, 1])

    def station_of(self, p):
        """Arclength of progress p (piecewise-linear in the station table)."""
        p_arr = np.asarray(p, dtype=float)
        _check_domain(p_arr.reshape(-1), self.n_control)
        s = np.interp(p_arr, self.station_table[:, 0], self.station_table[:, 1])
        return float(s) if np.ndim(s) == 0 else s

    def progress_of(self, s):
        """Inverse of station_of."""
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr < -DOMAIN_TOL) or np.any(s_arr > self.length + DOMAIN_TOL):
            raise DomainError(f"station outside [0, {self.length:.3f}] m")
        p = np.interp(s_arr, self.station_table[:, 1], self.station_table[:, 0])
        return float(p) if np.ndim(p) == 0 else p

    def station_extended(self, p) -> Tuple[np.ndarray, np.ndarray]:
        """
        Station and its slope, extrapolated linearly beyond the domain.

        Used inside optimizers where iterates may leave the domain.
        """
        table = self.station_table
        p = np.asarray(p, dtype=float)
        i = np.clip(np.searchsorted(table[:, 0], p, side='right') - 1, 0, len(table) - 2)
        dp = table[i + 1, 0] - table[i, 0]
        slope = (table[i + 1, 1] - table[i, 1]) / dp
        return table[i, 1] + slope * (p - table[i, 0]), slope

    def progress_clamped(self, s):
        """progress_of with the station clamped into the table."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        p = np.interp(s, self.station_table[:, 1], self.station_table[:, 0])
        return float(p) if np.ndim(p) == 0 else p


def assign_progress(sketch: Sketch, dist_max: float) -> np.ndarray:
    """
    Progress estimate per waypoint: cumulative distance over dist_max.

    Args:
        sketch: Input sketch
        dist_max: Meters per unit progress (control point spacing)

    Returns:
        (K,) non-decreasing progress values starting at 0
    """
    if dist_max <= 0:
        raise ValueError("dist_max must be positive")
    return _cumulative_progress(sketch.xy, dist_max)


def _cumulative_progress(xy: np.ndarray, dist_max: float) -> np.ndarray:
    steps = np.linalg.norm(np.diff(xy, axis=0), axis=1) / dist_max
    return np.concatenate([[0.0], np.cumsum(steps)])


def drop_coincident(xy: np.ndarray) -> np.ndarray:
    keep = [0]
    for i in range(1, len(xy)):
        if np.linalg.norm(xy[i] - xy[keep[-1]]) > COINCIDENT_TOL:
            keep.append(i)
    if len(keep) < len(xy):
        logger.warning(f"⚠️  Dropped {len(xy) - len(keep)} coincident waypoint(s) before fitting")
    return xy[keep]


def fit_baseline(sketch: Sketch, dist_max: float = 5.0, c_reg: float = 1.0) -> Baseline:
    """
    Least-squares baseline through the sketch waypoints.

    Minimizes |B C - W|^2 + c_reg^2 |R C|^2 with R the second-difference
    matrix. Progress estimates are shifted by +1.5 so they fall inside the
    valid domain.

    Args:
        sketch: Waypoints to fit
        dist_max: Meters per unit progress
        c_reg: Curvature regularization weight (>= 0)

    Returns:
        Baseline

    Raises:
        FitError: Fewer than two distinct waypoints, or a rank-deficient system
    """
    if c_reg < 0:
        raise ValueError("c_reg must be non-negative")
    if dist_max <= 0:
        raise ValueError("dist_max must be positive")

    xy = drop_coincident(sketch.xy)
    if len(xy) < 2:
        raise FitError("fewer than two distinct waypoints")

    raw = _cumulative_progress(xy, dist_max)
    p_hat = raw + DOMAIN_START
    # Domain ends at N - 2.5, so the last shifted progress raw + 1.5 needs N >= raw + 4
    n_control = max(MIN_CONTROL_POINTS, int(math.ceil(raw[-1] - 1e-12)) + 4)

    design = basis_matrix(p_hat, n_control)
    system = np.vstack([design, c_reg * second_difference(n_control)])
    rhs = np.vstack([xy, np.zeros((n_control - 2, 2))])

    control, _, rank, _ = linalg.lstsq(system, rhs)
    if rank < n_control:
        raise FitError(f"baseline system is rank deficient ({rank} < {n_control})")
    return Baseline(control)


def project_points(baseline: Baseline, queries, num_samples: int = 64) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Vectorized closest-point search on the baseline.

    A coarse sweep picks each starting progress, then a fixed number of
    circle-approximation updates refine it: the spline is replaced by its
    osculating circle (or tangent line when |kappa| < 1e-6) and the query is
    projected onto it. Queries within 1e-6 m of the circle center are flagged
    ambiguous and keep their incumbent progress.

    Args:
        baseline: Spline to project onto
        queries: (m, 2) Cartesian points
        num_samples: Coarse sweep resolution

    Returns:
        (p, n, ambiguous, clamped) arrays of length m
    """
    q = np.asarray(queries, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(q)):
        raise ValueError("queries must be finite")
    lo, hi = baseline.domain
    if len(q) == 0:
        empty = np.zeros(0)
        return empty, empty, np.zeros(0, bool), np.zeros(0, bool)

    samples = np.linspace(lo, hi, num_samples)
    points = baseline.eval(samples)
    dist2 = np.sum((q[:, None, :] - points[None, :, :]) ** 2, axis=2)
    p = samples[np.argmin(dist2, axis=1)]

    active = np.ones(len(q), dtype=bool)
    ambiguous = np.zeros(len(q), dtype=bool)
    for _ in range(PROJECTION_ITERATIONS):
        c = baseline.eval(p)
        d1 = baseline.derivative(p, 1)
        d2 = baseline.derivative(p, 2)
        g = np.linalg.norm(d1, axis=1)
        tangent = d1 / g[:, None]
        normal = np.column_stack([-tangent[:, 1], tangent[:, 0]])
        kappa = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / g ** 3
        straight = np.abs(kappa) < STRAIGHT_KAPPA
        safe_kappa = np.where(straight, 1.0, kappa)

        center = c + normal / safe_kappa[:, None]
        rq = q - center
        r0 = c - center
        near_center = ~straight & (np.linalg.norm(rq, axis=1) < AMBIGUOUS_RADIUS) & active
        ambiguous |= near_center
        active &= ~near_center

        phi = np.arctan2(r0[:, 0] * rq[:, 1] - r0[:, 1] * rq[:, 0], np.sum(r0 * rq, axis=1))
        ds = np.where(straight, np.sum((q - c) * tangent, axis=1), phi / safe_kappa)
        p = np.where(active, np.clip(p + ds / g, lo, hi), p)

    c = baseline.eval(p)
    tangent = baseline.eval_tangent(p)
    normal = np.column_stack([-tangent[:, 1], tangent[:, 0]])
    along = np.sum((q - c) * tangent, axis=1)
    n = np.sum((q - c) * normal, axis=1)
    clamped = ((p <= lo) & (along < -1e-9)) | ((p >= hi) & (along > 1e-9))
    return p, n, ambiguous, clamped


def project_point(baseline: Baseline, query, num_samples: int = 64) -> SplinePoint:
    """
    Closest point on the baseline, expressed as (p, n).

    The result is clamped to the domain; `clamped` marks queries whose foot
    point lies beyond either end.
    """
    q = np.asarray(query, dtype=float)
    if q.shape != (2,):
        raise ValueError("query must be an (x, y) pair")
    p, n, ambiguous, clamped = project_points(baseline, q[None, :], num_samples)
    return SplinePoint(p=float(p[0]), n=float(n[0]), ambiguous=bool(ambiguous[0]), clamped=bool(clamped[0]))


class Polyline:
    """Arclength-parametrized route line."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("polyline needs at least two (x, y) points")
        keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > COINCIDENT_TOL])
        pts = pts[keep]
        if len(pts) < 2:
            raise ValueError("polyline points are all coincident")
        self.points = pts
        seg = np.diff(pts, axis=0)
        self._seg_len = np.linalg.norm(seg, axis=1)
        self._seg_dir = seg / self._seg_len[:, None]
        self.stations = np.concatenate([[0.0], np.cumsum(self._seg_len)])

    @property
    def length(self) -> float:
        return float(self.stations[-1])

    def point_at(self, s) -> np.ndarray:
        """Point at station s; beyond either end the first/last segment is extended."""
        s = np.asarray(s, dtype=float)
        i = np.clip(np.searchsorted(self.stations, s, side='right') - 1, 0, len(self._seg_len) - 1)
        return self.points[i] + (s - self.stations[i])[..., None] * self._seg_dir[i]

    def heading_at(self, s):
        s = np.asarray(s, dtype=float)
        i = np.clip(np.searchsorted(self.stations, s, side='right') - 1, 0, len(self._seg_len) - 1)
        heading = np.arctan2(self._seg_dir[i, 1], self._seg_dir[i, 0])
        return float(heading) if np.ndim(heading) == 0 else heading

    def normal_at(self, s) -> np.ndarray:
        heading = np.asarray(self.heading_at(s))
        return np.stack([-np.sin(heading), np.cos(heading)], axis=-1)

    def project(self, x: float, y: float) -> Tuple[float, float]:
        """(station, signed lateral offset) of the nearest point."""
        q = np.array([x, y], dtype=float)
        rel = q - self.points[:-1]
        t = np.clip(np.sum(rel * self._seg_dir, axis=1), 0.0, self._seg_len)
        foot = self.points[:-1] + t[:, None] * self._seg_dir
        dist = np.linalg.norm(q - foot, axis=1)
        i = int(np.argmin(dist))
        d = self._seg_dir[i, 0] * rel[i, 1] - self._seg_dir[i, 1] * rel[i, 0]
        return float(self.stations[i] + t[i]), float(d)
