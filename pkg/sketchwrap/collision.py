"""
Convex polygon helpers: separating-axis overlap, containment and footprints.
"""
import math
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import ConvexHull


def rectangle(center: Tuple[float, float], heading: float, length: float, width: float) -> np.ndarray:
    """Counter-clockwise corners of an oriented rectangle."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
    return local @ np.array([[c, -s], [s, c]]).T + np.asarray(center, dtype=float)


def _axes(polygon: np.ndarray) -> np.ndarray:
    edges = np.roll(polygon, -1, axis=0) - polygon
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    lengths = np.linalg.norm(normals, axis=1)
    return normals[lengths > 1e-12] / lengths[lengths > 1e-12, None]


def _sat_axes(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Edge normals of both polygons and, per axis, whether it belongs to `a`."""
    axes_a, axes_b = _axes(a), _axes(b)
    owner_a = np.concatenate([np.ones(len(axes_a), dtype=bool), np.zeros(len(axes_b), dtype=bool)])
    return np.vstack([axes_a, axes_b]), owner_a


def polygons_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating axis test for two convex polygons (touching counts as overlap)."""
    for axis in _sat_axes(a, b)[0]:
        pa, pb = a @ axis, b @ axis
        if pa.min() > pb.max() or pb.min() > pa.max():
            return False
    return True


def point_in_convex(polygon: np.ndarray, points, strict: bool = False) -> np.ndarray:
    """Containment of points in a counter-clockwise convex polygon."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    edges = np.roll(polygon, -1, axis=0) - polygon
    rel = pts[:, None, :] - polygon[None, :, :]
    cross = edges[None, :, 0] * rel[..., 1] - edges[None, :, 1] * rel[..., 0]
    return np.all(cross > 0, axis=1) if strict else np.all(cross >= -1e-12, axis=1)


def contact_point(a: np.ndarray, b: np.ndarray) -> Optional[np.ndarray]:
    """
    Deepest penetration point of two overlapping polygons.

    The minimum-overlap separating axis picks a reference polygon (the axis
    owner, with ties going to the edges of `a`) and an incident one. The
    contact is the mean of the incident vertices reaching furthest into the
    reference along that axis and lying inside it. When none lies inside
    (edges crossing without a contained vertex) it is the mean of both
    centroids. None when they do not overlap.
    """
    axes, owner_a = _sat_axes(a, b)
    pa, pb = a @ axes.T, b @ axes.T
    overlap = np.minimum(pa.max(axis=0), pb.max(axis=0)) - np.maximum(pa.min(axis=0), pb.min(axis=0))
    if np.any(overlap < 0.0):
        return None
    best = int(np.argmin(overlap))
    reference, incident = (a, b) if owner_a[best] else (b, a)
    axis = axes[best]
    if axis @ (incident.mean(axis=0) - reference.mean(axis=0)) < 0.0:
        axis = -axis
    depth = incident @ axis
    deepest = incident[depth <= depth.min() + 1e-9]
    deepest = deepest[point_in_convex(reference, deepest)]
    if len(deepest):
        return deepest.mean(axis=0)
    return 0.5 * (a.mean(axis=0) + b.mean(axis=0))


def front_collision(av_rectangle: np.ndarray, av_heading: float, other: np.ndarray) -> bool:
    """Overlap whose contact lies in the front half of the AV rectangle."""
    contact = contact_point(av_rectangle, other)
    if contact is None:
        return False
    offset = contact - av_rectangle.mean(axis=0)
    return float(offset @ np.array([math.cos(av_heading), math.sin(av_heading)])) > 0.0


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise hull vertices."""
    pts = np.asarray(points, dtype=float)
    return pts[ConvexHull(pts).vertices]
