"""Planar polyline/polygon primitives (all coordinates in millimetres)."""

import math

import numpy as np


def rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def transform_points(points, pose):
    """Map garment-frame ``points`` to world through ``pose = (x, y, theta)``."""
    x, y, theta = pose
    pts = np.asarray(points, dtype=float)
    return pts @ rotation(theta).T + np.array([x, y])


def inverse_transform_points(points, pose):
    """Map world ``points`` back into the frame described by ``pose``."""
    x, y, theta = pose
    pts = np.asarray(points, dtype=float) - np.array([x, y])
    return pts @ rotation(theta)


def cumulative_length(polyline):
    pts = np.asarray(polyline, dtype=float)
    if len(pts) < 2:
        return np.zeros(len(pts))
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def polyline_length(polyline):
    return float(cumulative_length(polyline)[-1]) if len(polyline) else 0.0


def point_at_arclength(polyline, s, cumlen=None):
    """Interpolate positions at arc lengths ``s`` (scalar or array) along ``polyline``."""
    pts = np.asarray(polyline, dtype=float)
    if cumlen is None:
        cumlen = cumulative_length(pts)
    s_arr = np.clip(np.atleast_1d(np.asarray(s, dtype=float)), 0.0, cumlen[-1])
    idx = np.clip(np.searchsorted(cumlen, s_arr, side="right") - 1, 0, len(pts) - 2)
    seg_len = cumlen[idx + 1] - cumlen[idx]
    frac = np.divide(s_arr - cumlen[idx], seg_len, out=np.zeros_like(s_arr),
                     where=seg_len > 0)
    out = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])
    return out[0] if np.ndim(s) == 0 else out


def signed_area(polygon):
    """Shoelace area; positive for counter-clockwise vertex order."""
    p = np.asarray(polygon, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_centroid(polygon):
    """Area centroid of a simple polygon (closing vertex optional)."""
    p = np.asarray(polygon, dtype=float)
    if np.allclose(p[0], p[-1]):
        p = p[:-1]
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if abs(area) < 1e-12:
        return p.mean(axis=0)
    cx = np.sum((x + xn) * cross) / (6.0 * area)
    cy = np.sum((y + yn) * cross) / (6.0 * area)
    return np.array([cx, cy])


def points_in_polygon(points, polygon):
    """Even-odd containment test for many points; boundary points are unspecified."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = np.asarray(polygon, dtype=float)
    if not np.allclose(poly[0], poly[-1]):
        poly = np.vstack([poly, poly[:1]])
    px, py = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    for (x1, y1), (x2, y2) in zip(poly[:-1], poly[1:]):
        if y1 == y2:
            continue
        crosses = (y1 > py) != (y2 > py)
        x_int = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < x_int)
    return inside


def closest_points_on_polyline(points, polyline):
    """Distance from each point to ``polyline`` plus the nearest polyline points.

    Returns ``(dist, nearest, segment_index)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = np.asarray(polyline, dtype=float)
    a = poly[:-1]
    ab = poly[1:] - a
    ab2 = np.einsum("ij,ij->i", ab, ab)
    ab2 = np.where(ab2 > 0, ab2, 1.0)
    dist = np.empty(len(pts))
    nearest = np.empty((len(pts), 2))
    seg_idx = np.empty(len(pts), dtype=int)
    chunk = max(1, 200_000 // max(len(a), 1))
    for start in range(0, len(pts), chunk):
        p = pts[start:start + chunk]
        ap = p[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("pij,ij->pi", ap, ab) / ab2, 0.0, 1.0)
        proj = a[None, :, :] + t[..., None] * ab[None, :, :]
        d2 = np.sum((p[:, None, :] - proj) ** 2, axis=2)
        k = np.argmin(d2, axis=1)
        rows = np.arange(len(p))
        dist[start:start + chunk] = np.sqrt(d2[rows, k])
        nearest[start:start + chunk] = proj[rows, k]
        seg_idx[start:start + chunk] = k
    return dist, nearest, seg_idx


def signed_distance(points, polygon):
    """Distance to the polygon boundary, positive inside and negative outside."""
    dist, nearest, _ = closest_points_on_polyline(points, polygon)
    inside = points_in_polygon(points, polygon)
    return np.where(inside, dist, -dist), nearest


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_cross(p1, p2, q1, q2, eps=1e-12):
    d1, d2 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    d3, d4 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and \
            ((d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)):
        return True

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - eps <= c[0] <= max(a[0], b[0]) + eps
                and min(a[1], b[1]) - eps <= c[1] <= max(a[1], b[1]) + eps)

    if abs(d1) <= eps and on_seg(q1, q2, p1):
        return True
    if abs(d2) <= eps and on_seg(q1, q2, p2):
        return True
    if abs(d3) <= eps and on_seg(p1, p2, q1):
        return True
    if abs(d4) <= eps and on_seg(p1, p2, q2):
        return True
    return False


def is_simple_polygon(polygon):
    """True when the closed polygon has no self-intersections.

    Adjacent edges may share their common vertex; any other contact counts.
    """
    p = np.asarray(polygon, dtype=float)
    if np.allclose(p[0], p[-1]):
        p = p[:-1]
    n = len(p)
    if n < 3:
        return False
    edges = [(p[i], p[(i + 1) % n]) for i in range(n)]
    # bounding boxes prune the quadratic scan
    lo = np.array([np.minimum(a, b) for a, b in edges])
    hi = np.array([np.maximum(a, b) for a, b in edges])
    for i in range(n):
        overlap = np.all((lo[i + 1:] <= hi[i] + 1e-9) & (hi[i + 1:] >= lo[i] - 1e-9), axis=1)
        for j in np.nonzero(overlap)[0] + i + 1:
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(*edges[i], *edges[j]):
                return False
    return True
