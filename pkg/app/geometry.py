"""
Planar polygon helpers: convex clipping, shoelace area, point-in-polygon.

Polygons are (n, 2) float arrays or lists of (x, y); clip regions must be
convex and counterclockwise.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

Point = Tuple[float, float]


def polygon_area(poly: Sequence[Point]) -> float:
    """Signed shoelace area, positive for counterclockwise vertex order."""
    p = np.asarray(poly, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def ensure_ccw(poly: Sequence[Point]) -> np.ndarray:
    p = np.asarray(poly, dtype=float)
    return p[::-1].copy() if polygon_area(p) < 0 else p


def clip_polygon(subject: Sequence[Point], clip: Sequence[Point]) -> List[Point]:
    """
    Sutherland–Hodgman: the part of `subject` inside the convex CCW `clip`.
    Returns an empty list when they do not intersect.
    """
    output: List[Point] = [(float(a), float(b)) for a, b in subject]
    clip_pts = [(float(a), float(b)) for a, b in clip]
    if not output or not clip_pts:
        return []

    def inside(p: Point, c1: Point, c2: Point) -> bool:
        return (c2[0] - c1[0]) * (p[1] - c1[1]) - (c2[1] - c1[1]) * (p[0] - c1[0]) >= 0.0

    def intersection(s: Point, e: Point, c1: Point, c2: Point) -> Point:
        dc = (c1[0] - c2[0], c1[1] - c2[1])
        dp = (s[0] - e[0], s[1] - e[1])
        n1 = c1[0] * c2[1] - c1[1] * c2[0]
        n2 = s[0] * e[1] - s[1] * e[0]
        den = dc[0] * dp[1] - dc[1] * dp[0]
        if den == 0.0:
            return e
        return ((n1 * dp[0] - n2 * dc[0]) / den, (n1 * dp[1] - n2 * dc[1]) / den)

    c1 = clip_pts[-1]
    for c2 in clip_pts:
        if not output:
            return []
        inputs, output = output, []
        s = inputs[-1]
        for e in inputs:
            if inside(e, c1, c2):
                if not inside(s, c1, c2):
                    output.append(intersection(s, e, c1, c2))
                output.append(e)
            elif inside(s, c1, c2):
                output.append(intersection(s, e, c1, c2))
            s = e
        c1 = c2
    return output


def intersection_area(a: Sequence[Point], b: Sequence[Point]) -> float:
    """Area of a ∩ b where b is convex (either orientation)."""
    piece = clip_polygon(ensure_ccw(a), ensure_ccw(b))
    return abs(polygon_area(piece)) if len(piece) >= 3 else 0.0


def rectangle_corners(cx: float, cy: float, theta: float, L: float, W: float) -> np.ndarray:
    """CCW corners of the rectangle with half extents (L, W) rotated by theta."""
    c, s = np.cos(theta), np.sin(theta)
    local = np.array([[-L, -W], [L, -W], [L, W], [-L, W]], dtype=float)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def points_in_polygon(points: np.ndarray, poly: Sequence[Point]) -> np.ndarray:
    """Even-odd ray casting, vectorized over points (m, 2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    p = np.asarray(poly, dtype=float)
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x1, y1 = p[:, 0][None, :], p[:, 1][None, :]
    x2, y2 = np.roll(p[:, 0], -1)[None, :], np.roll(p[:, 1], -1)[None, :]
    straddles = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    hits = straddles & (x < x_cross)
    return (np.count_nonzero(hits, axis=1) % 2) == 1


def project_to_polyline(point: Sequence[float], line: np.ndarray) -> Tuple[int, float, float]:
    """
    Nearest point on a polyline: (segment index, fraction along it, distance).
    """
    q = np.asarray(point, dtype=float)
    a = line[:-1]
    d = line[1:] - a
    dd = np.einsum("ij,ij->i", d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dd > 0, np.einsum("ij,ij->i", q - a, d) / dd, 0.0)
    t = np.clip(t, 0.0, 1.0)
    foot = a + t[:, None] * d
    dist = np.hypot(*(foot - q).T)
    i = int(np.argmin(dist))
    return i, float(t[i]), float(dist[i])


def segment_intersections(p0: np.ndarray, p1: np.ndarray, q0: np.ndarray, q1: np.ndarray) -> np.ndarray:
    """
    Pairwise proper intersections between segments p0→p1 (n, 2) and q0→q1 (m, 2).
    Returns the (k, 2) crossing points.
    """
    r = (p1 - p0)[:, None, :]
    s = (q1 - q0)[None, :, :]
    qp = q0[None, :, :] - p0[:, None, :]
    den = r[..., 0] * s[..., 1] - r[..., 1] * s[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[..., 0] * s[..., 1] - qp[..., 1] * s[..., 0]) / den
        u = (qp[..., 0] * r[..., 1] - qp[..., 1] * r[..., 0]) / den
    ok = (den != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    i, j = np.nonzero(ok)
    return p0[i] + t[i, j][:, None] * (p1 - p0)[i]


def point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point (m, 2) to the nearest of the segments a→b (s, 2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    rel = pts[:, None, :] - a[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dd > 0, np.einsum("mij,ij->mi", rel, d) / dd, 0.0)
    t = np.clip(t, 0.0, 1.0)
    foot = a[None, :, :] + t[..., None] * d[None, :, :]
    return np.min(np.hypot(*(pts[:, None, :] - foot).transpose(2, 0, 1)), axis=1)
