"""
Road boundaries: generation, CSV I/O and arc-length projection.

A road is sampled at stations; every station has a left point, a right
point, their midpoint on the centerline, and a half width. Closed tracks
repeat the first station at the end.

CSV format (UTF-8, header row):
  left_x,left_y,right_x,right_y
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.signal import savgol_filter

from .errors import ConfigurationError, PlanningError
from .geometry import ensure_ccw, point_segment_distance, points_in_polygon, polygon_area, project_to_polyline

CSV_HEADER = "left_x,left_y,right_x,right_y"
CLOSE_TOL = 1e-6
MIN_HALF_WIDTH = 1.0  # m, vehicle half-width proxy


@dataclass(frozen=True)
class RoadQuad:
    vertices: np.ndarray  # (4, 2) counterclockwise

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)


@dataclass(frozen=True, eq=False)
class RoadBoundary:
    left: np.ndarray
    right: np.ndarray
    closed: bool = False
    centerline: np.ndarray = field(init=False)
    half_widths: np.ndarray = field(init=False)
    s: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        left = np.asarray(self.left, dtype=float)
        right = np.asarray(self.right, dtype=float)
        if left.ndim != 2 or left.shape[1] != 2 or left.shape != right.shape:
            raise ConfigurationError(f"Left/right boundaries must both be (n, 2); got {left.shape} and {right.shape}")
        if len(left) < 2:
            raise ConfigurationError("A road needs at least two stations")
        center = 0.5 * (left + right)
        half = 0.5 * np.hypot(*(left - right).T)
        steps = np.hypot(*np.diff(center, axis=0).T)
        if np.any(half <= 0):
            raise ConfigurationError("Half widths must be positive at every station")
        if np.any(steps <= 0):
            raise ConfigurationError("Centerline stations must be strictly increasing in arc length")
        if self.closed:
            gap = max(np.hypot(*(left[0] - left[-1])), np.hypot(*(right[0] - right[-1])))
            if gap > CLOSE_TOL:
                raise ConfigurationError(f"Closed track does not close: first/last stations {gap:.3g} m apart")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "centerline", center)
        object.__setattr__(self, "half_widths", half)
        object.__setattr__(self, "s", np.concatenate([[0.0], np.cumsum(steps)]))

    # ---- basic geometry ----

    @property
    def n_stations(self) -> int:
        return len(self.centerline)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @cached_property
    def headings(self) -> np.ndarray:
        if self.closed:
            c = self.centerline[:-1]
            d = np.roll(c, -1, axis=0) - np.roll(c, 1, axis=0)
            h = np.arctan2(d[:, 1], d[:, 0])
            return np.append(h, h[0])
        d = np.gradient(self.centerline, axis=0)
        return np.arctan2(d[:, 1], d[:, 0])

    def quads(self) -> List[RoadQuad]:
        out = []
        for i in range(self.n_stations - 1):
            v = np.array([self.right[i], self.right[i + 1], self.left[i + 1], self.left[i]])
            out.append(RoadQuad(ensure_ccw(v)))
        return out

    @cached_property
    def quad_array(self) -> np.ndarray:
        return np.stack([q.vertices for q in self.quads()])

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Point-in-road test against the boundary polylines."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.closed:
            # annulus: exactly one of the two closed boundaries encloses the point
            return points_in_polygon(pts, self.left[:-1]) ^ points_in_polygon(pts, self.right[:-1])
        outline = np.vstack([self.right, self.left[::-1]])
        return points_in_polygon(pts, outline)

    def boundary_segments(self) -> Tuple[np.ndarray, np.ndarray]:
        """(starts, ends) of every boundary edge, end caps included for open roads."""
        if self.closed:
            a = np.vstack([self.left[:-1], self.right[:-1]])
            b = np.vstack([self.left[1:], self.right[1:]])
            return a, b
        outline = np.vstack([self.right, self.left[::-1]])
        return outline, np.roll(outline, -1, axis=0)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance to the road boundary, positive on the road."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        a, b = self.boundary_segments()
        dist = point_segment_distance(pts, a, b)
        return np.where(self.contains(pts), dist, -dist)

    def bounding_box(self, pad: float = 0.0) -> Tuple[float, float, float, float]:
        allp = np.vstack([self.left, self.right])
        lo, hi = allp.min(axis=0) - pad, allp.max(axis=0) + pad
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    # ---- arc length ----

    def point_at(self, s: float) -> np.ndarray:
        s = self.wrap(s)
        return np.array([np.interp(s, self.s, self.centerline[:, 0]), np.interp(s, self.s, self.centerline[:, 1])])

    def heading_at(self, s: float) -> float:
        i = int(np.clip(np.searchsorted(self.s, self.wrap(s), side="right") - 1, 0, self.n_stations - 2))
        d = self.centerline[i + 1] - self.centerline[i]
        return float(np.arctan2(d[1], d[0]))

    def half_width_at(self, s: float) -> float:
        return float(np.interp(self.wrap(s), self.s, self.half_widths))

    def cross_section(self, s: float) -> Tuple[np.ndarray, np.ndarray]:
        s = self.wrap(s)
        l = np.array([np.interp(s, self.s, self.left[:, k]) for k in range(2)])
        r = np.array([np.interp(s, self.s, self.right[:, k]) for k in range(2)])
        return l, r

    def wrap(self, s: float) -> float:
        if self.closed:
            return float(np.mod(s, self.length))
        return float(np.clip(s, 0.0, self.length))

    def nearest_station(self, point: Sequence[float]) -> Tuple[int, float, float]:
        """(segment index, arc length, signed lateral offset, left positive)."""
        i, t, _ = project_to_polyline(point, self.centerline)
        a, b = self.centerline[i], self.centerline[i + 1]
        foot = a + t * (b - a)
        tangent = (b - a) / np.hypot(*(b - a))
        q = np.asarray(point, dtype=float) - foot
        lateral = float(tangent[0] * q[1] - tangent[1] * q[0])
        s = float(self.s[i] + t * (self.s[i + 1] - self.s[i]))
        return i, s, lateral

    def lateral_margin(self, point: Sequence[float]) -> float:
        """Half width minus |lateral offset|; negative means off the road."""
        _, s, n = self.nearest_station(point)
        return self.half_width_at(s) - abs(n)

    # ---- transforms ----

    def resample(self, spacing: float = 2.0) -> "RoadBoundary":
        if spacing <= 0:
            raise ConfigurationError("Resampling spacing must be positive")
        s_new = np.arange(0.0, self.length, spacing)
        if self.length - s_new[-1] > 1e-9:
            s_new = np.append(s_new, self.length)
        left = np.column_stack([np.interp(s_new, self.s, self.left[:, k]) for k in range(2)])
        right = np.column_stack([np.interp(s_new, self.s, self.right[:, k]) for k in range(2)])
        if self.closed:
            left[-1], right[-1] = left[0], right[0]
        return RoadBoundary(left, right, closed=self.closed)

    def segment(self, s_start: float, s_end: float) -> "RoadBoundary":
        """Open sub-road between two arc lengths (closed tracks wrap)."""
        if s_end <= s_start:
            raise PlanningError("Segment end must lie after its start")
        idx_s = np.concatenate([self.s[:-1] + k * self.length for k in range(3)]) if self.closed else self.s
        s_pts = np.concatenate([[s_start], idx_s[(idx_s > s_start) & (idx_s < s_end)], [s_end]])
        left = np.array([self.cross_section(s)[0] for s in s_pts])
        right = np.array([self.cross_section(s)[1] for s in s_pts])
        keep = np.concatenate([[True], np.hypot(*np.diff(0.5 * (left + right), axis=0).T) > 1e-9])
        return RoadBoundary(left[keep], right[keep])


# ---------------------------
# Generator
# ---------------------------

def generate_road(
    seed: int,
    n_stations: int = 120,
    width_range: Tuple[float, float] = (3.0, 6.0),
    curvature_scale: float = 0.02,
    *,
    step: float = 5.0,
    savgol_window: int = 11,
    savgol_order: int = 3,
    n_knots: int = 6,
    curvature: Sequence[float] | None = None,
) -> RoadBoundary:
    """
    Random road: heading increments κ_i (interpolated random knots plus a
    per-station offset ε_i) integrate into a centerline of `step`-meter
    chords; five random half widths are interpolated and Savitzky–Golay
    smoothed, with both end stations pinned to the mean width.
    """
    wmin, wmax = float(width_range[0]), float(width_range[1])
    if not (0 < wmin <= wmax):
        raise ConfigurationError(f"Degenerate width_range {width_range}")
    if wmin <= MIN_HALF_WIDTH:
        raise ConfigurationError(f"Minimum half width {wmin} m does not fit the vehicle ({MIN_HALF_WIDTH} m)")
    if n_stations < 3:
        raise ConfigurationError("n_stations must be at least 3")

    rng = np.random.default_rng(seed)
    idx = np.arange(n_stations)
    if curvature is None:
        knots = rng.uniform(-curvature_scale, curvature_scale, n_knots)
        base = np.interp(idx, np.linspace(0, n_stations - 1, n_knots), knots)
        kappa = base + rng.uniform(-curvature_scale, curvature_scale, n_stations)
    else:
        kappa = np.broadcast_to(np.asarray(curvature, dtype=float), (n_stations,)).copy()

    theta = np.cumsum(kappa)
    center = np.zeros((n_stations, 2))
    center[1:, 0] = np.cumsum(step * np.cos(theta[1:]))
    center[1:, 1] = np.cumsum(step * np.sin(theta[1:]))

    mean_w = 0.5 * (wmin + wmax)
    pick = np.sort(rng.choice(np.arange(1, n_stations - 1), size=min(5, n_stations - 2), replace=False))
    wx = np.concatenate([[0], pick, [n_stations - 1]])
    wy = np.concatenate([[mean_w], rng.uniform(wmin, wmax, len(pick)), [mean_w]])
    widths = np.interp(idx, wx, wy)
    window = min(savgol_window, n_stations if n_stations % 2 else n_stations - 1)
    if window > savgol_order:
        widths = savgol_filter(widths, window, savgol_order, mode="interp")
    widths = np.clip(widths, wmin, wmax)

    normal = np.column_stack([-np.sin(theta), np.cos(theta)])
    left = center + widths[:, None] * normal
    right = center - widths[:, None] * normal
    logger.debug("Generated road seed={} stations={} length≈{:.1f} m", seed, n_stations, step * (n_stations - 1))
    return RoadBoundary(left, right)


# ---------------------------
# CSV I/O
# ---------------------------

def save_track(road: RoadBoundary, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = [CSV_HEADER]
    for l, r in zip(road.left, road.right):
        lines.append(",".join(repr(float(v)) for v in (l[0], l[1], r[0], r[1])))
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def load_track(path: str | Path, *, spacing: float | None = 2.0, closed: bool | None = None) -> RoadBoundary:
    """
    Read a boundary CSV and resample to uniform arc-length stations.
    `closed=None` detects closure from the first/last rows.
    """
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigurationError(f"Track file not found: {p}")
    rows = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if rows and rows[0].replace(" ", "") == CSV_HEADER:
        rows = rows[1:]
    data = []
    for n, ln in enumerate(rows, start=2):
        parts = ln.split(",")
        if len(parts) != 4:
            raise ConfigurationError(f"{p}:{n}: expected 4 columns, got {len(parts)}")
        try:
            data.append([float(v) for v in parts])
        except ValueError:
            raise ConfigurationError(f"{p}:{n}: non-numeric value in {ln!r}")
    arr = np.array(data, dtype=float).reshape(-1, 4)
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{p}: non-finite coordinates")
    left, right = arr[:, :2], arr[:, 2:]
    coincide = len(arr) > 2 and np.allclose(arr[0], arr[-1], atol=CLOSE_TOL, rtol=0)
    if closed is None:
        closed = bool(coincide)
    road = RoadBoundary(left, right, closed=closed)
    return road.resample(spacing) if spacing else road
