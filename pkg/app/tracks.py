"""
Built-in track library plus the collision-avoidance envelope layout.

Tracks are generated, not stored; `export_tracks` writes them as boundary
CSVs (see road.py for the format). ENV:
  ENVMPC_TRACKS_DIR   default export directory (data/tracks)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np
from loguru import logger

from .envelope import EnvelopeBlock, SpatialEnvelope, finalize_envelope
from .errors import ConfigurationError
from .road import RoadBoundary, save_track
from .settings import settings


def _road_from_centerline(center: np.ndarray, half_width, closed: bool) -> RoadBoundary:
    c = np.asarray(center, dtype=float)
    w = np.broadcast_to(np.asarray(half_width, dtype=float), (len(c),))
    if closed:
        d = np.roll(c, -1, axis=0) - np.roll(c, 1, axis=0)
    else:
        d = np.gradient(c, axis=0)
    d = d / np.hypot(*d.T)[:, None]
    normal = np.column_stack([-d[:, 1], d[:, 0]])
    left = c + w[:, None] * normal
    right = c - w[:, None] * normal
    if closed:
        left = np.vstack([left, left[:1]])
        right = np.vstack([right, right[:1]])
    return RoadBoundary(left, right, closed=closed)


def oval_track(straight: float = 100.0, radius: float = 35.0, half_width: float = 5.0, spacing: float = 1.0) -> RoadBoundary:
    """Counterclockwise oval: bottom straight along +x, then two half circles."""
    if radius <= half_width:
        raise ConfigurationError(f"Oval radius {radius} m must exceed the half width {half_width} m")
    arc = math.pi * radius
    total = 2 * straight + 2 * arc
    s = np.arange(0.0, total, spacing)
    pts = np.empty((len(s), 2))
    for i, si in enumerate(s):
        if si < straight:
            pts[i] = (si, -radius)
        elif si < straight + arc:
            phi = -0.5 * math.pi + (si - straight) / radius
            pts[i] = (straight + radius * math.cos(phi), radius * math.sin(phi))
        elif si < 2 * straight + arc:
            pts[i] = (straight - (si - straight - arc), radius)
        else:
            phi = 0.5 * math.pi + (si - 2 * straight - arc) / radius
            pts[i] = (radius * math.cos(phi), radius * math.sin(phi))
    return _road_from_centerline(pts, half_width, closed=True)


def circuit_track(length: float = 2450.0, half_width: float = 6.0, n_points: int = 1400) -> RoadBoundary:
    """
    Closed circuit r(φ) = R0(1 + 0.25 cos 2φ + 0.1 sin 3φ + 0.05 cos 5φ), scaled
    to the requested centerline length.
    """
    phi = np.linspace(0.0, 2 * math.pi, n_points, endpoint=False)
    r = 1.0 + 0.25 * np.cos(2 * phi) + 0.1 * np.sin(3 * phi) + 0.05 * np.cos(5 * phi)
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    perimeter = float(np.sum(np.hypot(*(np.roll(pts, -1, axis=0) - pts).T)))
    return _road_from_centerline(pts * (length / perimeter), half_width, closed=True)


def cis_highway(
    length: float = 300.0,
    lane_width: float = 3.7,
    straight: float = 60.0,
    radius: float = 800.0,
    spacing: float = 1.0,
) -> RoadBoundary:
    """Two-lane road: a straight then a gentle left-hand arc. The road centerline is the lane divider."""
    s = np.arange(0.0, length + 0.5 * spacing, spacing)
    pts = np.empty((len(s), 2))
    for i, si in enumerate(s):
        if si <= straight:
            pts[i] = (si, 0.0)
        else:
            phi = (si - straight) / radius
            pts[i] = (straight + radius * math.sin(phi), radius * (1.0 - math.cos(phi)))
    return _road_from_centerline(pts, lane_width, closed=False)


def sinusoidal_trail(
    amplitude: float = 5.0,
    wavelength: float = 60.0,
    half_width: float = 3.0,
    x_start: float = -10.0,
    x_end: float = 130.0,
    spacing: float = 0.5,
) -> RoadBoundary:
    x = np.arange(x_start, x_end + 0.5 * spacing, spacing)
    y = amplitude * np.sin(2 * math.pi * x / wavelength)
    return _road_from_centerline(np.column_stack([x, y]), half_width, closed=False)


TRACKS: Dict[str, Callable[..., RoadBoundary]] = {
    "oval": oval_track,
    "circuit": circuit_track,
    "cis": cis_highway,
    "trail": sinusoidal_trail,
}


def build_track(name: str, **kwargs) -> RoadBoundary:
    try:
        factory = TRACKS[name]
    except KeyError:
        raise ConfigurationError(f"Unknown track {name!r}; known: {', '.join(sorted(TRACKS))}")
    return factory(**kwargs)


def export_tracks(out_dir: str | Path | None = None) -> List[Path]:
    out = Path(out_dir or settings.tracks_dir)
    paths = [save_track(factory(), out / f"{name}.csv") for name, factory in TRACKS.items()]
    logger.info("Exported {} tracks to {}", len(paths), out)
    return paths


# ---------------------------
# Collision-avoidance envelope
# ---------------------------

@dataclass(frozen=True)
class Obstacle:
    """A stopped vehicle blocking one lane over an arc-length interval."""

    s_start: float
    s_end: float
    lane: str = "right"

    def __post_init__(self) -> None:
        if self.s_end <= self.s_start:
            raise ConfigurationError(f"Obstacle interval [{self.s_start}, {self.s_end}] is empty")
        if self.lane not in ("left", "right"):
            raise ConfigurationError(f"Obstacle lane must be 'left' or 'right', got {self.lane!r}")

    def blocks_point(self, s: float, lateral: float) -> bool:
        in_lane = lateral < 0 if self.lane == "right" else lateral > 0
        return in_lane and self.s_start <= s <= self.s_end


def _blocks_along(road: RoadBoundary, s_from: float, s_to: float, offset: float, W: float, L: float, p: int) -> List[Tuple[float, EnvelopeBlock]]:
    blocks = []
    for s in np.arange(s_from, s_to + 1e-9, L):
        c = road.point_at(s)
        psi = road.heading_at(s)
        n = np.array([-math.sin(psi), math.cos(psi)])
        x, y = c + offset * n
        blocks.append((float(s), EnvelopeBlock(float(x), float(y), psi, L, W, p)))
    return blocks


def cis_envelope(
    road: RoadBoundary,
    obstacle: Obstacle,
    lane_width: float = 3.7,
    block_half_length: float = 10.0,
    p: int = 4,
    rho_lse: float = -15.0,
    lead: float = 40.0,
    edge_clearance: float = 0.1,
) -> SpatialEnvelope:
    """
    Full-width blocks up to the obstacle, then blocks in the free lane from
    `lead` meters before it to the road end. Consecutive blocks overlap by half.
    """
    L = block_half_length
    sag = (2 * L) ** 2 / 8.0 * float(np.max(np.abs(np.diff(np.unwrap(road.headings)) / np.diff(road.s))))
    full_w = lane_width - sag - edge_clearance
    lane_w = 0.5 * lane_width - sag - edge_clearance
    if lane_w <= 0:
        raise ConfigurationError("Lane too narrow for the requested block length")
    free = 0.5 * lane_width if obstacle.lane == "right" else -0.5 * lane_width

    tagged = _blocks_along(road, L, obstacle.s_start - L, 0.0, full_w, L, p)
    tagged += _blocks_along(road, max(L, obstacle.s_start - lead), road.length - L, free, lane_w, L, p)
    # arc-length order keeps block_window looking ahead
    blocks = [b for _, b in sorted(tagged, key=lambda t: t[0])]
    logger.info("CIS envelope: {} blocks, obstacle at s=[{:.1f}, {:.1f}] in the {} lane", len(blocks), obstacle.s_start, obstacle.s_end, obstacle.lane)
    return finalize_envelope(blocks, rho_lse, edges=(road.left, road.right))
