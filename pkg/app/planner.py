"""
Envelope planner: chains rectangular blocks along a road and turns them
into a SpatialEnvelope.

Per block:
  1. an initializer proposes (L, W, C, θ) from the start point
     (greedy corridor scan scaled by 0.8, or the naive small centered block)
  2. optimize_block grows L·W under containment (SLSQP)
  3. the result is checked by clipping the rectangle against the road quads

The next block starts on the cross-section through the previous block
center; if the two rectangles do not overlap the start point is pulled back
toward the previous rear edge by halving.

C is the midpoint of the rear edge; the rectangle spans 2L forward along θ.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy.optimize import minimize

from .envelope import EnvelopeBlock, SpatialEnvelope, finalize_envelope, lse_aggregate
from .errors import ConfigurationError, PlanningError
from .geometry import intersection_area, rectangle_corners
from .road import RoadBoundary


class PlannerConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    init_scale: float = Field(0.8, gt=0, le=1)
    max_half_length: float = Field(40.0, gt=0)
    min_half_length: float = Field(1.0, gt=0)
    scan_step: float = Field(0.5, gt=0)
    shrink: float = Field(0.9, gt=0, lt=1)
    max_shrink: int = Field(80, ge=1)
    feasibility_tol: float = Field(1e-6, ge=0)
    perimeter_samples: int = Field(12, ge=2)  # per side
    vertex_rho: float = Field(400.0, gt=0)
    theta_range: float = Field(0.6, gt=0)
    max_iter: int = Field(100, ge=1)
    bisections: int = Field(5, ge=0)
    max_backoffs: int = Field(6, ge=1)
    end_tolerance: float = Field(1.0, ge=0)
    segment_back: float = Field(10.0, ge=0)
    boundary_resolution: float = Field(0.25, gt=0)
    naive_half_length: float = Field(1.0, gt=0)
    naive_width_scale: float = Field(0.3, gt=0, lt=1)
    max_blocks: int = Field(500, ge=1)

    @classmethod
    def from_mapping(cls, data: dict | None) -> "PlannerConfig":
        try:
            return cls(**(data or {}))
        except ValidationError as e:
            raise ConfigurationError(f"Invalid planner config: {e}") from e


DEFAULT_CONFIG = PlannerConfig()


# ---------------------------
# Block design
# ---------------------------

@dataclass(frozen=True)
class BlockDesign:
    L: float
    W: float
    C: Tuple[float, float]
    theta: float
    status: str = "init"

    def __post_init__(self) -> None:
        if not (self.L > 0 and self.W > 0):
            raise PlanningError(f"Block half extents must be positive, got L={self.L} W={self.W}")
        object.__setattr__(self, "C", (float(self.C[0]), float(self.C[1])))

    @property
    def direction(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    @property
    def normal(self) -> np.ndarray:
        return np.array([-math.sin(self.theta), math.cos(self.theta)])

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.C) + self.L * self.direction

    @property
    def front(self) -> np.ndarray:
        return np.asarray(self.C) + 2.0 * self.L * self.direction

    @property
    def lw(self) -> float:
        return self.L * self.W

    @property
    def rect_area(self) -> float:
        return 4.0 * self.L * self.W

    def corners(self) -> np.ndarray:
        cx, cy = self.center
        return rectangle_corners(cx, cy, self.theta, self.L, self.W)

    def to_block(self, p: int = 4) -> EnvelopeBlock:
        cx, cy = self.center
        return EnvelopeBlock(float(cx), float(cy), float(self.theta), float(self.L), float(self.W), p)


@dataclass(frozen=True)
class BlockReport:
    index: int
    L: float
    W: float
    lw: float
    A_in: float
    A_out: float
    chi: float
    status: str
    init_lw: float = float("nan")  # L·W of the seed the optimizer started from


@dataclass(frozen=True)
class EnvelopePlan:
    designs: Tuple[BlockDesign, ...]
    reports: Tuple[BlockReport, ...]
    elapsed_s: float
    envelope: Optional[SpatialEnvelope] = None


Initializer = Callable[[RoadBoundary, Sequence[float], PlannerConfig], BlockDesign]


# ---------------------------
# Areas / reward
# ---------------------------

def block_area_split(block: BlockDesign, road: RoadBoundary) -> Tuple[float, float]:
    """(A_in, A_out): rectangle area inside / outside the road, by clipping every nearby quad."""
    rect = block.corners()
    quads = road.quad_array
    centroids = quads.mean(axis=1)
    radius = np.max(np.hypot(*(quads - centroids[:, None, :]).transpose(2, 0, 1)), axis=1)
    near = np.hypot(*(centroids - block.center).T) <= radius + math.hypot(block.L, block.W)
    a_in = sum(intersection_area(q, rect) for q in quads[near])
    total = block.rect_area
    a_in = min(float(a_in), total)
    return a_in, max(total - a_in, 0.0)


def reward_from_areas(L: float, A_in: float, A_out: float) -> float:
    return (A_in - A_out) * 2.0 * L


def reward(block: BlockDesign, road: RoadBoundary) -> float:
    a_in, a_out = block_area_split(block, road)
    return reward_from_areas(block.L, a_in, a_out)


def is_feasible(block: BlockDesign, road: RoadBoundary, tol: float = 1e-6) -> bool:
    _, a_out = block_area_split(block, road)
    return a_out <= tol * block.rect_area


def block_report(index: int, block: BlockDesign, road: RoadBoundary, seed: BlockDesign | None = None) -> BlockReport:
    a_in, a_out = block_area_split(block, road)
    init_lw = seed.lw if seed is not None else float("nan")
    return BlockReport(index, block.L, block.W, block.lw, a_in, a_out, reward_from_areas(block.L, a_in, a_out), block.status, init_lw)


# ---------------------------
# Initializers
# ---------------------------

def _start_frame(road: RoadBoundary, start_point: Sequence[float]) -> Tuple[float, float, np.ndarray, float]:
    """(s, θ, C, usable half width) for a start point on a cross-section."""
    _, s, lateral = road.nearest_station(start_point)
    if not road.closed and s >= road.length - 1e-9:
        raise PlanningError(f"Start point {tuple(start_point)} lies at or beyond the road end")
    left, right = road.cross_section(s)
    across = left - right
    theta = math.atan2(-across[0], across[1])
    usable = 0.5 * float(np.hypot(*across)) - abs(lateral)
    if usable <= 0:
        raise PlanningError(f"Start point {tuple(start_point)} is not on the road")
    return s, theta, np.asarray(start_point, dtype=float), usable


def _greedy_length(road: RoadBoundary, s0: float, C: np.ndarray, theta: float, W: float, cfg: PlannerConfig) -> float:
    """Distance along θ over which a band of half width W stays inside the road."""
    limit = 2.0 * cfg.max_half_length / cfg.init_scale
    ss = s0 + np.arange(cfg.scan_step, limit + cfg.scan_step, cfg.scan_step)
    if road.closed:
        sw = np.mod(ss, road.length)
    else:
        reaches_end = s0 + limit >= road.length
        ss = ss[ss < road.length]
        sw = np.append(ss, road.length) if reaches_end else ss
    pts = np.column_stack([np.interp(sw, road.s, road.centerline[:, k]) for k in range(2)])
    w = np.interp(sw, road.s, road.half_widths)
    rel = pts - C
    along = rel @ np.array([math.cos(theta), math.sin(theta)])
    lateral = rel @ np.array([-math.sin(theta), math.cos(theta)])
    ok = (np.abs(lateral) + W <= w) & (along > 0) & (np.diff(along, prepend=0.0) > 0)
    bad = np.flatnonzero(~ok)
    last = (bad[0] if len(bad) else len(ok)) - 1
    return float(along[last]) if last >= 0 else 0.0


def _shrink_until_feasible(block: BlockDesign, road: RoadBoundary, cfg: PlannerConfig) -> BlockDesign:
    for _ in range(cfg.max_shrink):
        if is_feasible(block, road, cfg.feasibility_tol):
            return block
        block = replace(block, L=block.L * cfg.shrink, W=block.W * cfg.shrink)
    raise PlanningError(f"No feasible block found at C={block.C}")


def init_block_heuristic(road: RoadBoundary, start_point: Sequence[float], config: PlannerConfig | None = None) -> BlockDesign:
    """
    Feasible seed: θ normal to the start cross-section, W = 0.8 of the usable
    half width, 2L = 0.8 of the greedy corridor length (capped), then shrunk
    by 0.9 until clipping finds no area outside the road.
    """
    cfg = config or DEFAULT_CONFIG
    s0, theta, C, usable = _start_frame(road, start_point)
    W = cfg.init_scale * usable
    ell = _greedy_length(road, s0, C, theta, W, cfg)
    L = min(0.5 * cfg.init_scale * ell, cfg.max_half_length)
    if L <= 0:
        L = cfg.min_half_length * cfg.init_scale
    return _shrink_until_feasible(BlockDesign(L, W, tuple(C), theta), road, cfg)


def naive_block_init(road: RoadBoundary, start_point: Sequence[float], config: PlannerConfig | None = None) -> BlockDesign:
    """Small centered block; the optimization-only baseline."""
    cfg = config or DEFAULT_CONFIG
    _, theta, C, usable = _start_frame(road, start_point)
    block = BlockDesign(cfg.naive_half_length, cfg.naive_width_scale * usable, tuple(C), theta)
    return _shrink_until_feasible(block, road, cfg)


# ---------------------------
# Optimizer
# ---------------------------

def _perimeter(block: BlockDesign, n: int) -> np.ndarray:
    corners = block.corners()
    t = np.linspace(0.0, 1.0, n, endpoint=False)[:, None]
    sides = [corners[i] + t * (corners[(i + 1) % 4] - corners[i]) for i in range(4)]
    return np.vstack(sides)


def optimize_block(init: BlockDesign, road: RoadBoundary, config: PlannerConfig | None = None) -> BlockDesign:
    """
    Maximize L·W over (L, W, lateral shift of C, θ). Containment: perimeter
    samples have non-negative signed distance to the road boundary, and every
    boundary vertex stays outside the rectangle (a conservative smooth max of
    the normalized local coordinates is at least 1).
    """
    cfg = config or DEFAULT_CONFIG
    _, s0, _ = road.nearest_station(init.C)
    local = road.segment(s0 - cfg.segment_back, s0 + 2.0 * cfg.max_half_length + cfg.segment_back)
    verts = np.vstack([local.left, local.right])
    C0, n0 = np.asarray(init.C), init.normal
    lw0 = init.lw
    wmax = float(np.max(local.half_widths)) * 2.0
    offset = math.log(4.0) / cfg.vertex_rho

    def design(q: np.ndarray) -> BlockDesign:
        return BlockDesign(max(q[0], 1e-6), max(q[1], 1e-6), tuple(C0 + q[2] * n0), float(q[3]), "ok")

    def objective(q: np.ndarray) -> float:
        return -q[0] * q[1] / lw0

    def inside(q: np.ndarray) -> np.ndarray:
        return local.signed_distance(_perimeter(design(q), cfg.perimeter_samples)) + 1e-9

    def outside(q: np.ndarray) -> np.ndarray:
        b = design(q)
        rel = verts - b.center
        a = rel @ b.direction / b.L
        c = rel @ b.normal / b.W
        return lse_aggregate(np.stack([a, -a, c, -c]), cfg.vertex_rho, axis=0) - offset - 1.0

    q0 = np.array([init.L, init.W, 0.0, init.theta])
    bounds = [
        (cfg.min_half_length, max(cfg.max_half_length, init.L)),
        (1e-3, wmax),
        (-wmax, wmax),
        (init.theta - cfg.theta_range, init.theta + cfg.theta_range),
    ]
    res = minimize(
        objective,
        q0,
        method="SLSQP",
        bounds=bounds,
        constraints=[{"type": "ineq", "fun": inside}, {"type": "ineq", "fun": outside}],
        options={"maxiter": cfg.max_iter, "ftol": 1e-9},
    )

    def accept(b: BlockDesign) -> bool:
        return b.lw >= lw0 and is_feasible(b, road, cfg.feasibility_tol)

    best = design(res.x) if np.all(np.isfinite(res.x)) else None
    if best is not None and accept(best):
        return best
    if best is not None and res.success and best.lw >= lw0 * (1 - 1e-9) and best.lw < lw0:
        return replace(init, status="ok")

    if best is not None:
        for m in range(1, cfg.bisections + 1):
            t = 0.5 ** m
            cand = replace(design(q0 + t * (res.x - q0)), status="bisected")
            if accept(cand):
                logger.debug("Block at C={} accepted after {} bisections", init.C, m)
                return cand
    logger.warning("Block optimization failed at C=({:.2f}, {:.2f}): {}; keeping the initial design", init.C[0], init.C[1], res.message)
    return replace(init, status="fallback")


# ---------------------------
# Chaining
# ---------------------------

def _unrolled(road: RoadBoundary, point: Sequence[float], ref: float) -> float:
    """Arc length of `point`, unrolled to lie within half a lap of `ref`."""
    _, s, _ = road.nearest_station(point)
    if not road.closed:
        return s
    delta = (s - ref) % road.length
    if delta > 0.5 * road.length:
        delta -= road.length
    return ref + delta


def _overlaps(a: BlockDesign, b: BlockDesign) -> bool:
    return intersection_area(a.corners(), b.corners()) > 1e-9 * min(a.rect_area, b.rect_area)


def design_envelope(
    road: RoadBoundary,
    block_norm_p: int = 4,
    rho_lse: float = -15.0,
    config: PlannerConfig | None = None,
    initializer: Initializer = init_block_heuristic,
    *,
    finalize: bool = True,
) -> EnvelopePlan:
    """Plan the block chain and (optionally) finalize it into an envelope with ε₀."""
    cfg = config or DEFAULT_CONFIG
    if road.length < 2.0 * cfg.min_half_length:
        raise PlanningError(f"Road of {road.length:.2f} m is too short for a single block")
    t0 = time.perf_counter()

    seeds: List[BlockDesign] = []

    def place(point: Sequence[float]) -> Tuple[BlockDesign, BlockDesign]:
        seed = initializer(road, point, cfg)
        return seed, optimize_block(seed, road, cfg)

    start = road.point_at(0.0)
    seed0, first = place(start)
    seeds.append(seed0)
    designs: List[BlockDesign] = [first]
    s_start = 0.0
    first_center = _unrolled(road, designs[0].center, 0.0)

    while True:
        last = designs[-1]
        front = _unrolled(road, last.front, s_start)
        if road.closed:
            if front >= road.length + first_center:
                break
        elif front >= road.length - cfg.end_tolerance:
            break
        if len(designs) >= cfg.max_blocks:
            raise PlanningError(f"Envelope planning exceeded {cfg.max_blocks} blocks")

        nxt = None
        for m in range(cfg.max_backoffs + 1):
            S = np.asarray(last.C) + (last.L / 2 ** m) * last.direction
            s_next = _unrolled(road, S, s_start)
            if s_next <= s_start + 1e-3:
                break
            point = road.point_at(s_next)
            if not road.closed and road.wrap(s_next) >= road.length - 1e-9:
                break
            seed, cand = place(point)
            if _overlaps(last, cand):
                nxt = (cand, s_next, seed)
                break
            logger.warning("Block {} does not overlap its predecessor; pulling the start back ({}/{})", len(designs), m + 1, cfg.max_backoffs)
        if nxt is None:
            raise PlanningError(f"Could not place an overlapping block after block {len(designs) - 1}")
        designs.append(nxt[0])
        seeds.append(nxt[2])
        s_start = nxt[1]

    reports = tuple(block_report(i, d, road, s) for i, (d, s) in enumerate(zip(designs, seeds)))
    envelope = None
    if finalize:
        blocks = [d.to_block(block_norm_p) for d in designs]
        envelope = finalize_envelope(
            blocks,
            rho_lse,
            edges=(road.left, road.right),
            resolution=cfg.boundary_resolution,
            closed=road.closed,
        )
    elapsed = time.perf_counter() - t0
    logger.info("Planned {} blocks over {:.1f} m in {:.2f}s", len(designs), road.length, elapsed)
    return EnvelopePlan(tuple(designs), reports, elapsed, envelope)


def plan_envelope(
    road: RoadBoundary,
    block_norm_p: int = 4,
    rho_lse: float = -15.0,
    config: PlannerConfig | None = None,
    initializer: Initializer = init_block_heuristic,
) -> SpatialEnvelope:
    plan = design_envelope(road, block_norm_p, rho_lse, config, initializer)
    assert plan.envelope is not None
    return plan.envelope


# ---------------------------
# Comparison
# ---------------------------

@dataclass(frozen=True)
class PlannerComparison:
    road_index: int
    heuristic_s: float
    naive_s: float
    heuristic_blocks: int
    naive_blocks: int

    @property
    def heuristic_faster(self) -> bool:
        return self.heuristic_s < self.naive_s


def compare_planners(roads: Sequence[RoadBoundary], config: PlannerConfig | None = None) -> List[PlannerComparison]:
    """Block-design time with the heuristic seed vs the naive seed, per road."""
    out = []
    for i, road in enumerate(roads):
        guided = design_envelope(road, config=config, initializer=init_block_heuristic, finalize=False)
        naive = design_envelope(road, config=config, initializer=naive_block_init, finalize=False)
        out.append(PlannerComparison(i, guided.elapsed_s, naive.elapsed_s, len(guided.designs), len(naive.designs)))
    wins = sum(c.heuristic_faster for c in out)
    logger.info("Heuristic seeding faster on {}/{} roads", wins, len(out))
    return out
