"""
Spatial-envelope constraints.

The drivable region is a union of p-norm blocks (superellipses). Inside the
NLP the union is replaced by a LogSumExp aggregate with negative gain, which
lies below the exact min over blocks; the offset ε₀ (the lowest aggregate
value found on the safety boundary) shifts the smooth constraint back so its
feasible set stays inside the union.

Also here: the linear bound set (box limits, friction-derived ax limits,
power limit) and the envelope text format:

  # rho_lse -15.0
  # p 4
  # epsilon0 -0.046
  # closed 0
  xb yb psib Lb Wb        (one block per line)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import casadi as ca
import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import root

from .errors import ConfigurationError
from .geometry import segment_intersections
from .vehicle import VehicleParams

DUMMY_OFFSET = 1.0e6  # m, where padding blocks are parked


# ---------------------------
# Blocks
# ---------------------------

@dataclass(frozen=True)
class EnvelopeBlock:
    xb: float
    yb: float
    psib: float
    Lb: float
    Wb: float
    p: int = 4

    def __post_init__(self) -> None:
        if not (self.Lb > 0 and self.Wb > 0):
            raise ConfigurationError(f"Block half extents must be positive, got Lb={self.Lb} Wb={self.Wb}")
        if int(self.p) != self.p or self.p < 2 or self.p % 2:
            raise ConfigurationError(f"Block norm order must be an even integer >= 2, got {self.p}")

    def as_row(self) -> Tuple[float, float, float, float, float]:
        return (self.xb, self.yb, self.psib, self.Lb, self.Wb)

    def outline(self, n: int = 200) -> np.ndarray:
        """Points on the superellipse boundary, counterclockwise."""
        t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        c, s = np.cos(t), np.sin(t)
        e = 2.0 / self.p
        a = np.sign(c) * np.abs(c) ** e * self.Lb
        b = np.sign(s) * np.abs(s) ** e * self.Wb
        cp, sp = np.cos(self.psib), np.sin(self.psib)
        return np.column_stack([self.xb + cp * a - sp * b, self.yb + sp * a + cp * b])

    def perimeter_estimate(self) -> float:
        # between the inscribed ellipse and the bounding rectangle
        return 4.0 * (self.Lb + self.Wb)


def dummy_block(k: int, p: int = 4) -> EnvelopeBlock:
    return EnvelopeBlock(DUMMY_OFFSET + 10.0 * k, DUMMY_OFFSET, 0.0, 1.0, 1.0, p)


def block_distance_from_row(x, y, row, p: int):
    """block_distance for a raw (xb, yb, psib, Lb, Wb) row, which may be symbolic."""
    xb, yb, psib, Lb, Wb = (row[i] for i in range(5))
    if isinstance(psib, (ca.SX, ca.MX)):
        c, s = ca.cos(psib), ca.sin(psib)
    else:
        c, s = np.cos(psib), np.sin(psib)
    dx, dy = x - xb, y - yb
    a = (c * dx + s * dy) / Lb
    b = (-s * dx + c * dy) / Wb
    return (a**p + b**p) ** (1.0 / p) - 1.0


def block_distance(x, y, block: EnvelopeBlock):
    """
    d_b − 1 with d_b the p-norm of the point in the block frame scaled by
    (Lb, Wb). Non-positive inside. Works on floats, arrays and casadi symbols.
    """
    return block_distance_from_row(x, y, block.as_row(), int(block.p))


def block_distance_gradient(x, y, block: EnvelopeBlock) -> np.ndarray:
    """(∂g/∂x, ∂g/∂y), stacked on the last axis."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    dx, dy = x - block.xb, y - block.yb
    c, s = np.cos(block.psib), np.sin(block.psib)
    a = (c * dx + s * dy) / block.Lb
    b = (-s * dx + c * dy) / block.Wb
    p = int(block.p)
    d = (a**p + b**p) ** (1.0 / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        da = a ** (p - 1) * d ** (1 - p)
        db = b ** (p - 1) * d ** (1 - p)
    gx = da * c / block.Lb - db * s / block.Wb
    gy = da * s / block.Lb + db * c / block.Wb
    return np.stack([gx, gy], axis=-1)


def block_rows(blocks: Iterable[EnvelopeBlock]) -> np.ndarray:
    return np.array([b.as_row() for b in blocks], dtype=float).reshape(-1, 5)


# ---------------------------
# Aggregation
# ---------------------------

def lse_aggregate(values, rho: float, axis: int = 0):
    """
    (1/ρ) ln Σ exp(ρ g_j), shifted by the extreme term so exp never overflows.
    ρ < 0 gives a smooth lower bound of min g; ρ > 0 an upper bound of max g.
    """
    if rho == 0:
        raise ValueError("rho must be nonzero")
    g = np.asarray(values, dtype=float)
    if g.shape[axis] == 0:
        raise ValueError("lse_aggregate needs at least one value")
    z = rho * g
    zmax = np.max(z, axis=axis, keepdims=True)
    out = (np.squeeze(zmax, axis=axis) + np.log(np.sum(np.exp(z - zmax), axis=axis))) / rho
    return out if out.ndim else float(out)


def lse_aggregate_symbolic(values: Sequence, rho: float):
    """Casadi form of lse_aggregate for ρ < 0 (shift by the symbolic min)."""
    g = ca.vertcat(*values)
    m = ca.mmin(g)
    return m + ca.log(ca.sum1(ca.exp(rho * (g - m)))) / rho


# ---------------------------
# Envelope
# ---------------------------

@dataclass(frozen=True, eq=False)
class SpatialEnvelope:
    blocks: Tuple[EnvelopeBlock, ...]
    rho_lse: float = -15.0
    epsilon0: float = 0.0
    boundary_samples: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    closed: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ConfigurationError("An envelope needs at least one block")
        if not self.rho_lse < 0:
            raise ConfigurationError(f"rho_lse must be negative, got {self.rho_lse}")
        if self.epsilon0 > 0:
            raise ConfigurationError(f"epsilon0 must be <= 0, got {self.epsilon0}")
        object.__setattr__(self, "boundary_samples", np.asarray(self.boundary_samples, dtype=float).reshape(-1, 2))

    @property
    def p(self) -> int:
        return int(self.blocks[0].p)

    def __len__(self) -> int:
        return len(self.blocks)

    def distances(self, x, y) -> np.ndarray:
        """Per-block g values, shape (n_blocks, *shape(x))."""
        return np.stack([block_distance(np.asarray(x, dtype=float), np.asarray(y, dtype=float), b) for b in self.blocks])

    def g_lse(self, x, y):
        return lse_aggregate(self.distances(x, y), self.rho_lse)


def exact_membership(x, y, envelope: SpatialEnvelope):
    """min over blocks of block_distance; ≤ 0 iff inside the union."""
    g = np.min(envelope.distances(x, y), axis=0)
    return g if np.ndim(g) else float(g)


def envelope_constraint(x, y, envelope: SpatialEnvelope):
    """g_lse − ε₀; negative means inside the safety set."""
    if isinstance(x, (ca.SX, ca.MX)) or isinstance(y, (ca.SX, ca.MX)):
        vals = [block_distance(x, y, b) for b in envelope.blocks]
        return lse_aggregate_symbolic(vals, envelope.rho_lse) - envelope.epsilon0
    return envelope.g_lse(x, y) - envelope.epsilon0


def envelope_constraint_gradient(x, y, envelope: SpatialEnvelope) -> np.ndarray:
    """Analytic (∂/∂x, ∂/∂y) of envelope_constraint: softmin-weighted block gradients."""
    g = envelope.distances(x, y)
    z = envelope.rho_lse * g
    w = np.exp(z - np.max(z, axis=0, keepdims=True))
    w = w / np.sum(w, axis=0, keepdims=True)
    grads = np.stack([block_distance_gradient(x, y, b) for b in envelope.blocks])
    return np.sum(w[..., None] * grads, axis=0)


# ---------------------------
# ε₀
# ---------------------------

def compute_epsilon0(envelope: SpatialEnvelope, boundary_samples: np.ndarray) -> float:
    pts = np.asarray(boundary_samples, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("compute_epsilon0 needs at least one boundary sample")
    vals = envelope.g_lse(pts[:, 0], pts[:, 1])
    return float(min(0.0, float(np.min(vals))))


def _polyline_samples(line: np.ndarray, resolution: float) -> np.ndarray:
    seg = np.hypot(*np.diff(line, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return line[:1].copy()
    t = np.arange(0.0, s[-1], resolution)
    t = np.append(t, s[-1])
    return np.column_stack([np.interp(t, s, line[:, 0]), np.interp(t, s, line[:, 1])])


def _crossing_points(a: EnvelopeBlock, b: EnvelopeBlock, n: int) -> List[np.ndarray]:
    pa, pb = a.outline(n), b.outline(n)
    rough = segment_intersections(pa, np.roll(pa, -1, axis=0), pb, np.roll(pb, -1, axis=0))
    out = []
    for guess in rough:
        def fun(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            f = np.array([block_distance(z[0], z[1], a), block_distance(z[0], z[1], b)])
            jac = np.vstack([block_distance_gradient(z[0], z[1], a), block_distance_gradient(z[0], z[1], b)])
            return f, jac

        sol = root(fun, guess, jac=True, method="hybr")
        out.append(sol.x if sol.success else guess)
    return out


def _blocks_may_overlap(a: EnvelopeBlock, b: EnvelopeBlock) -> bool:
    return np.hypot(a.xb - b.xb, a.yb - b.yb) <= np.hypot(a.Lb, a.Wb) + np.hypot(b.Lb, b.Wb)


def envelope_boundary_samples(
    blocks: Sequence[EnvelopeBlock],
    edges: Sequence[np.ndarray] = (),
    resolution: float = 0.25,
) -> np.ndarray:
    """
    Points where the aggregate is checked for ε₀: the given lane edges at
    `resolution`, the outline of the block union, and the pairwise crossing
    points of overlapping block outlines.
    """
    blocks = list(blocks)
    parts = [_polyline_samples(np.asarray(e, dtype=float), resolution) for e in edges]
    for i, blk in enumerate(blocks):
        n = max(64, int(np.ceil(blk.perimeter_estimate() / resolution)))
        pts = blk.outline(n)
        near = [j for j, o in enumerate(blocks) if j != i and _blocks_may_overlap(blk, o)]
        if near:
            g_other = np.min([block_distance(pts[:, 0], pts[:, 1], blocks[j]) for j in near], axis=0)
            pts = pts[g_other >= 0.0]
        parts.append(pts)
        for j in near:
            if j > i:
                parts.extend(np.atleast_2d(c) for c in _crossing_points(blk, blocks[j], n))
    parts = [p.reshape(-1, 2) for p in parts if len(p)]
    return np.vstack(parts) if parts else np.empty((0, 2))


def finalize_envelope(
    blocks: Sequence[EnvelopeBlock],
    rho_lse: float = -15.0,
    *,
    edges: Sequence[np.ndarray] = (),
    resolution: float = 0.25,
    closed: bool = False,
) -> SpatialEnvelope:
    draft = SpatialEnvelope(tuple(blocks), rho_lse, 0.0, closed=closed)
    samples = envelope_boundary_samples(draft.blocks, edges, resolution)
    eps0 = compute_epsilon0(draft, samples)
    logger.info("Envelope finalized: {} blocks, rho={} eps0={:.5f} ({} boundary samples)", len(blocks), rho_lse, eps0, len(samples))
    return SpatialEnvelope(draft.blocks, rho_lse, eps0, samples, closed)


def block_window(envelope: SpatialEnvelope, x: float, y: float, size: int, back: int = 1) -> List[EnvelopeBlock]:
    """
    `size` consecutive blocks starting just behind the one nearest (x, y),
    padded with far-away blocks. Fewer terms only raise the aggregate, so
    the windowed constraint stays inside the union.
    """
    n = len(envelope.blocks)
    g = np.array([block_distance(x, y, b) for b in envelope.blocks])
    i0 = int(np.argmin(g)) - back
    if envelope.closed:
        idx = [(i0 + k) % n for k in range(min(size, n))]
    else:
        i0 = max(0, i0)
        idx = list(range(i0, min(n, i0 + size)))
    chosen = [envelope.blocks[i] for i in idx]
    chosen += [dummy_block(k, envelope.p) for k in range(size - len(chosen))]
    return chosen


# ---------------------------
# File format
# ---------------------------

def envelope_text(envelope: SpatialEnvelope) -> str:
    lines = [
        f"# rho_lse {envelope.rho_lse!r}",
        f"# p {envelope.p}",
        f"# epsilon0 {envelope.epsilon0!r}",
        f"# closed {int(envelope.closed)}",
    ]
    lines += [" ".join(repr(float(v)) for v in b.as_row()) for b in envelope.blocks]
    return "\n".join(lines) + "\n"


def save_envelope(envelope: SpatialEnvelope, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(envelope_text(envelope), encoding="utf-8")
    return p


def load_envelope(path: str | Path) -> SpatialEnvelope:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigurationError(f"Envelope file not found: {p}")
    header = {}
    rows = []
    for n, ln in enumerate(text.splitlines(), start=1):
        ln = ln.strip()
        if not ln:
            continue
        if ln.startswith("#"):
            key, _, val = ln[1:].strip().partition(" ")
            header[key] = val.strip()
            continue
        parts = ln.split()
        if len(parts) != 5:
            raise ConfigurationError(f"{p}:{n}: expected 'xb yb psib Lb Wb', got {ln!r}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise ConfigurationError(f"{p}:{n}: non-numeric block entry {ln!r}")
    missing = {"rho_lse", "p", "epsilon0"} - header.keys()
    if missing:
        raise ConfigurationError(f"{p}: missing header fields {sorted(missing)}")
    order = int(header["p"])
    blocks = [EnvelopeBlock(*r, p=order) for r in rows]
    return SpatialEnvelope(
        tuple(blocks),
        float(header["rho_lse"]),
        float(header["epsilon0"]),
        closed=header.get("closed", "0") == "1",
    )


# ---------------------------
# Linear bounds
# ---------------------------

def friction_ax_bounds(params: VehicleParams) -> Tuple[float, float]:
    """
    Longitudinal acceleration limits that keep the exact drive/brake split
    inside both axles' friction circles (pure longitudinal demand).
    """
    M, g, L, Kz = params.M, params.g, params.L, params.Kz
    mu_f, mu_r, b_r = params.mu_f, params.mu_r, params.b_r

    drive_den = M - mu_r * Kz
    rear_brake_den = M * (1.0 - b_r) + mu_r * Kz
    front_brake_den = M * b_r - mu_f * Kz
    if drive_den <= 0:
        raise ConfigurationError(f"M - mu_r*Kz = {drive_den:.4g} <= 0: rear-drive friction bound is degenerate")
    if front_brake_den <= 0:
        raise ConfigurationError(f"M*b_r - mu_f*Kz = {front_brake_den:.4g} <= 0: front-brake friction bound is degenerate")

    front_lift = params.Lr * M * g / (L * Kz) if Kz > 0 else np.inf
    ax_max = min(front_lift, mu_r * M * g * (params.Lf / L) / drive_den)
    ax_min = max(
        -mu_r * M * g * (params.Lf / L) / rear_brake_den,
        -mu_f * M * g * (params.Lr / L) / front_brake_den,
    )
    return float(ax_min), float(ax_max)


def power_limit_residual(ux, ax, p_a: float, p_b: float):
    """ax + p_a (ux − p_b); feasible iff ≤ 0."""
    return ax + p_a * (ux - p_b)


class LinearBounds(BaseModel):
    model_config = ConfigDict(frozen=True)

    v_min: float = -5.0
    v_max: float = 5.0
    r_min: float = -1.5
    r_max: float = 1.5
    delta_f_min: float = -0.5
    delta_f_max: float = 0.5
    delta_f_rate_min: float = -0.8
    delta_f_rate_max: float = 0.8
    jx_min: float = -50.0
    jx_max: float = 50.0
    ux_min: float = Field(1.0, gt=0)
    ux_max: float = Field(60.0, gt=0)
    ax_min: float = -8.0
    ax_max: float = 5.0
    p_a: float = Field(0.08, gt=0)
    p_b: float = Field(60.0, gt=0)

    @model_validator(mode="after")
    def _ordered(self) -> "LinearBounds":
        for name in ("v", "r", "delta_f", "delta_f_rate", "jx", "ux", "ax"):
            lo, hi = getattr(self, f"{name}_min"), getattr(self, f"{name}_max")
            if not lo < hi:
                raise ValueError(f"{name}: lower bound {lo} must be below upper bound {hi}")
        return self

    @classmethod
    def from_params(cls, params: VehicleParams, **limits: float) -> "LinearBounds":
        ax_min, ax_max = friction_ax_bounds(params)
        try:
            return cls(ax_min=ax_min, ax_max=ax_max, p_a=params.p_a, p_b=params.p_b, **limits)
        except ValueError as e:
            raise ConfigurationError(f"Invalid bounds: {e}")

    def state_box(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-state (lower, upper) in vehicle.STATE_FIELDS order."""
        inf = np.inf
        lo = np.array([-inf, -inf, self.v_min, self.r_min, -inf, self.ux_min, self.delta_f_min, self.ax_min])
        hi = np.array([inf, inf, self.v_max, self.r_max, inf, self.ux_max, self.delta_f_max, self.ax_max])
        return lo, hi

    def control_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return (
            np.array([self.delta_f_rate_min, self.jx_min]),
            np.array([self.delta_f_rate_max, self.jx_max]),
        )
