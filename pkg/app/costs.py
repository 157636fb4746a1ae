"""
Cost terms of the MPC objective.

J = J_state + J_control + J_envelope + J_specific, where the specific term is
one of:
  racing               fitted cubic cost-to-go at the last collocation point
  collision_avoidance  speed tracking towards u_des, integrated over the horizon
  offroad              normalized remaining distance to the goal x

Each term is written against plain arithmetic so it evaluates on floats,
numpy arrays and casadi symbols alike; the OCP builds its objective from
these same functions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from math import comb
from typing import Callable, Dict, Literal, Sequence, Tuple

import casadi as ca
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .envelope import SpatialEnvelope, envelope_constraint, envelope_constraint_gradient
from .errors import ModelDomainError, PlanningError
from .road import RoadBoundary
from .vehicle import UX_FLOOR

SpecificCost = Literal["racing", "collision_avoidance", "offroad"]
MONOMIALS: Tuple[Tuple[int, int], ...] = tuple((i, j) for i in range(4) for j in range(4 - i))


class CostWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    # state
    w_delta_f: float = Field(1.0, ge=0)
    w_ax: float = Field(0.1, ge=0)
    w_v: float = Field(1.0, ge=0)
    w_kappa: float = Field(10.0, ge=0)
    # control
    w_delta_f_rate: float = Field(1.0, ge=0)
    w_jx: float = Field(0.01, ge=0)
    # envelope softplus
    w_envelope: float = Field(10.0, ge=0)
    theta_hp: float = Field(20.0, gt=0)
    g_sm: float = 0.0
    # specific
    specific: SpecificCost = "racing"
    w_go: Tuple[float, ...] = Field(default=(0.0,) * len(MONOMIALS))
    w_go_gain: float = Field(1.0, ge=0)
    w_speed: float = Field(1.0, ge=0)
    u_des: float = Field(20.0, ge=0)
    x_goal: float = 100.0
    w_terminal: float = Field(100.0, ge=0)


@dataclass(frozen=True)
class CostBreakdown:
    state: float
    control: float
    envelope: float
    specific: float

    @property
    def total(self) -> float:
        return self.state + self.control + self.envelope + self.specific

    def to_dict(self) -> Dict[str, float]:
        d = asdict(self)
        d["total"] = self.total
        return d


# ---------------------------
# Stage terms
# ---------------------------

def state_cost_terms(xi, w: CostWeights):
    v, r, ux, delta_f, ax = xi[2], xi[3], xi[5], xi[6], xi[7]
    kappa = r / ux
    return w.w_delta_f * delta_f**2 + w.w_ax * ax**2 + w.w_v * v**2 + w.w_kappa * kappa**2


def control_cost_terms(zeta, w: CostWeights):
    return w.w_delta_f_rate * zeta[0] ** 2 + w.w_jx * zeta[1] ** 2


def stage_cost(state, control, weights: CostWeights) -> float:
    """Integrand of the state plus control costs at one point."""
    xi = state.to_array() if hasattr(state, "to_array") else np.asarray(state, dtype=float)
    zeta = control.to_array() if hasattr(control, "to_array") else np.asarray(control, dtype=float)
    if not xi[5] > UX_FLOOR:
        raise ModelDomainError(f"Curvature term needs ux > {UX_FLOOR} m/s, got {xi[5]:.4g}")
    return float(state_cost_terms(xi, weights) + control_cost_terms(zeta, weights))


def stage_cost_gradient(state, control, weights: CostWeights) -> Tuple[np.ndarray, np.ndarray]:
    xi = np.asarray(state.to_array() if hasattr(state, "to_array") else state, dtype=float)
    zeta = np.asarray(control.to_array() if hasattr(control, "to_array") else control, dtype=float)
    w = weights
    v, r, ux, delta_f, ax = xi[2], xi[3], xi[5], xi[6], xi[7]
    gx = np.zeros(8)
    gx[2] = 2 * w.w_v * v
    gx[3] = 2 * w.w_kappa * r / ux**2
    gx[5] = -2 * w.w_kappa * r**2 / ux**3
    gx[6] = 2 * w.w_delta_f * delta_f
    gx[7] = 2 * w.w_ax * ax
    gu = np.array([2 * w.w_delta_f_rate * zeta[0], 2 * w.w_jx * zeta[1]])
    return gx, gu


# ---------------------------
# Envelope softplus
# ---------------------------

def _softplus(z):
    if isinstance(z, (ca.SX, ca.MX)):
        return ca.if_else(z > 0, z + ca.log(1 + ca.exp(-z)), ca.log(1 + ca.exp(z)))
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def envelope_cost(x, y, envelope: SpatialEnvelope, w_envelope: float, theta_hp: float, g_sm: float = 0.0):
    """w softplus(θ (g_envelope + g_sm)): ≈0 inside, slope w θ far outside."""
    g = envelope_constraint(x, y, envelope)
    return w_envelope * _softplus(theta_hp * (g + g_sm))


def envelope_cost_gradient(x, y, envelope: SpatialEnvelope, w_envelope: float, theta_hp: float, g_sm: float = 0.0) -> np.ndarray:
    g = np.asarray(envelope_constraint(x, y, envelope))
    dg = envelope_constraint_gradient(x, y, envelope)
    slope = w_envelope * theta_hp * _sigmoid(theta_hp * (g + g_sm))
    return np.asarray(slope)[..., None] * dg


# ---------------------------
# Scenario-specific terms
# ---------------------------

def speed_cost(ux, u_des: float, w_speed: float):
    return w_speed * (ux - u_des) ** 2


def terminal_cost_offroad(x0: float, xf, x_goal: float):
    """(x_f − x_goal)/(x_0 − x_goal); 0 once the start is already at the goal."""
    den = x0 - x_goal
    if abs(den) < 1e-12:
        return 0.0 * xf
    return (xf - x_goal) / den


def eval_cost_to_go(x, y, w_go: Sequence[float]):
    """Σ w_go(i, j) x^i y^j over i + j ≤ 3, coefficients in MONOMIALS order."""
    total = 0.0
    for c, (i, j) in zip(w_go, MONOMIALS):
        if isinstance(c, (int, float)) and c == 0.0:
            continue
        total = total + c * x**i * y**j
    return total


def eval_cost_to_go_gradient(x, y, w_go: Sequence[float]) -> np.ndarray:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    gx = np.zeros_like(x)
    gy = np.zeros_like(y)
    for c, (i, j) in zip(w_go, MONOMIALS):
        if i:
            gx = gx + c * i * x ** (i - 1) * y**j
        if j:
            gy = gy + c * j * x**i * y ** (j - 1)
    return np.stack([gx, gy], axis=-1)


@dataclass(frozen=True)
class CostToGo:
    """
    Cubic fitted in a shifted/scaled frame: X = (x − x0)/scale, Y = (y − y0)/scale.
    `coefficients` are for (X, Y); global_coefficients() maps them to raw (x, y).
    """

    coefficients: Tuple[float, ...]
    origin: Tuple[float, float]
    scale: float
    fit_rms: float
    s0: float = 0.0
    s_f: float = 0.0

    def __call__(self, x, y):
        X = (x - self.origin[0]) / self.scale
        Y = (y - self.origin[1]) / self.scale
        return eval_cost_to_go(X, Y, self.coefficients)

    def gradient(self, x, y) -> np.ndarray:
        X = (np.asarray(x, dtype=float) - self.origin[0]) / self.scale
        Y = (np.asarray(y, dtype=float) - self.origin[1]) / self.scale
        return eval_cost_to_go_gradient(X, Y, self.coefficients) / self.scale

    def global_coefficients(self) -> Tuple[float, ...]:
        x0, y0 = self.origin
        out = {m: 0.0 for m in MONOMIALS}
        for c, (i, j) in zip(self.coefficients, MONOMIALS):
            k = c / self.scale ** (i + j)
            for a in range(i + 1):
                for b in range(j + 1):
                    out[(a, b)] += k * comb(i, a) * (-x0) ** (i - a) * comb(j, b) * (-y0) ** (j - b)
        return tuple(out[m] for m in MONOMIALS)

    def as_parameters(self) -> np.ndarray:
        return np.concatenate([self.coefficients, self.origin, [self.scale]])


def cost_to_go_samples(
    road: RoadBoundary,
    s0: float,
    horizon_length: float,
    n_lateral: int = 15,
    spacing: float = 2.0,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Labeled regression points: (points (m, 2), labels s_f − s_p, s_f).
    Each station contributes n_lateral points across the full width,
    centerline included.
    """
    s_f = s0 + horizon_length
    if not road.closed and s_f > road.length + 1e-9:
        raise PlanningError(f"Road ends at s={road.length:.1f} m before the cost-to-go horizon end {s_f:.1f} m")
    n_st = max(4, int(np.ceil(horizon_length / spacing)) + 1)
    pts, labels = [], []
    for s in np.linspace(s0, s_f, n_st):
        c = road.point_at(s)
        h = road.heading_at(s)
        w = road.half_width_at(s)
        normal = np.array([-np.sin(h), np.cos(h)])
        for off in np.linspace(-w, w, n_lateral):
            pts.append(c + off * normal)
            labels.append(s_f - s)
    return np.array(pts), np.array(labels), s_f


def fit_cost_to_go(
    road: RoadBoundary,
    s0: float,
    ux_max: float,
    Tp: float,
    *,
    n_lateral: int = 15,
    spacing: float = 2.0,
    origin: Tuple[float, float] | None = None,
) -> CostToGo:
    """Least-squares bivariate cubic through the progress labels ahead of s0."""
    horizon_length = ux_max * Tp
    pts, labels, s_f = cost_to_go_samples(road, s0, horizon_length, n_lateral, spacing)
    if origin is None:
        origin = tuple(float(v) for v in road.point_at(s0))
    scale = float(horizon_length)
    X = (pts[:, 0] - origin[0]) / scale
    Y = (pts[:, 1] - origin[1]) / scale
    A = np.column_stack([X**i * Y**j for i, j in MONOMIALS])
    coef, _, rank, _ = np.linalg.lstsq(A, labels, rcond=None)
    if rank < len(MONOMIALS):
        raise PlanningError(f"Cost-to-go regression is rank deficient (rank {rank} < {len(MONOMIALS)})")
    rms = float(np.sqrt(np.mean((A @ coef - labels) ** 2)))
    return CostToGo(tuple(float(c) for c in coef), (float(origin[0]), float(origin[1])), scale, rms, float(s0), float(s_f))


# ---------------------------
# Whole-trajectory objective
# ---------------------------

def envelope_cost_from_value(g, weights: CostWeights):
    return weights.w_envelope * _softplus(weights.theta_hp * (g + weights.g_sm))


def terminal_cost(weights: CostWeights, cost_to_go: CostToGo | None = None, x0: float | None = None) -> Callable | None:
    """The J_specific part evaluated at the last point, as f(x_f, y_f); None for speed tracking."""
    if weights.specific == "racing":
        if cost_to_go is not None:
            return lambda xf, yf: weights.w_go_gain * cost_to_go(xf, yf)
        return lambda xf, yf: weights.w_go_gain * eval_cost_to_go(xf, yf, weights.w_go)
    if weights.specific == "offroad":
        if x0 is None:
            raise ValueError("offroad terminal cost needs the horizon start x0")
        return lambda xf, yf: weights.w_terminal * terminal_cost_offroad(x0, xf, weights.x_goal)
    return None


def objective_terms(
    states,
    controls,
    intervals: Sequence[float],
    weights: CostWeights,
    constraint: Callable,
    terminal: Callable | None = None,
):
    """
    (state, control, envelope, specific) for N+1 states and N controls.
    Rectangle rule: interval k weighs the state at its right end and control k.
    `constraint(x, y)` is the envelope constraint value; `terminal(x_f, y_f)`
    the end-point specific cost. Rows may be numpy or casadi vectors.
    """
    n = len(intervals)
    j_state = 0.0
    j_control = 0.0
    j_specific = 0.0
    for k in range(n):
        T = float(intervals[k])
        j_state = j_state + T * state_cost_terms(states[k + 1], weights)
        j_control = j_control + T * control_cost_terms(controls[k], weights)
        if weights.specific == "collision_avoidance":
            j_specific = j_specific + T * speed_cost(states[k + 1][5], weights.u_des, weights.w_speed)
    j_env = 0.0
    for k in range(n + 1):
        j_env = j_env + envelope_cost_from_value(constraint(states[k][0], states[k][1]), weights)
    if terminal is not None:
        j_specific = j_specific + terminal(states[n][0], states[n][1])
    return j_state, j_control, j_env, j_specific


def trajectory_breakdown(
    states: np.ndarray,
    controls: np.ndarray,
    intervals: Sequence[float],
    envelope: SpatialEnvelope,
    weights: CostWeights,
    cost_to_go: CostToGo | None = None,
) -> CostBreakdown:
    """Cost of a numeric trajectory, evaluated term by term."""
    X = np.asarray(states, dtype=float)
    U = np.asarray(controls, dtype=float)
    if np.any(X[1:, 5] <= UX_FLOOR):
        raise ModelDomainError("Trajectory reaches the ux floor; curvature cost undefined")
    terms = objective_terms(
        X,
        U,
        intervals,
        weights,
        lambda x, y: envelope_constraint(x, y, envelope),
        terminal_cost(weights, cost_to_go, float(X[0, 0])),
    )
    return CostBreakdown(*(float(t) for t in terms))
