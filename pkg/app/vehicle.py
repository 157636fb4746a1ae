"""
Smooth 3-DoF single-track vehicle model.

State ξ = (x, y, v, r, psi, ux, delta_f, ax), control ζ = (delta_f_rate, jx).
ax is the commanded longitudinal acceleration Fx/M, not dux/dt, which keeps
the load transfer linear in the state.

Every force law below is written once against a small math backend so the
same expressions serve numpy evaluation (plant, tests) and casadi symbols
(the NLP transcription and the analytic Jacobians).

Pieces:
- load_transfer            axle normal loads with Kz = M h / (Lf + Lr)
- longitudinal_split_smooth  sigmoid-gated rear drive / b_r brake split
- max_lateral_force        softplus-derated friction circle
- lateral_force            sigmoid tire curve, slope -Ca at zero slip
- dynamics                 A(ξ) + Bζ
- step_prediction          backward Euler (same defect as the OCP)
- step_plant               RK4 at 1 ms, the simulated vehicle
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, NamedTuple, Sequence, Tuple

import casadi as ca
import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigurationError, ConvergenceError, ModelDomainError

UX_FLOOR = 0.1  # m/s, slip angles are undefined below this
STATE_FIELDS = ("x", "y", "v", "r", "psi", "ux", "delta_f", "ax")
CONTROL_FIELDS = ("delta_f_rate", "jx")
NX = len(STATE_FIELDS)
NU = len(CONTROL_FIELDS)


# ---------------------------
# Value types
# ---------------------------

@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    v: float
    r: float
    psi: float
    ux: float
    delta_f: float
    ax: float

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "VehicleState":
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.size != NX:
            raise ValueError(f"Expected {NX} state entries, got {a.size}")
        return cls(*(float(v) for v in a))

    def replace(self, **changes: float) -> "VehicleState":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return VehicleState(**d)


@dataclass(frozen=True)
class ControlInput:
    delta_f_rate: float = 0.0
    jx: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([self.delta_f_rate, self.jx], dtype=float)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "ControlInput":
        a = np.asarray(a, dtype=float).reshape(-1)
        return cls(float(a[0]), float(a[1]))


@dataclass(frozen=True)
class AxleForces:
    Fxf: float
    Fxr: float
    Fyf: float
    Fyr: float
    Fzf: float
    Fzr: float
    Fyf_max: float
    Fyr_max: float


class VehicleParams(BaseModel):
    """
    Vehicle constants in SI units. Only the friction pair comes from a
    published experiment; the rest are declared defaults (config/vehicle.yaml).

    p_f is the drive/brake sigmoid sharpness (1/N); p_f_friction is the
    softplus sharpness of the derated friction circle (dimensionless).
    """

    model_config = ConfigDict(frozen=True)

    M: float = Field(2000.0, gt=0)
    Izz: float = Field(3500.0, gt=0)
    Lf: float = Field(1.5, gt=0)
    Lr: float = Field(1.5, gt=0)
    h: float = Field(0.5, ge=0)
    Caf: float = Field(1.6e5, gt=0)
    Car: float = Field(1.6e5, gt=0)
    mu_f: float = Field(0.9, gt=0)
    mu_r: float = Field(0.95, gt=0)
    b_r: float = Field(0.6, gt=0, lt=1)
    p_f: float = Field(0.01, gt=0)
    p_f_friction: float = Field(10.0, gt=0)
    g: float = Field(9.81, gt=0)
    p_a: float = Field(0.08, gt=0)
    p_b: float = Field(60.0, gt=0)

    @property
    def L(self) -> float:
        return self.Lf + self.Lr

    @property
    def Kz(self) -> float:
        # Mh/L so that Kz*ax is a force with ax in m/s^2
        return self.M * self.h / self.L

    @model_validator(mode="after")
    def _check_friction_denominators(self) -> "VehicleParams":
        if self.M - self.mu_r * self.Kz <= 0:
            raise ValueError("M - mu_r*Kz must be positive (rear axle would unload under drive)")
        if self.M * self.b_r - self.mu_f * self.Kz <= 0:
            raise ValueError("M*b_r - mu_f*Kz must be positive (front brake bound flips sign)")
        return self

    @classmethod
    def from_mapping(cls, raw: dict[str, Any]) -> "VehicleParams":
        try:
            return cls(**raw)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid vehicle parameters: {e}")


def load_vehicle_params(path: str | Path) -> VehicleParams:
    from .settings import load_yaml

    raw = load_yaml(path)
    return VehicleParams.from_mapping(raw.get("vehicle", raw))


# ---------------------------
# Math backend
# ---------------------------

class _Backend(NamedTuple):
    sin: Callable
    cos: Callable
    atan: Callable
    tanh: Callable
    sqrt: Callable
    softplus: Callable


_NUMPY = _Backend(np.sin, np.cos, np.arctan, np.tanh, np.sqrt, lambda z: np.logaddexp(0.0, z))
_CASADI = _Backend(ca.sin, ca.cos, ca.atan, ca.tanh, ca.sqrt, lambda z: ca.log(1 + ca.exp(z)))


def _ops(*values: Any) -> _Backend:
    for v in values:
        if isinstance(v, (ca.SX, ca.MX, ca.DM)):
            return _CASADI
    return _NUMPY


def _is_symbolic(*values: Any) -> bool:
    return _ops(*values) is _CASADI


# ---------------------------
# Force laws
# ---------------------------

def load_transfer(params: VehicleParams, ax):
    """Front/rear normal loads; they always sum to M g."""
    L = params.L
    Fzf = params.Lr / L * params.M * params.g - params.Kz * ax
    Fzr = params.Lf / L * params.M * params.g + params.Kz * ax
    return Fzf, Fzr


def exact_longitudinal_split(params: VehicleParams, Fx: float) -> Tuple[float, float]:
    """Piecewise split: rear-wheel drive, braking shared b_r / (1 - b_r)."""
    if Fx >= 0:
        return 0.0, float(Fx)
    return params.b_r * Fx, (1.0 - params.b_r) * Fx


def longitudinal_split_smooth(params: VehicleParams, Fx):
    op = _ops(Fx)
    # 1 - sigmoid(p_f Fx) written with tanh to stay finite for large |Fx|
    gate = 0.5 * (1.0 - op.tanh(0.5 * params.p_f * Fx))
    Fxf = gate * params.b_r * Fx
    Fxr = Fx - Fxf
    return Fxf, Fxr


def max_lateral_force(Fx_axle, Fz_axle, mu: float, p_f: float):
    """Friction-circle capacity left after the longitudinal demand."""
    op = _ops(Fx_axle, Fz_axle)
    cap = mu * Fz_axle
    ratio = Fx_axle / cap
    return op.sqrt(op.softplus(p_f * (1.0 - ratio * ratio)) / p_f) * cap


def lateral_force(alpha, Ca: float, Fy_max):
    """
    Sigmoid tire curve: -2 Fy_max (sigmoid(2 Ca alpha / Fy_max) - 0.5),
    evaluated as -Fy_max tanh(Ca alpha / Fy_max).
    """
    op = _ops(alpha, Fy_max)
    return -Fy_max * op.tanh(Ca * alpha / Fy_max)


def slip_angles(state, params: VehicleParams):
    """Front/rear slip angles from single-track kinematics."""
    if isinstance(state, VehicleState):
        xi = state.to_array()
    else:
        xi = state
    v, r, ux, delta_f = xi[2], xi[3], xi[5], xi[6]
    if not _is_symbolic(ux) and not float(ux) > UX_FLOOR:
        raise ModelDomainError(f"Slip angles need ux > {UX_FLOOR} m/s, got {float(ux):.4g}")
    op = _ops(v, r, ux, delta_f)
    alpha_f = op.atan((v + params.Lf * r) / ux) - delta_f
    alpha_r = op.atan((v - params.Lr * r) / ux)
    return alpha_f, alpha_r


def _forces(xi, params: VehicleParams):
    ax = xi[7]
    Fzf, Fzr = load_transfer(params, ax)
    Fxf, Fxr = longitudinal_split_smooth(params, params.M * ax)
    Fyf_max = max_lateral_force(Fxf, Fzf, params.mu_f, params.p_f_friction)
    Fyr_max = max_lateral_force(Fxr, Fzr, params.mu_r, params.p_f_friction)
    alpha_f, alpha_r = slip_angles(xi, params)
    Fyf = lateral_force(alpha_f, params.Caf, Fyf_max)
    Fyr = lateral_force(alpha_r, params.Car, Fyr_max)
    return Fxf, Fxr, Fyf, Fyr, Fzf, Fzr, Fyf_max, Fyr_max


def axle_forces(state: VehicleState, params: VehicleParams) -> AxleForces:
    return AxleForces(*(float(f) for f in _forces(state.to_array(), params)))


def dynamics_terms(xi, zeta, params: VehicleParams) -> list:
    """The eight components of A(ξ) + Bζ, backend-agnostic."""
    x, y, v, r, psi, ux, delta_f, ax = (xi[i] for i in range(NX))
    op = _ops(*(xi[i] for i in range(NX)))
    Fxf, _, Fyf, Fyr, *_ = _forces(xi, params)
    M, Izz = params.M, params.Izz
    sd, cd = op.sin(delta_f), op.cos(delta_f)
    front_lat = Fyf * cd + Fxf * sd
    return [
        ux * op.cos(psi) - v * op.sin(psi),
        ux * op.sin(psi) + v * op.cos(psi),
        (front_lat + Fyr) / M - ux * r,
        (front_lat * params.Lf - Fyr * params.Lr) / Izz,
        r,
        ax + r * v - Fyf * sd / M,
        zeta[0],
        zeta[1],
    ]


def _as_arrays(state, control) -> Tuple[np.ndarray, np.ndarray]:
    xi = state.to_array() if isinstance(state, VehicleState) else np.asarray(state, dtype=float)
    zeta = control.to_array() if isinstance(control, ControlInput) else np.asarray(control, dtype=float)
    return xi, zeta


def dynamics(state, control, params: VehicleParams) -> np.ndarray:
    """State derivative in STATE_FIELDS order."""
    xi, zeta = _as_arrays(state, control)
    return np.array([float(t) for t in dynamics_terms(xi, zeta, params)])


# ---------------------------
# Compiled model functions
# ---------------------------

class ModelFunctions(NamedTuple):
    f: ca.Function
    jac_x: ca.Function
    jac_u: ca.Function
    rk4: ca.Function


@lru_cache(maxsize=32)
def model_functions(params: VehicleParams) -> ModelFunctions:
    xi = ca.SX.sym("xi", NX)
    zeta = ca.SX.sym("zeta", NU)
    hstep = ca.SX.sym("h")
    rhs = ca.vertcat(*dynamics_terms(xi, zeta, params))
    f = ca.Function("f", [xi, zeta], [rhs])
    jac_x = ca.Function("jac_x", [xi, zeta], [ca.jacobian(rhs, xi)])
    jac_u = ca.Function("jac_u", [xi, zeta], [ca.jacobian(rhs, zeta)])
    k1 = f(xi, zeta)
    k2 = f(xi + hstep / 2 * k1, zeta)
    k3 = f(xi + hstep / 2 * k2, zeta)
    k4 = f(xi + hstep * k3, zeta)
    rk4 = ca.Function("rk4", [xi, zeta, hstep], [xi + hstep / 6 * (k1 + 2 * k2 + 2 * k3 + k4)])
    logger.debug("Compiled vehicle model functions for M={} Izz={}", params.M, params.Izz)
    return ModelFunctions(f, jac_x, jac_u, rk4)


def dynamics_jacobian(state, control, params: VehicleParams) -> Tuple[np.ndarray, np.ndarray]:
    """(∂f/∂ξ, ∂f/∂ζ) by algorithmic differentiation."""
    xi, zeta = _as_arrays(state, control)
    slip_angles(xi, params)
    fn = model_functions(params)
    return np.array(fn.jac_x(xi, zeta)), np.array(fn.jac_u(xi, zeta))


# ---------------------------
# Integrators
# ---------------------------

def step_prediction(
    state,
    control,
    dt: float,
    params: VehicleParams,
    *,
    tol: float = 1e-8,
    max_iter: int = 50,
) -> VehicleState:
    """
    Backward Euler step ξ⁺ = ξ + dt V(ξ⁺, ζ), solved by damped Newton.
    This is the defect the OCP transcription enforces between grid points.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    xi, zeta = _as_arrays(state, control)
    fn = model_functions(params)

    def residual(z: np.ndarray) -> np.ndarray:
        slip_angles(z, params)
        return z - xi - dt * np.array(fn.f(z, zeta)).reshape(-1)

    z = xi + dt * dynamics(xi, zeta, params)  # explicit Euler predictor
    res = residual(z)
    norm = float(np.linalg.norm(res))
    for _ in range(max_iter):
        if norm < tol:
            return VehicleState.from_array(z)
        J = np.eye(NX) - dt * np.array(fn.jac_x(z, zeta))
        dz = np.linalg.solve(J, -res)
        step = 1.0
        while True:
            trial = z + step * dz
            try:
                trial_res = residual(trial)
                trial_norm = float(np.linalg.norm(trial_res))
            except ModelDomainError:
                trial_norm = np.inf
            if trial_norm < norm or step < 1e-4:
                break
            step *= 0.5
        if not np.isfinite(trial_norm):
            break
        z, res, norm = trial, trial_res, trial_norm
    if norm < tol:
        return VehicleState.from_array(z)
    raise ConvergenceError("Backward Euler Newton iteration did not converge", norm)


def step_plant(state, control, dt: float, params: VehicleParams, *, h: float = 1e-3) -> VehicleState:
    """Classical RK4 at an inner step of ~h with the control held constant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    xi, zeta = _as_arrays(state, control)
    n = max(1, int(round(dt / h)))
    h_eff = dt / n
    rk4 = model_functions(params).rk4
    for _ in range(n):
        slip_angles(xi, params)
        xi = np.array(rk4(xi, zeta, h_eff)).reshape(-1)
    slip_angles(xi, params)
    return VehicleState.from_array(xi)


def plant_rollout(state, control, dt: float, params: VehicleParams, *, h: float = 1e-3) -> np.ndarray:
    """Like step_plant but returns every inner sample, shape (n + 1, NX)."""
    xi, zeta = _as_arrays(state, control)
    n = max(1, int(round(dt / h)))
    h_eff = dt / n
    rk4 = model_functions(params).rk4
    out = np.empty((n + 1, NX))
    out[0] = xi
    for k in range(n):
        slip_angles(out[k], params)
        out[k + 1] = np.array(rk4(out[k], zeta, h_eff)).reshape(-1)
    slip_angles(out[-1], params)
    return out


# ---------------------------
# Accelerations
# ---------------------------

def body_accelerations(state, control, params: VehicleParams) -> Tuple[float, float]:
    """Measured (longitudinal, lateral) C.G. acceleration in the body frame."""
    xi, zeta = _as_arrays(state, control)
    d = dynamics(xi, zeta, params)
    v, r, ux = xi[2], xi[3], xi[5]
    a_long = d[5] - r * v
    a_lat = d[2] + ux * r
    return float(a_long), float(a_lat)


def total_acceleration(state, control, params: VehicleParams) -> float:
    a_long, a_lat = body_accelerations(state, control, params)
    return float(np.hypot(a_long, a_lat))


def sample_accelerations(samples: np.ndarray, control, params: VehicleParams) -> Tuple[np.ndarray, np.ndarray]:
    """body_accelerations over a (n, NX) sample block held at one control."""
    xs = np.atleast_2d(np.asarray(samples, dtype=float))
    _, zeta = _as_arrays(xs[0], control)
    n = len(xs)
    d = np.array(model_functions(params).f.map(n)(xs.T, np.tile(zeta[:, None], (1, n))))
    v, r, ux = xs[:, 2], xs[:, 3], xs[:, 5]
    return d[5] - r * v, d[2] + ux * r
