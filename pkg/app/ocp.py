"""
Direct transcription of the envelope MPC problem and its interior-point solve.

Grid: 25 points, 24 intervals (15 × 0.15 s then 9 × 0.5 s, Tp = 6.75 s).

Decision vector (scaled to order one, unscaled on return):
  [ξ_0, ξ_1, …, ξ_24, ζ_0, …, ζ_23]      25 × 8 + 24 × 2 = 248
ξ_0 is pinned to the measured state through its bounds.

Constraint rows, in order:
  24 × 8  backward Euler defects  ξ_{k+1} − ξ_k − T_k V(ξ_{k+1}, ζ_k) = 0
  25      envelope                g_envelope(ξ_k) ≤ −δ_strict − envelope_margin
  25      power limit             ax_k + p_a (ux_k − p_b) ≤ −δ_strict
The envelope and power rows at k = 0 are left unbounded: the first state is
measured, not decided.

Parameter vector: K window blocks × (xb, yb, psib, Lb, Wb), ε₀, the ten
cost-to-go coefficients with their frame origin and scale, and the offroad
normalizer 1/(x_0 − x_goal).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Optional, Tuple

import casadi as ca
import numpy as np
from loguru import logger

from .costs import (
    MONOMIALS,
    CostBreakdown,
    CostToGo,
    CostWeights,
    objective_terms,
    trajectory_breakdown,
)
from .envelope import (
    LinearBounds,
    SpatialEnvelope,
    block_distance_from_row,
    block_rows,
    lse_aggregate_symbolic,
)
from .errors import ModelDomainError
from .vehicle import NU, NX, ControlInput, VehicleParams, VehicleState, model_functions

DELTA_STRICT = 1e-6
CONVERGED_RESIDUAL = 1e-6
STATUSES = ("converged", "max_iter", "timeout", "infeasible")

_IPOPT_STATUS = {
    "Solve_Succeeded": "converged",
    "Solved_To_Acceptable_Level": "converged",
    "Maximum_Iterations_Exceeded": "max_iter",
    "Maximum_WallTime_Exceeded": "timeout",
    "Maximum_CpuTime_Exceeded": "timeout",
}


# ---------------------------
# Grid and problem
# ---------------------------

@dataclass(frozen=True)
class CollocationGrid:
    intervals: Tuple[float, ...] = (0.15,) * 15 + (0.5,) * 9

    def __post_init__(self) -> None:
        if not self.intervals or any(t <= 0 for t in self.intervals):
            raise ValueError("Collocation intervals must all be positive")

    @property
    def n_intervals(self) -> int:
        return len(self.intervals)

    @property
    def n_points(self) -> int:
        return len(self.intervals) + 1

    @property
    def horizon(self) -> float:
        return math.fsum(self.intervals)

    @property
    def node_times(self) -> np.ndarray:
        return np.array([math.fsum(self.intervals[:k]) for k in range(self.n_points)])


@dataclass(frozen=True, eq=False)
class OcpProblem:
    initial_state: VehicleState
    params: VehicleParams
    bounds: LinearBounds
    envelope: SpatialEnvelope
    weights: CostWeights
    grid: CollocationGrid = field(default_factory=CollocationGrid)
    cost_to_go: Optional[CostToGo] = None
    envelope_margin: float = 0.0
    max_iter: int = 200

    @property
    def n_variables(self) -> int:
        return self.grid.n_points * NX + self.grid.n_intervals * NU

    @property
    def n_defects(self) -> int:
        return self.grid.n_intervals * NX

    @property
    def n_constraints(self) -> int:
        return self.n_defects + 2 * self.grid.n_points


@dataclass(frozen=True)
class InitialGuess:
    states: np.ndarray  # (N+1, NX)
    controls: np.ndarray  # (N, NU)
    lam_x: Optional[np.ndarray] = None
    lam_g: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class OcpSolution:
    states: np.ndarray  # (N+1, NX)
    controls: np.ndarray  # (N, NU)
    objective: float
    breakdown: CostBreakdown
    status: str
    solve_time: float  # ms
    kkt_residual: float
    iterations: int
    max_defect: float
    grid: CollocationGrid
    lam_x: Optional[np.ndarray] = None
    lam_g: Optional[np.ndarray] = None
    return_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "converged"

    def state(self, k: int) -> VehicleState:
        return VehicleState.from_array(self.states[k])

    def control(self, k: int) -> ControlInput:
        return ControlInput.from_array(self.controls[min(max(k, 0), len(self.controls) - 1)])

    def telemetry(self) -> Dict[str, object]:
        return {
            "status": self.status,
            "return_status": self.return_status,
            "iterations": self.iterations,
            "solve_time_ms": self.solve_time,
            "kkt_residual": self.kkt_residual,
            "max_defect": self.max_defect,
            "objective": self.objective,
            "breakdown": self.breakdown.to_dict(),
        }


# ---------------------------
# Scaling
# ---------------------------

def state_scale(bounds: LinearBounds) -> np.ndarray:
    return np.array([100.0, 100.0, bounds.ux_max, 1.0, 1.0, bounds.ux_max, 1.0, 10.0])


CONTROL_SCALE = np.array([1.0, 10.0])


def _variable_scale(bounds: LinearBounds, grid: CollocationGrid) -> np.ndarray:
    return np.concatenate([np.tile(state_scale(bounds), grid.n_points), np.tile(CONTROL_SCALE, grid.n_intervals)])


def split_variables(w: np.ndarray, grid: CollocationGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Unscaled decision vector → (states, controls)."""
    n_x = grid.n_points * NX
    return w[:n_x].reshape(grid.n_points, NX), w[n_x:].reshape(grid.n_intervals, NU)


def join_variables(states: np.ndarray, controls: np.ndarray) -> np.ndarray:
    return np.concatenate([np.asarray(states, dtype=float).reshape(-1), np.asarray(controls, dtype=float).reshape(-1)])


# ---------------------------
# Symbolic NLP (cached per structure)
# ---------------------------

@dataclass(frozen=True)
class _NlpKey:
    params: VehicleParams
    bounds: LinearBounds
    weights: CostWeights
    grid: CollocationGrid
    n_blocks: int
    p: int
    rho: float


@dataclass(frozen=True, eq=False)
class _SymbolicNlp:
    key: _NlpKey
    nlp: Dict[str, ca.SX]
    f: ca.Function
    g: ca.Function
    grad_f: ca.Function
    jac_g: ca.Function
    n_params: int


def _n_params(n_blocks: int) -> int:
    return 5 * n_blocks + 1 + len(MONOMIALS) + 3 + 1


@lru_cache(maxsize=16)
def _symbolic_nlp(key: _NlpKey) -> _SymbolicNlp:
    grid, params, bounds, weights = key.grid, key.params, key.bounds, key.weights
    N, K = grid.n_intervals, key.n_blocks
    scale = _variable_scale(bounds, grid)
    z = ca.SX.sym("z", len(scale))
    w = z * ca.DM(scale)
    P = ca.SX.sym("p", _n_params(K))

    X = [w[k * NX:(k + 1) * NX] for k in range(N + 1)]
    off = (N + 1) * NX
    U = [w[off + k * NU: off + (k + 1) * NU] for k in range(N)]

    rows = [P[5 * j: 5 * j + 5] for j in range(K)]
    eps0 = P[5 * K]
    cg = 5 * K + 1
    coeffs = tuple(P[cg + i] for i in range(len(MONOMIALS)))
    ctg = CostToGo(coeffs, (P[cg + 10], P[cg + 11]), P[cg + 12], 0.0)
    offroad_norm = P[cg + 13]

    def g_env(x, y):
        vals = [block_distance_from_row(x, y, row, key.p) for row in rows]
        return lse_aggregate_symbolic(vals, key.rho) - eps0

    terminal = None
    if weights.specific == "racing":
        terminal = lambda xf, yf: weights.w_go_gain * ctg(xf, yf)
    elif weights.specific == "offroad":
        terminal = lambda xf, yf: weights.w_terminal * (xf - weights.x_goal) * offroad_norm

    f_model = model_functions(params).f
    defects = []
    for k in range(N):
        defects.append(X[k + 1] - X[k] - grid.intervals[k] * f_model(X[k + 1], U[k]))
    env_rows = [g_env(X[k][0], X[k][1]) for k in range(N + 1)]
    power_rows = [X[k][7] + bounds.p_a * (X[k][5] - bounds.p_b) for k in range(N + 1)]

    J = sum(objective_terms(X, U, grid.intervals, weights, g_env, terminal))
    G = ca.vertcat(*defects, *env_rows, *power_rows)
    nlp = {"x": z, "p": P, "f": J, "g": G}
    logger.info("Built OCP transcription: {} variables, {} constraints, {} blocks", z.numel(), G.numel(), K)
    return _SymbolicNlp(
        key=key,
        nlp=nlp,
        f=ca.Function("ocp_f", [z, P], [J]),
        g=ca.Function("ocp_g", [z, P], [G]),
        grad_f=ca.Function("ocp_grad_f", [z, P], [ca.gradient(J, z)]),
        jac_g=ca.Function("ocp_jac_g", [z, P], [ca.jacobian(G, z)]),
        n_params=_n_params(K),
    )


@lru_cache(maxsize=32)
def _solver(key: _NlpKey, max_iter: int, budget_s: Optional[float], warm: bool) -> ca.Function:
    sym = _symbolic_nlp(key)
    opts: Dict[str, object] = {
        "print_time": False,
        "ipopt.print_level": 0,
        "ipopt.sb": "yes",
        "ipopt.max_iter": int(max_iter),
        "ipopt.tol": 1e-8,
        "ipopt.constr_viol_tol": 1e-8,
        "ipopt.acceptable_tol": 1e-6,
        "ipopt.acceptable_constr_viol_tol": 1e-7,
        "ipopt.mu_strategy": "adaptive",
    }
    if budget_s is not None:
        opts["ipopt.max_wall_time"] = float(budget_s)
    if warm:
        opts.update(
            {
                "ipopt.warm_start_init_point": "yes",
                "ipopt.warm_start_bound_push": 1e-9,
                "ipopt.warm_start_slack_bound_push": 1e-9,
                "ipopt.warm_start_mult_bound_push": 1e-9,
                "ipopt.mu_init": 1e-6,
            }
        )
    return ca.nlpsol("envelope_ocp", "ipopt", sym.nlp, opts)


# ---------------------------
# Numeric NLP
# ---------------------------

@dataclass(frozen=True, eq=False)
class OcpNlp:
    problem: OcpProblem
    key: _NlpKey
    scale: np.ndarray
    lbx: np.ndarray
    ubx: np.ndarray
    lbg: np.ndarray
    ubg: np.ndarray
    p: np.ndarray

    @property
    def symbolic(self) -> _SymbolicNlp:
        return _symbolic_nlp(self.key)

    @property
    def n_variables(self) -> int:
        return len(self.scale)

    @property
    def n_constraints(self) -> int:
        return len(self.lbg)

    def objective(self, w: np.ndarray) -> float:
        return float(self.symbolic.f(w / self.scale, self.p))

    def constraints(self, w: np.ndarray) -> np.ndarray:
        return np.array(self.symbolic.g(w / self.scale, self.p)).reshape(-1)

    def defects(self, w: np.ndarray) -> np.ndarray:
        return self.constraints(w)[: self.problem.n_defects]

    def violation(self, w: np.ndarray) -> float:
        g = self.constraints(w)
        viol = np.maximum(self.lbg - g, 0.0) + np.maximum(g - self.ubg, 0.0)
        box = np.maximum(self.lbx - w / self.scale, 0.0) + np.maximum(w / self.scale - self.ubx, 0.0)
        return float(max(np.max(viol), np.max(box * self.scale)))


def _parameter_vector(problem: OcpProblem) -> np.ndarray:
    blocks = list(problem.envelope.blocks)
    ctg = problem.cost_to_go
    if ctg is None:
        ctg = CostToGo(tuple(problem.weights.w_go), (0.0, 0.0), 1.0, 0.0)
    x0 = problem.initial_state.x
    den = x0 - problem.weights.x_goal
    norm = 1.0 / den if abs(den) >= 1e-12 else 0.0
    return np.concatenate(
        [
            block_rows(blocks).reshape(-1),
            [problem.envelope.epsilon0],
            ctg.coefficients,
            ctg.origin,
            [ctg.scale],
            [norm],
        ]
    )


def transcribe(problem: OcpProblem) -> OcpNlp:
    """Numeric bounds and parameters around the cached symbolic transcription."""
    grid, bounds = problem.grid, problem.bounds
    key = _NlpKey(
        params=problem.params,
        bounds=bounds,
        weights=problem.weights,
        grid=grid,
        n_blocks=len(problem.envelope.blocks),
        p=problem.envelope.p,
        rho=float(problem.envelope.rho_lse),
    )
    scale = _variable_scale(bounds, grid)
    xlo, xhi = bounds.state_box()
    ulo, uhi = bounds.control_box()
    xi0 = problem.initial_state.to_array()
    lbw = np.concatenate([xi0, np.tile(xlo, grid.n_intervals), np.tile(ulo, grid.n_intervals)])
    ubw = np.concatenate([xi0, np.tile(xhi, grid.n_intervals), np.tile(uhi, grid.n_intervals)])

    env_ub = -DELTA_STRICT - problem.envelope_margin
    n_pts = grid.n_points
    lbg = np.concatenate([np.zeros(problem.n_defects), np.full(n_pts, -np.inf), np.full(n_pts, -np.inf)])
    ubg = np.concatenate([np.zeros(problem.n_defects), [np.inf], np.full(n_pts - 1, env_ub), [np.inf], np.full(n_pts - 1, -DELTA_STRICT)])
    return OcpNlp(problem, key, scale, lbw / scale, ubw / scale, lbg, ubg, _parameter_vector(problem))


def cold_start_guess(problem: OcpProblem) -> InitialGuess:
    """Constant-speed straight-line rollout from the measured state, zero controls."""
    s0 = problem.initial_state
    t = problem.grid.node_times
    X = np.tile(s0.to_array(), (problem.grid.n_points, 1))
    ux = max(s0.ux, problem.bounds.ux_min)
    X[:, 0] = s0.x + ux * np.cos(s0.psi) * t
    X[:, 1] = s0.y + ux * np.sin(s0.psi) * t
    X[1:, 2:4] = 0.0
    X[1:, 5] = np.clip(ux, problem.bounds.ux_min, problem.bounds.ux_max)
    X[1:, 7] = np.clip(0.0, problem.bounds.ax_min, problem.bounds.ax_max)
    lo, hi = problem.bounds.state_box()
    X[1:] = np.clip(X[1:], lo, hi)
    return InitialGuess(X, np.zeros((problem.grid.n_intervals, NU)))


def _kkt_residual(stats: Dict[str, object]) -> float:
    it = stats.get("iterations") or {}
    try:
        return float(max(it["inf_pr"][-1], it["inf_du"][-1]))
    except (KeyError, IndexError, TypeError):
        return float("nan")


def solve(
    nlp: OcpNlp,
    budget_ms: Optional[float] = 100.0,
    warm_start: Optional[InitialGuess] = None,
) -> OcpSolution:
    """
    Run the interior-point solver. budget_ms=None removes the wall-clock cap,
    which makes the result depend only on the inputs and the iteration limit.
    """
    if budget_ms is not None and budget_ms <= 0:
        raise ValueError("budget_ms must be positive")
    problem = nlp.problem
    guess = warm_start or cold_start_guess(problem)
    w0 = join_variables(guess.states, guess.controls)
    w0[:NX] = problem.initial_state.to_array()
    z0 = np.clip(w0 / nlp.scale, nlp.lbx, nlp.ubx)

    warm = warm_start is not None and warm_start.lam_g is not None and warm_start.lam_x is not None
    solver = _solver(nlp.key, problem.max_iter, None if budget_ms is None else budget_ms / 1000.0, warm)
    args = dict(x0=z0, p=nlp.p, lbx=nlp.lbx, ubx=nlp.ubx, lbg=nlp.lbg, ubg=nlp.ubg)
    if warm:
        args.update(lam_x0=warm_start.lam_x, lam_g0=warm_start.lam_g)

    t0 = time.perf_counter()
    try:
        res = solver(**args)
    except RuntimeError as e:
        logger.warning("OCP solver raised: {}", e)
        res = None
    elapsed_ms = (time.perf_counter() - t0) * 1000.0
    stats = solver.stats()
    return_status = str(stats.get("return_status", "unknown"))
    status = _IPOPT_STATUS.get(return_status, "infeasible")

    if res is None:
        z = z0
        lam_x = lam_g = None
    else:
        z = np.array(res["x"]).reshape(-1)
        lam_x = np.array(res["lam_x"]).reshape(-1)
        lam_g = np.array(res["lam_g"]).reshape(-1)
    if not np.all(np.isfinite(z)):
        logger.warning("OCP iterate contains non-finite values ({})", return_status)
        status = "infeasible"
        z = z0
    w = z * nlp.scale
    X, U = split_variables(w, problem.grid)
    max_defect = float(np.max(np.abs(nlp.defects(w))))
    if status == "converged" and nlp.violation(w) > CONVERGED_RESIDUAL:
        logger.warning("Solver reported {} but violation {:.2e} exceeds tolerance", return_status, nlp.violation(w))
        status = "infeasible"

    try:
        breakdown = trajectory_breakdown(X, U, problem.grid.intervals, problem.envelope, problem.weights, problem.cost_to_go)
    except ModelDomainError:
        breakdown = CostBreakdown(np.nan, np.nan, np.nan, np.nan)
        status = "infeasible" if status == "converged" else status

    return OcpSolution(
        states=X,
        controls=U,
        objective=nlp.objective(w),
        breakdown=breakdown,
        status=status,
        solve_time=elapsed_ms,
        kkt_residual=_kkt_residual(stats),
        iterations=int(stats.get("iter_count", 0)),
        max_defect=max_defect,
        grid=problem.grid,
        lam_x=lam_x,
        lam_g=lam_g,
        return_status=return_status,
    )


# ---------------------------
# Warm start
# ---------------------------

def warm_shift(solution: OcpSolution, elapsed: float) -> InitialGuess:
    """
    Re-time the previous solution by `elapsed` seconds: states linearly
    interpolated on the old timeline (final state held past its end),
    piecewise-constant controls (zero past the end).
    """
    grid = solution.grid
    if elapsed < 0 or elapsed > grid.intervals[0] + 1e-12:
        raise ValueError(f"elapsed must lie in [0, {grid.intervals[0]}], got {elapsed}")
    if elapsed == 0:
        return InitialGuess(solution.states.copy(), solution.controls.copy(), solution.lam_x, solution.lam_g)
    t_old = grid.node_times
    t_new = t_old + elapsed
    X = np.column_stack([np.interp(t_new, t_old, solution.states[:, i]) for i in range(NX)])
    U = np.zeros_like(solution.controls)
    starts = t_new[:-1] + 1e-9
    idx = np.searchsorted(t_old, starts, side="right") - 1
    inside = idx < grid.n_intervals
    U[inside] = solution.controls[idx[inside]]
    return InitialGuess(X, U, solution.lam_x, solution.lam_g)


def check_derivatives(nlp: OcpNlp, w: np.ndarray, h: float = 1e-6) -> Tuple[float, float]:
    """
    Largest relative mismatch of (objective gradient, constraint Jacobian)
    against central differences at the unscaled point w.
    """
    sym = nlp.symbolic
    z = w / nlp.scale
    grad = np.array(sym.grad_f(z, nlp.p)).reshape(-1)
    jac = np.array(ca.densify(sym.jac_g(z, nlp.p)))
    fd_grad = np.zeros_like(grad)
    fd_jac = np.zeros_like(jac)
    for i in range(len(z)):
        step = h * max(1.0, abs(z[i]))
        zp, zm = z.copy(), z.copy()
        zp[i] += step
        zm[i] -= step
        fd_grad[i] = (float(sym.f(zp, nlp.p)) - float(sym.f(zm, nlp.p))) / (2 * step)
        fd_jac[:, i] = (np.array(sym.g(zp, nlp.p)).reshape(-1) - np.array(sym.g(zm, nlp.p)).reshape(-1)) / (2 * step)

    def rel(a: np.ndarray, b: np.ndarray) -> float:
        return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))

    return rel(grad, fd_grad), rel(jac, fd_jac)
