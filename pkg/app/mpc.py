"""
Receding-horizon controller around the envelope OCP.

Each tick (10 Hz by default):
  1. pick the block window around the measured position
  2. refit the racing cost-to-go when due
  3. solve from the warm-shifted previous solution (cold rollout otherwise)
  4. apply the first control interval on success
On a failed solve the controller keeps executing the last successful plan:
the k-th consecutive failure applies interval k of that plan. After
`max_failures` consecutive failures it commands a safe stop.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from loguru import logger

from .costs import CostToGo, CostWeights, fit_cost_to_go
from .envelope import LinearBounds, SpatialEnvelope, block_window
from .errors import EnvelopeMpcError
from .ocp import CollocationGrid, OcpProblem, OcpSolution, solve, transcribe, warm_shift
from .road import RoadBoundary
from .settings import settings
from .vehicle import ControlInput, VehicleParams, VehicleState


@dataclass
class ControllerContext:
    """Everything mpc_step needs besides the measurement and its own memory."""

    params: VehicleParams
    bounds: LinearBounds
    weights: CostWeights
    envelope: SpatialEnvelope
    road: Optional[RoadBoundary] = None
    grid: CollocationGrid = field(default_factory=CollocationGrid)
    window: int = field(default_factory=lambda: settings.block_window)
    budget_ms: Optional[float] = field(default_factory=lambda: settings.solve_budget_ms)
    control_period: float = field(default_factory=lambda: settings.control_period)
    max_failures: int = field(default_factory=lambda: settings.max_failures)
    envelope_margin: float = 0.0
    max_iter: int = 200
    cost_to_go_speed: Optional[float] = None  # defaults to bounds.ux_max
    cost_to_go_cadence: int = 1
    fault_rate: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


@dataclass(frozen=True)
class MpcState:
    last_solution: Optional[OcpSolution] = None
    last_solve_wall_time: Optional[float] = None  # simulation clock of the last success
    consecutive_failures: int = 0
    step_count: int = 0
    cost_to_go: Optional[CostToGo] = None
    safe_stop: bool = False
    last_telemetry: Dict[str, object] = field(default_factory=dict)


def safe_stop_control(state: VehicleState, bounds: LinearBounds, dt: float) -> ControlInput:
    """Ramp ax to the braking limit as fast as the jerk bound allows, hold steering."""
    jx = float(np.clip((bounds.ax_min - state.ax) / dt, bounds.jx_min, bounds.jx_max))
    return ControlInput(0.0, jx)


def _window_envelope(ctx: ControllerContext, state: VehicleState) -> SpatialEnvelope:
    blocks = block_window(ctx.envelope, state.x, state.y, ctx.window)
    return SpatialEnvelope(tuple(blocks), ctx.envelope.rho_lse, ctx.envelope.epsilon0)


def _refit_cost_to_go(mpc: MpcState, ctx: ControllerContext, state: VehicleState) -> Optional[CostToGo]:
    if ctx.weights.specific != "racing" or ctx.road is None:
        return mpc.cost_to_go
    if mpc.cost_to_go is not None and mpc.step_count % max(1, ctx.cost_to_go_cadence):
        return mpc.cost_to_go
    _, s0, _ = ctx.road.nearest_station((state.x, state.y))
    speed = ctx.cost_to_go_speed or ctx.bounds.ux_max
    return fit_cost_to_go(ctx.road, s0, speed, ctx.grid.horizon, origin=(state.x, state.y))


def mpc_step(
    mpc: MpcState,
    measured_state: VehicleState,
    ctx: ControllerContext,
    clock: float,
) -> Tuple[ControlInput, MpcState]:
    """One controller tick: returns the control to hold until the next tick."""
    step = mpc.step_count
    if mpc.safe_stop:
        u = safe_stop_control(measured_state, ctx.bounds, ctx.control_period)
        return u, replace(mpc, step_count=step + 1, last_telemetry={"status": "safe_stop", "clock": clock})

    ctg = _refit_cost_to_go(mpc, ctx, measured_state)
    problem = OcpProblem(
        initial_state=measured_state,
        params=ctx.params,
        bounds=ctx.bounds,
        envelope=_window_envelope(ctx, measured_state),
        weights=ctx.weights,
        grid=ctx.grid,
        cost_to_go=ctg,
        envelope_margin=ctx.envelope_margin,
        max_iter=ctx.max_iter,
    )

    guess = None
    if mpc.last_solution is not None and mpc.last_solve_wall_time is not None:
        elapsed = min(max(clock - mpc.last_solve_wall_time, 0.0), ctx.grid.intervals[0])
        guess = warm_shift(mpc.last_solution, elapsed)

    injected = ctx.fault_rate > 0 and ctx.rng.random() < ctx.fault_rate
    sol: Optional[OcpSolution] = None
    if injected:
        status = "timeout"
        telemetry: Dict[str, object] = {"status": status, "injected": True, "solve_time_ms": 0.0, "iterations": 0}
    else:
        try:
            sol = solve(transcribe(problem), ctx.budget_ms, guess)
            status = sol.status
            telemetry = sol.telemetry()
        except EnvelopeMpcError as e:
            logger.warning("MPC solve failed at t={:.2f}s: {}", clock, e)
            status = "infeasible"
            telemetry = {"status": status, "error": str(e), "solve_time_ms": 0.0, "iterations": 0}
    telemetry.update({"clock": clock, "step": step, "warm": guess is not None})

    if sol is not None and sol.ok:
        u = sol.control(0)
        new = MpcState(
            last_solution=sol,
            last_solve_wall_time=clock,
            consecutive_failures=0,
            step_count=step + 1,
            cost_to_go=ctg,
            last_telemetry=telemetry,
        )
        return u, new

    failures = mpc.consecutive_failures + 1
    if failures >= ctx.max_failures:
        logger.warning("{} consecutive failed solves at t={:.2f}s; commanding safe stop", failures, clock)
        u = safe_stop_control(measured_state, ctx.bounds, ctx.control_period)
        telemetry["applied"] = "safe_stop"
        return u, replace(mpc, consecutive_failures=failures, step_count=step + 1, cost_to_go=ctg, safe_stop=True, last_telemetry=telemetry)

    if mpc.last_solution is not None:
        u = mpc.last_solution.control(failures)
        telemetry["applied"] = f"fallback[{failures}]"
    else:
        u = ControlInput(0.0, 0.0)
        telemetry["applied"] = "hold"
    logger.debug("MPC {} at t={:.2f}s, applying {}", status, clock, telemetry["applied"])
    return u, replace(mpc, consecutive_failures=failures, step_count=step + 1, cost_to_go=ctg, last_telemetry=telemetry)
