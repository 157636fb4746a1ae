"""
Runs one closed-loop scenario:

1) Build the track
2) Prepare the envelope (planned, loaded, or the collision-avoidance layout)
3) Loop at the control rate: MPC tick, then the plant for one period at 1 ms
4) Write the run record (JSON + CSV + SVG + telemetry stream)

Simulation time drives the loop; control timestamps are exactly k·period.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from .envelope import SpatialEnvelope, exact_membership, save_envelope
from .errors import ConfigurationError, EnvelopeMpcError
from .mpc import ControllerContext, MpcState, mpc_step
from .road import RoadBoundary, save_track
from .scenario import Scenario
from .vehicle import NX, STATE_FIELDS, ControlInput, VehicleParams, VehicleState, plant_rollout, sample_accelerations

RECORD_FILE = "record.json"
SAMPLES_FILE = "samples.csv"
TELEMETRY_FILE = "telemetry.jsonl"
TIMING_FILE = "timing.json"
PLOT_FILE = "path.svg"
TRACK_FILE = "track.csv"
ENVELOPE_FILE = "envelope.txt"
CSV_COLUMNS = ("t",) + STATE_FIELDS + ("a_long", "a_lat", "g_exact", "progress")


# ---------------------------
# Record
# ---------------------------

@dataclass
class RunRecord:
    name: str
    status: str  # completed | failed | timeout
    reason: str
    times: np.ndarray
    states: np.ndarray  # (n, NX)
    membership: np.ndarray
    a_long: np.ndarray
    a_lat: np.ndarray
    progress: np.ndarray
    controls: np.ndarray  # (k, 1 + NU): t, delta_f_rate, jx
    telemetry: List[Dict[str, Any]] = field(default_factory=list)
    mu_f: float = 0.9
    mu_r: float = 0.95
    g: float = 9.81
    completion_time: Optional[float] = None
    obstacle_hits: int = 0

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(self.states[:, 5], self.states[:, 2])

    @property
    def total_acceleration(self) -> np.ndarray:
        return np.hypot(self.a_long, self.a_lat)

    def metrics(self) -> Dict[str, Any]:
        """Summary numbers recomputable from the stored series."""
        speed = self.speed
        return {
            "status": self.status,
            "reason": self.reason,
            "completion_time": self.completion_time,
            "sim_time": float(self.times[-1]) if len(self.times) else 0.0,
            "distance": float(self.progress[-1] - self.progress[0]) if len(self.progress) else 0.0,
            "min_speed": float(speed.min()) if len(speed) else 0.0,
            "max_speed": float(speed.max()) if len(speed) else 0.0,
            "max_total_accel": float(self.total_acceleration.max()) if len(speed) else 0.0,
            "accel_budget": self.mu_r * self.g,
            "violations": int(np.count_nonzero(self.membership > 0.0)),
            "max_membership": float(self.membership.max()) if len(speed) else 0.0,
            "obstacle_hits": int(self.obstacle_hits),
            "n_samples": int(len(self.times)),
            "n_ticks": int(len(self.controls)),
            "failed_solves": sum(1 for t in self.telemetry if t.get("status") != "converged"),
            "safe_stop": any(t.get("applied") == "safe_stop" or t.get("status") == "safe_stop" for t in self.telemetry),
        }

    def timing(self) -> Dict[str, Any]:
        """Wall-clock solver statistics (not reproducible across machines)."""
        solved = [t for t in self.telemetry if not t.get("injected") and t.get("status") != "safe_stop"]
        ms = np.array([float(t.get("solve_time_ms", 0.0)) for t in solved])
        n = len(self.telemetry)
        timeouts = sum(1 for t in self.telemetry if t.get("status") == "timeout")
        return {
            "solve_time_mean_ms": float(ms.mean()) if len(ms) else 0.0,
            "solve_time_std_ms": float(ms.std()) if len(ms) else 0.0,
            "solve_time_median_ms": float(np.median(ms)) if len(ms) else 0.0,
            "timeout_fraction": timeouts / n if n else 0.0,
            "ticks": n,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "metrics": self.metrics(),
            "friction": {"mu_f": self.mu_f, "mu_r": self.mu_r, "g": self.g},
            "series": {
                "t": self.times.tolist(),
                "states": self.states.tolist(),
                "membership": self.membership.tolist(),
                "a_long": self.a_long.tolist(),
                "a_lat": self.a_lat.tolist(),
                "progress": self.progress.tolist(),
                "controls": self.controls.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], telemetry: List[Dict[str, Any]] | None = None) -> "RunRecord":
        m, s, fr = data["metrics"], data["series"], data.get("friction", {})
        return cls(
            name=data["name"],
            status=m["status"],
            reason=m.get("reason", ""),
            times=np.asarray(s["t"], dtype=float),
            states=np.asarray(s["states"], dtype=float).reshape(-1, NX),
            membership=np.asarray(s["membership"], dtype=float),
            a_long=np.asarray(s["a_long"], dtype=float),
            a_lat=np.asarray(s["a_lat"], dtype=float),
            progress=np.asarray(s["progress"], dtype=float),
            controls=np.asarray(s["controls"], dtype=float).reshape(-1, 3),
            telemetry=telemetry or [],
            mu_f=fr.get("mu_f", 0.9),
            mu_r=fr.get("mu_r", 0.95),
            g=fr.get("g", 9.81),
            completion_time=m.get("completion_time"),
            obstacle_hits=m.get("obstacle_hits", 0),
        )


def track_progress(road: RoadBoundary, points: np.ndarray, s_ref: float = 0.0) -> np.ndarray:
    """Arc length of each point, unrolled across laps so it never jumps by a lap length."""
    out = np.empty(len(points))
    ref = s_ref
    for i, p in enumerate(np.atleast_2d(points)):
        _, s, _ = road.nearest_station(p)
        if road.closed:
            delta = (s - ref) % road.length
            if delta > 0.5 * road.length:
                delta -= road.length
            s = ref + delta
        out[i] = ref = s
    return out


# ---------------------------
# Output
# ---------------------------

def write_samples_csv(record: RunRecord, path: Path, every: int = 10) -> Path:
    rows = range(0, len(record.times), max(1, every))
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for i in rows:
            w.writerow(
                [repr(float(record.times[i]))]
                + [repr(float(v)) for v in record.states[i]]
                + [repr(float(record.a_long[i])), repr(float(record.a_lat[i])), repr(float(record.membership[i])), repr(float(record.progress[i]))]
            )
    return path


def write_outputs(record: RunRecord, out_dir: str | Path, road: RoadBoundary, envelope: SpatialEnvelope | None = None, csv_every: int = 10) -> Path:
    from .compose import render_svg

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / RECORD_FILE).write_text(json.dumps(record.to_dict()), encoding="utf-8")
    (out / TIMING_FILE).write_text(json.dumps(record.timing(), indent=2), encoding="utf-8")
    with open(out / TELEMETRY_FILE, "w", encoding="utf-8") as f:
        for t in record.telemetry:
            f.write(json.dumps(t) + "\n")
    write_samples_csv(record, out / SAMPLES_FILE, csv_every)
    save_track(road, out / TRACK_FILE)
    if envelope is not None:
        save_envelope(envelope, out / ENVELOPE_FILE)
    (out / PLOT_FILE).write_text(render_svg(record, road, envelope), encoding="utf-8")
    return out


def load_record(run_dir: str | Path) -> RunRecord:
    d = Path(run_dir)
    try:
        data = json.loads((d / RECORD_FILE).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"No run record in {d}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Corrupt run record {d / RECORD_FILE}: {e}")
    telemetry = []
    tele = d / TELEMETRY_FILE
    if tele.exists():
        telemetry = [json.loads(ln) for ln in tele.read_text(encoding="utf-8").splitlines() if ln.strip()]
    return RunRecord.from_dict(data, telemetry)


# ---------------------------
# Closed loop
# ---------------------------

def _latency_rollout(
    state: VehicleState, previous: ControlInput, u: ControlInput, latency: float, period: float, params: VehicleParams, h: float
) -> Tuple[np.ndarray, int]:
    """
    Plant samples for one period, holding `previous` for the solver latency
    first. Returns the samples and how many of them ran on `previous`.
    """
    n = round(period / h)
    lag = min(max(round(latency / h), 0), n)
    if lag == 0:
        return plant_rollout(state, u, period, params, h=h), 0
    first = plant_rollout(state, previous, lag * h, params, h=h)
    if lag == n:
        return first, lag
    second = plant_rollout(first[-1], u, period - lag * h, params, h=h)
    return np.vstack([first, second[1:]]), lag


def run_scenario(
    scenario: Scenario,
    out_dir: str | Path | None = None,
    *,
    realtime_strict: Optional[bool] = None,
    deterministic: bool = False,
) -> RunRecord:
    """
    Closed-loop run. Setup errors raise; anything that goes wrong inside the
    loop ends the run and is recorded as a failure.
    `deterministic` drops the wall-clock solve budget so reruns match exactly.
    """
    ctrl = scenario.controller
    strict = ctrl.realtime_strict if realtime_strict is None else realtime_strict

    logger.info("1) Building track for scenario {} …", scenario.name)
    road = scenario.track.build()
    params = scenario.vehicle_params()
    bounds = scenario.linear_bounds(params)
    weights = scenario.cost_weights()
    if scenario.termination.kind == "lap" and not road.closed:
        raise ConfigurationError(f"Scenario {scenario.name!r} terminates on a lap but its track is open")

    logger.info("2) Preparing {} envelope …", scenario.envelope.kind)
    envelope = scenario.build_envelope(road)
    obstacle = scenario.obstacle.obstacle() if scenario.obstacle else None

    ctx = ControllerContext(
        params=params,
        bounds=bounds,
        weights=weights,
        envelope=envelope,
        road=road,
        window=ctrl.window,
        budget_ms=None if deterministic else ctrl.budget_ms,
        control_period=ctrl.control_period,
        max_failures=ctrl.max_failures,
        envelope_margin=ctrl.envelope_margin,
        max_iter=ctrl.max_iter,
        cost_to_go_speed=ctrl.cost_to_go_speed,
        cost_to_go_cadence=ctrl.cost_to_go_cadence,
        fault_rate=ctrl.fault_rate,
        rng=np.random.default_rng(scenario.seed),
    )

    period, h = ctrl.control_period, ctrl.plant_dt
    state = scenario.initial.state(road)
    s0 = road.nearest_station((state.x, state.y))[1]
    mpc = MpcState()
    applied = ControlInput()

    times: List[np.ndarray] = []
    states: List[np.ndarray] = []
    a_long: List[np.ndarray] = []
    a_lat: List[np.ndarray] = []
    progress: List[np.ndarray] = []
    controls: List[List[float]] = []
    telemetry: List[Dict[str, Any]] = []
    status, reason, done_at = "timeout", "max sim time reached", None
    obstacle_hits = 0
    s_ref = s0

    logger.info("3) Closed loop at {:.0f} Hz …", 1.0 / period)
    k = 0
    try:
        while True:
            clock = k * period
            if clock >= scenario.termination.max_time - 1e-12:
                status = "completed" if scenario.termination.kind == "time" else "timeout"
                reason = "max sim time reached"
                break
            u, mpc = mpc_step(mpc, state, ctx, clock)
            tele = dict(mpc.last_telemetry)
            telemetry.append(tele)
            controls.append([clock, u.delta_f_rate, u.jx])

            latency = float(tele.get("solve_time_ms", 0.0)) / 1000.0 if strict else 0.0
            block, lag = _latency_rollout(state, applied, u, latency, period, params, h)
            body = block[:-1]
            al = np.empty(len(body))
            at = np.empty(len(body))
            for sl, c in ((slice(0, lag), applied), (slice(lag, None), u)):
                if len(body[sl]):
                    al[sl], at[sl] = sample_accelerations(body[sl], c, params)
            applied = u
            prog = track_progress(road, body[:, :2], s_ref)
            s_ref = float(prog[-1])

            times.append(clock + h * np.arange(len(body)))
            states.append(body)
            a_long.append(al)
            a_lat.append(at)
            progress.append(prog)

            if obstacle is not None:
                for p in body:
                    _, s, lat = road.nearest_station(p[:2])
                    obstacle_hits += obstacle.blocks_point(s, lat)

            state = VehicleState.from_array(block[-1])
            k += 1

            term = scenario.termination
            if term.kind == "lap" and prog[-1] - s0 >= road.length:
                i = int(np.argmax(prog - s0 >= road.length))
                done_at = float(times[-1][i])
                status, reason = "completed", "lap completed"
                break
            if term.kind == "goal_x" and np.any(body[:, 0] > term.goal_x):
                i = int(np.argmax(body[:, 0] > term.goal_x))
                done_at = float(times[-1][i])
                status, reason = "completed", f"x exceeded {term.goal_x} m"
                break
            if mpc.safe_stop and state.ux < 1.0:
                status, reason = "failed", "safe stop after repeated solver failures"
                break
    except EnvelopeMpcError as e:
        logger.exception("Scenario {} failed at t={:.3f}s: {}", scenario.name, k * period, e)
        status, reason = "failed", f"{type(e).__name__}: {e}"

    final_t = k * period
    times.append(np.array([final_t]))
    states.append(state.to_array()[None, :])
    fa_long, fa_lat = sample_accelerations(state.to_array()[None, :], applied, params) if state.ux > 0.1 else (np.zeros(1), np.zeros(1))
    a_long.append(np.atleast_1d(fa_long))
    a_lat.append(np.atleast_1d(fa_lat))
    progress.append(np.array([s_ref]))

    all_states = np.vstack(states)
    record = RunRecord(
        name=scenario.name,
        status=status,
        reason=reason,
        times=np.concatenate(times),
        states=all_states,
        membership=np.asarray(exact_membership(all_states[:, 0], all_states[:, 1], envelope), dtype=float).reshape(-1),
        a_long=np.concatenate(a_long),
        a_lat=np.concatenate(a_lat),
        progress=np.concatenate(progress),
        controls=np.asarray(controls, dtype=float).reshape(-1, 3),
        telemetry=telemetry,
        mu_f=params.mu_f,
        mu_r=params.mu_r,
        g=params.g,
        completion_time=done_at,
        obstacle_hits=int(obstacle_hits),
    )
    m = record.metrics()
    logger.info(
        "Scenario {} {}: t={} max speed {:.2f} m/s, max accel {:.2f} m/s², violations {}",
        scenario.name, status, done_at, m["max_speed"], m["max_total_accel"], m["violations"],
    )

    if out_dir is not None:
        logger.info("4) Writing outputs to {} …", out_dir)
        write_outputs(record, out_dir, road, envelope, ctrl.csv_every)
    return record
