import json
import math
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from app.compose import render_svg, summarize
from app.costs import CostWeights
from app.envelope import EnvelopeBlock, LinearBounds, envelope_constraint, exact_membership, finalize_envelope
from app.errors import ConfigurationError
from app.mpc import ControllerContext, MpcState, mpc_step, safe_stop_control
from app.pipeline import (
    ENVELOPE_FILE,
    PLOT_FILE,
    RECORD_FILE,
    SAMPLES_FILE,
    TELEMETRY_FILE,
    TIMING_FILE,
    TRACK_FILE,
    load_record,
    run_scenario,
    track_progress,
    write_outputs,
)
from app.road import RoadBoundary, load_track, save_track
from app.scenario import load_scenario, scenario_from_mapping
from app.tracks import Obstacle, build_track, cis_envelope, cis_highway, circuit_track, export_tracks
from app.vehicle import ControlInput, VehicleParams, VehicleState

SVG = "{http://www.w3.org/2000/svg}"


# ---------------------------
# Tracks
# ---------------------------

def test_builtin_tracks(oval):
    assert oval.closed
    np.testing.assert_array_equal(oval.left[0], oval.left[-1])
    assert oval.length == pytest.approx(200 + 2 * math.pi * 35, abs=1.0)
    np.testing.assert_allclose(oval.half_widths, 5.0, atol=1e-9)
    circuit = circuit_track()
    assert circuit.closed and circuit.length == pytest.approx(2450.0, rel=1e-2)
    cis = cis_highway()
    assert not cis.closed and cis.length == pytest.approx(300.0, abs=1.0)
    with pytest.raises(ConfigurationError):
        build_track("nurburgring")


def test_export_tracks(tmp_path):
    paths = export_tracks(tmp_path)
    assert sorted(p.name for p in paths) == ["circuit.csv", "cis.csv", "oval.csv", "trail.csv"]
    again = load_track(tmp_path / "oval.csv", spacing=None)
    assert again.closed


def test_track_csv_round_trip(tmp_path, oval):
    back = load_track(save_track(oval, tmp_path / "oval.csv"), spacing=None)
    np.testing.assert_array_equal(back.left, oval.left)
    np.testing.assert_array_equal(back.right, oval.right)


def test_load_track_circle_half_width(tmp_path):
    phi = np.linspace(0.0, 2 * np.pi, 6001)
    phi[-1] = 0.0
    ring = np.column_stack([np.cos(phi), np.sin(phi)])
    path = tmp_path / "circle.csv"
    rows = ["left_x,left_y,right_x,right_y"] + [",".join(repr(float(v)) for v in (46 * c, 46 * s, 54 * c, 54 * s)) for c, s in ring]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    road = load_track(path)
    assert road.closed
    np.testing.assert_allclose(road.half_widths, 4.0, atol=1e-6)


def test_load_track_midline_and_errors(tmp_path):
    path = tmp_path / "two.csv"
    path.write_text("left_x,left_y,right_x,right_y\n0,3,0,-1\n10,3,10,-1\n", encoding="utf-8")
    road = load_track(path, spacing=None)
    np.testing.assert_allclose(road.centerline, [[0, 1], [10, 1]])
    path.write_text("0,3,0\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_track(path)
    path.write_text("0,3,0,-1\n0,3,0,-1\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_track(path)


def test_track_progress_unrolls_laps(oval):
    pts = np.array([oval.point_at(s) for s in np.arange(380.0, 460.0, 5.0)])
    prog = track_progress(oval, pts, 380.0)
    assert np.all(np.diff(prog) > 0)
    assert prog[-1] == pytest.approx(455.0, abs=1e-6)


# ---------------------------
# Collision-avoidance layout
# ---------------------------

def test_cis_envelope_leaves_obstacle_uncovered():
    road = cis_highway()
    obstacle = Obstacle(55.0, 59.5, "right")
    env = cis_envelope(road, obstacle)
    xs = np.linspace(55.0, 59.5, 10)
    ys = np.linspace(-3.6, -0.05, 10)
    X, Y = np.meshgrid(xs, ys)
    assert np.all(env.g_lse(X.ravel(), Y.ravel()) - env.epsilon0 > 0)
    assert env.g_lse(57.0, 1.85) - env.epsilon0 < 0
    assert env.g_lse(20.0, -1.85) - env.epsilon0 < 0
    assert obstacle.blocks_point(57.0, -1.0) and not obstacle.blocks_point(57.0, 1.0)
    with pytest.raises(ConfigurationError):
        Obstacle(10.0, 5.0)


# ---------------------------
# Controller
# ---------------------------

@pytest.fixture(scope="module")
def controller():
    params = VehicleParams()
    blocks = [EnvelopeBlock(-20.0 + 25.0 * k, 0.0, 0.0, 15.0, 4.0) for k in range(10)]
    ctx = ControllerContext(
        params=params,
        bounds=LinearBounds.from_params(params),
        weights=CostWeights(specific="collision_avoidance", u_des=20.0),
        envelope=finalize_envelope(blocks, -15.0),
        budget_ms=None,
        max_failures=3,
    )
    start = VehicleState(x=0.0, y=0.0, v=0.0, r=0.0, psi=0.0, ux=20.0, delta_f=0.0, ax=0.0)
    return ctx, start


def test_mpc_fallback_and_safe_stop(controller):
    ctx, start = controller
    u, mpc = mpc_step(MpcState(), start, ctx, 0.0)
    assert mpc.last_telemetry["status"] == "converged"
    assert u == mpc.last_solution.control(0)
    plan = mpc.last_solution

    faulty = ControllerContext(**{**ctx.__dict__, "fault_rate": 1.0})
    u1, mpc = mpc_step(mpc, start, faulty, 0.1)
    assert mpc.last_telemetry["injected"] and mpc.last_telemetry["applied"] == "fallback[1]"
    assert u1 == plan.control(1)
    u2, mpc = mpc_step(mpc, start, faulty, 0.2)
    assert u2 == plan.control(2)
    u3, mpc = mpc_step(mpc, start, faulty, 0.3)
    assert mpc.safe_stop and mpc.last_telemetry["applied"] == "safe_stop"
    assert u3 == safe_stop_control(start, ctx.bounds, ctx.control_period)
    _, mpc = mpc_step(mpc, start, ctx, 0.4)
    assert mpc.last_telemetry["status"] == "safe_stop"


def test_first_failure_holds_zero_control(controller):
    ctx, start = controller
    faulty = ControllerContext(**{**ctx.__dict__, "fault_rate": 1.0})
    u, mpc = mpc_step(MpcState(), start, faulty, 0.0)
    assert u == ControlInput(0.0, 0.0)
    assert mpc.last_telemetry["applied"] == "hold"


def test_safe_stop_ramps_to_braking_limit():
    bounds = LinearBounds.from_params(VehicleParams())
    state = VehicleState(0, 0, 0, 0, 0, 10.0, 0.0, 0.0)
    assert safe_stop_control(state, bounds, 0.1) == ControlInput(0.0, bounds.jx_min)
    at_limit = state.replace(ax=bounds.ax_min)
    assert safe_stop_control(at_limit, bounds, 0.1) == ControlInput(0.0, 0.0)


# ---------------------------
# Rendering and summaries
# ---------------------------

def test_render_bare_track(oval):
    root = ET.fromstring(render_svg(None, oval))
    boundaries = [e for e in root.iter(f"{SVG}polyline") if e.get("class") == "boundary"]
    assert len(boundaries) == 2
    assert root.find(f"{SVG}g[@id='gg']") is None


def test_render_constant_speed_record(make_record, oval):
    rec = make_record()
    root = ET.fromstring(render_svg(rec, oval))
    colors = {e.get("stroke") for e in root.iter(f"{SVG}line") if e.get("class") == "path"}
    assert len(colors) == 1
    radii = {e.get("class"): float(e.get("data-radius")) for e in root.iter(f"{SVG}circle") if e.get("class", "").startswith("limit")}
    assert radii["limit-front"] == pytest.approx(0.9 * 9.81, abs=1e-4)
    assert radii["limit-rear"] == pytest.approx(0.95 * 9.81, abs=1e-4)


def test_summarize_single_record(make_record):
    rec = make_record()
    text, data = summarize([rec])
    assert rec.name in text and "completed" in text
    assert data[rec.name]["violations"] == 0
    assert data[rec.name]["max_total_accel"] == pytest.approx(3.0)
    ms = [t["solve_time_ms"] for t in rec.telemetry]
    assert data[rec.name]["solve_time_mean_ms"] == pytest.approx(np.mean(ms), abs=1e-9)
    assert data[rec.name]["solve_time_std_ms"] == pytest.approx(np.std(ms), abs=1e-9)
    with pytest.raises(ValueError):
        summarize([])


def test_outputs_round_trip(tmp_path, make_record, oval):
    rec = make_record()
    env = finalize_envelope([EnvelopeBlock(50.0, -35.0, 0.0, 60.0, 4.0)], -15.0)
    out = write_outputs(rec, tmp_path / "run", oval, env)
    for name in (RECORD_FILE, SAMPLES_FILE, TELEMETRY_FILE, TIMING_FILE, TRACK_FILE, ENVELOPE_FILE, PLOT_FILE):
        assert (out / name).exists()
    back = load_record(out)
    assert back.metrics() == rec.metrics()
    assert back.timing() == rec.timing()
    assert json.loads((out / TIMING_FILE).read_text())["ticks"] == 3
    with pytest.raises(ConfigurationError):
        load_record(tmp_path / "nothing")


# ---------------------------
# Scenarios
# ---------------------------

def test_scenario_files_load():
    oval = load_scenario("scenarios/oval.yaml")
    assert oval.track.name == "oval" and oval.termination.kind == "lap"
    assert oval.cost_weights().specific == "racing"
    assert oval.vehicle_params().mu_r == 0.95
    trail = load_scenario("scenarios/trail.yaml")
    assert trail.vehicle_params().mu_f == 0.6
    assert trail.linear_bounds(trail.vehicle_params()).ux_max == 20.0
    cis = load_scenario("scenarios/cis.yaml")
    assert cis.obstacle.obstacle() == Obstacle(55.0, 59.5, "right")
    assert cis.cost_weights().u_des == 20.0


SCENARIO_FILES = sorted((Path(__file__).parent / "config" / "scenarios").glob("*.yaml"))


@pytest.mark.slow
@pytest.mark.parametrize("path", SCENARIO_FILES, ids=lambda p: p.stem)
def test_scenario_envelopes_are_conservative(path):
    sc = load_scenario(path)
    road = sc.track.build()
    env = sc.build_envelope(road)
    x0, y0, x1, y1 = road.bounding_box(pad=2.0)
    pts = np.random.default_rng(sc.seed).uniform([x0, y0], [x1, y1], (100_000, 2))
    feasible = envelope_constraint(pts[:, 0], pts[:, 1], env) < 0
    outside = exact_membership(pts[:, 0], pts[:, 1], env) > 0
    assert not np.any(feasible & outside)
    assert feasible.any()


def test_scenario_validation():
    with pytest.raises(ConfigurationError):
        scenario_from_mapping({"name": "x", "track": {"name": "cis"}, "envelope": {"kind": "cis"}})
    with pytest.raises(ConfigurationError):
        scenario_from_mapping({"name": "x", "track": {"name": "oval", "seed": 3}})
    with pytest.raises(ConfigurationError):
        scenario_from_mapping({"name": "x", "track": {"name": "oval"}, "termination": {"kind": "goal_x"}})


def test_lap_on_open_track_is_rejected():
    sc = scenario_from_mapping({"name": "x", "track": {"name": "trail"}, "termination": {"kind": "lap"}})
    with pytest.raises(ConfigurationError):
        run_scenario(sc)


def test_initial_condition_pose(oval):
    sc = scenario_from_mapping({"name": "x", "track": {"name": "oval"}, "initial": {"s": 10.0, "lateral": 1.5, "ux": 8.0}})
    s = sc.initial.state(oval)
    assert (s.x, s.y) == pytest.approx((10.0, -33.5))
    assert s.psi == pytest.approx(0.0, abs=1e-12)


# ---------------------------
# Closed loop
# ---------------------------

@pytest.mark.slow
def test_oval_lap(tmp_path):
    rec = run_scenario(load_scenario("scenarios/oval.yaml"), tmp_path / "oval", deterministic=True)
    m = rec.metrics()
    assert m["status"] == "completed"
    assert m["violations"] == 0
    assert m["max_total_accel"] <= 1.05 * rec.mu_r * rec.g
    assert (tmp_path / "oval" / PLOT_FILE).exists()

    # second half of the lap: top straight [210, 310) m, left half circle [310, 420) m
    speed, s = rec.speed, rec.progress - rec.progress[0]
    entry = speed[(s >= 210.0) & (s < 310.0)].max()
    apex = speed[(s >= 310.0) & (s < 420.0)].min()
    assert apex < entry - 0.5


@pytest.mark.slow
def test_oval_lap_with_injected_timeouts():
    rec = run_scenario(load_scenario("scenarios/oval_faults.yaml"), deterministic=True)
    assert rec.status == "completed"
    assert rec.metrics()["violations"] == 0
    assert any(t.get("injected") for t in rec.telemetry)


@pytest.mark.slow
def test_cis_avoids_obstacle_and_settles():
    sc = load_scenario("scenarios/cis.yaml")
    assert sc.obstacle.s_start - sc.initial.s == pytest.approx(35.0)
    rec = run_scenario(sc, deterministic=True)
    assert rec.states[0, 5] == pytest.approx(35.0)
    assert rec.status == "completed"
    assert rec.obstacle_hits == 0
    late = rec.times >= 6.0
    assert np.all(np.abs(rec.states[late, 5] - 20.0) <= 1.0)
    assert rec.total_acceleration.max() > 0.85 * rec.mu_f * rec.g


@pytest.mark.slow
def test_circuit_solve_times_within_budget():
    rec = run_scenario(load_scenario("scenarios/circuit.yaml"))
    timing = rec.timing()
    assert timing["ticks"] > 0
    assert timing["solve_time_median_ms"] <= 100.0
    assert timing["timeout_fraction"] <= 0.10


@pytest.mark.slow
def test_trail_reaches_goal():
    rec = run_scenario(load_scenario("scenarios/trail.yaml"), deterministic=True)
    assert rec.status == "completed"
    assert rec.completion_time is not None and math.isfinite(rec.completion_time)
    assert rec.metrics()["violations"] == 0


@pytest.mark.slow
def test_deterministic_runs_repeat(tmp_path):
    sc = load_scenario("scenarios/cis.yaml")
    sc = sc.model_copy(update={"termination": sc.termination.model_copy(update={"max_time": 1.0})})
    run_scenario(sc, tmp_path / "a", deterministic=True)
    run_scenario(sc, tmp_path / "b", deterministic=True)
    assert (tmp_path / "a" / RECORD_FILE).read_bytes() == (tmp_path / "b" / RECORD_FILE).read_bytes()
