import math

import numpy as np
import pytest

from app.costs import (
    MONOMIALS,
    CostWeights,
    envelope_cost,
    envelope_cost_from_value,
    envelope_cost_gradient,
    eval_cost_to_go,
    eval_cost_to_go_gradient,
    fit_cost_to_go,
    cost_to_go_samples,
    speed_cost,
    stage_cost,
    stage_cost_gradient,
    terminal_cost_offroad,
    trajectory_breakdown,
)
from app.envelope import EnvelopeBlock, SpatialEnvelope, finalize_envelope
from app.errors import ModelDomainError, PlanningError
from app.road import generate_road
from app.tracks import oval_track
from app.vehicle import ControlInput, VehicleState

UNIT = CostWeights(w_delta_f=1.0, w_ax=1.0, w_v=1.0, w_kappa=1.0, w_delta_f_rate=1.0, w_jx=1.0)


def state(**kw):
    base = dict(x=0.0, y=0.0, v=0.0, r=0.0, psi=0.0, ux=20.0, delta_f=0.0, ax=0.0)
    base.update(kw)
    return VehicleState(**base)


def test_stage_cost_hand_value():
    s = state(delta_f=0.1, ax=1.0, v=0.2, r=0.5, ux=10.0)
    assert stage_cost(s, ControlInput(0.05, 2.0), UNIT) == pytest.approx(5.055)
    assert stage_cost(state(), ControlInput(), UNIT) == 0.0


def test_stage_cost_is_linear_in_weights():
    s = state(delta_f=0.1, ax=1.0, v=0.2, r=0.5, ux=10.0)
    u = ControlInput(0.05, 2.0)
    doubled = UNIT.model_copy(update={k: 2.0 for k in ("w_delta_f", "w_ax", "w_v", "w_kappa", "w_delta_f_rate", "w_jx")})
    assert stage_cost(s, u, doubled) == pytest.approx(2 * stage_cost(s, u, UNIT))


def test_stage_cost_gradient():
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(50):
        xi = rng.uniform(-1, 1, 8)
        xi[5] = rng.uniform(2, 30)
        zeta = rng.uniform(-1, 1, 2)
        gx, gu = stage_cost_gradient(xi, zeta, UNIT)
        for i in range(8):
            xp, xm = xi.copy(), xi.copy()
            xp[i] += h
            xm[i] -= h
            fd = (stage_cost(xp, zeta, UNIT) - stage_cost(xm, zeta, UNIT)) / (2 * h)
            assert gx[i] == pytest.approx(fd, rel=1e-5, abs=1e-7)
        for i in range(2):
            up, um = zeta.copy(), zeta.copy()
            up[i] += h
            um[i] -= h
            fd = (stage_cost(xi, up, UNIT) - stage_cost(xi, um, UNIT)) / (2 * h)
            assert gu[i] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_stage_cost_domain():
    with pytest.raises(ModelDomainError):
        stage_cost(state(ux=0.05), ControlInput(), UNIT)


def test_envelope_cost_regimes():
    env = SpatialEnvelope((EnvelopeBlock(0.0, 0.0, 0.0, 10.0, 2.0),))
    assert envelope_cost(0.0, 0.0, env, 1.0, 20.0) == pytest.approx(2.06e-9, rel=1e-2)
    assert envelope_cost(10.0, 0.0, env, 3.0, 20.0) == pytest.approx(3 * math.log(2))
    w, theta = 2.0, 20.0
    weights = CostWeights(w_envelope=w, theta_hp=theta)
    h = 1e-5
    slope = (envelope_cost_from_value(3.0 + h, weights) - envelope_cost_from_value(3.0 - h, weights)) / (2 * h)
    assert slope == pytest.approx(w * theta, rel=1e-6)


def test_envelope_cost_monotone_outward():
    env = finalize_envelope([EnvelopeBlock(10.0 * k, 0.0, 0.0, 6.0, 2.0) for k in range(3)], -15.0)
    r = np.linspace(0.0, 30.0, 300)
    for x0 in np.linspace(-2.0, 22.0, 50):
        for sign in (1.0, -1.0):
            c = envelope_cost(np.full_like(r, x0), sign * r, env, 1.0, 20.0)
            assert np.all(np.diff(c) >= -1e-12)


def test_envelope_cost_gradient():
    env = finalize_envelope([EnvelopeBlock(10.0 * k, 0.0, 0.2, 6.0, 2.0) for k in range(3)], -15.0)
    h = 1e-6
    for x, y in [(1.0, 0.5), (12.0, 2.1), (25.0, -3.0)]:
        g = envelope_cost_gradient(x, y, env, 2.0, 20.0)
        fx = (envelope_cost(x + h, y, env, 2.0, 20.0) - envelope_cost(x - h, y, env, 2.0, 20.0)) / (2 * h)
        fy = (envelope_cost(x, y + h, env, 2.0, 20.0) - envelope_cost(x, y - h, env, 2.0, 20.0)) / (2 * h)
        np.testing.assert_allclose(g, [fx, fy], rtol=1e-5, atol=1e-8)


def test_speed_cost():
    assert speed_cost(20.0, 20.0, 1.0) == 0.0
    assert speed_cost(35.0, 20.0, 1.0) == 225.0
    assert speed_cost(23.0, 20.0, 0.5) == speed_cost(17.0, 20.0, 0.5)


def test_terminal_cost_offroad():
    assert terminal_cost_offroad(0.0, 100.0, 100.0) == 0.0
    assert terminal_cost_offroad(0.0, 0.0, 100.0) == 1.0
    assert terminal_cost_offroad(0.0, 40.0, 100.0) == pytest.approx(0.6)
    assert terminal_cost_offroad(100.0, 120.0, 100.0) == 0.0


def test_cost_to_go_polynomial():
    assert eval_cost_to_go(3.0, -2.0, (0.0,) * len(MONOMIALS)) == 0.0
    assert eval_cost_to_go(3.0, -2.0, (5.0,) + (0.0,) * (len(MONOMIALS) - 1)) == 5.0
    rng = np.random.default_rng(4)
    h = 1e-6
    for _ in range(20):
        w = rng.normal(size=len(MONOMIALS))
        x, y = rng.uniform(-2, 2, 2)
        g = eval_cost_to_go_gradient(x, y, w)
        fx = (eval_cost_to_go(x + h, y, w) - eval_cost_to_go(x - h, y, w)) / (2 * h)
        fy = (eval_cost_to_go(x, y + h, w) - eval_cost_to_go(x, y - h, w)) / (2 * h)
        np.testing.assert_allclose(g, [fx, fy], rtol=1e-6, atol=1e-8)


def test_cost_to_go_labels_ignore_lateral_position():
    road = generate_road(5, n_stations=60)
    pts, labels, s_f = cost_to_go_samples(road, 10.0, 60.0)
    per_station = labels.reshape(-1, 15)
    assert np.all(per_station == per_station[:, :1])
    assert per_station[0, 0] == pytest.approx(60.0)
    assert per_station[-1, 0] == pytest.approx(0.0)


def test_cost_to_go_fit_endpoints():
    road = oval_track()
    fit = fit_cost_to_go(road, 20.0, 10.0, 6.75)
    tol = 3 * fit.fit_rms + 1e-6
    s0_pt, sf_pt = road.point_at(20.0), road.point_at(20.0 + 67.5)
    assert fit(*s0_pt) == pytest.approx(67.5, abs=tol)
    assert fit(*sf_pt) == pytest.approx(0.0, abs=tol)
    # the raw-frame coefficients describe the same polynomial
    assert eval_cost_to_go(*sf_pt, fit.global_coefficients()) == pytest.approx(fit(*sf_pt), abs=1e-6 * 67.5)
    g = fit.gradient(*s0_pt)
    h = 1e-5
    fd = [(fit(s0_pt[0] + h, s0_pt[1]) - fit(s0_pt[0] - h, s0_pt[1])) / (2 * h), (fit(s0_pt[0], s0_pt[1] + h) - fit(s0_pt[0], s0_pt[1] - h)) / (2 * h)]
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_cost_to_go_needs_road_ahead():
    road = generate_road(5, n_stations=20)
    with pytest.raises(PlanningError):
        fit_cost_to_go(road, 50.0, 30.0, 6.75)


def test_breakdown_decomposes():
    env = finalize_envelope([EnvelopeBlock(20.0 * k, 0.0, 0.0, 15.0, 4.0) for k in range(4)], -15.0)
    weights = CostWeights(specific="collision_avoidance", u_des=15.0)
    n = 6
    X = np.array([state(x=2.0 * k, ux=20.0 - k, ax=-1.0).to_array() for k in range(n + 1)])
    U = np.full((n, 2), 0.1)
    b = trajectory_breakdown(X, U, [0.1] * n, env, weights)
    assert b.total == pytest.approx(b.state + b.control + b.envelope + b.specific)
    expected_speed = sum(0.1 * (20.0 - k - 15.0) ** 2 for k in range(1, n + 1))
    assert b.specific == pytest.approx(expected_speed)
    assert b.to_dict()["total"] == b.total
