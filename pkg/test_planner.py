import numpy as np
import pytest

from app.envelope import envelope_text, exact_membership
from app.errors import ConfigurationError, PlanningError
from app.planner import (
    BlockDesign,
    PlannerConfig,
    block_area_split,
    compare_planners,
    design_envelope,
    init_block_heuristic,
    is_feasible,
    naive_block_init,
    optimize_block,
    plan_envelope,
    reward,
    reward_from_areas,
)
from app.geometry import intersection_area
from app.road import generate_road


def straight_road(n_stations=25, half_width=4.0):
    # 5 m chords: 25 stations make a 120 m road
    return generate_road(0, n_stations=n_stations, width_range=(half_width, half_width), curvature=[0.0])


def test_straight_generator_closed_form():
    road = straight_road()
    assert road.length == pytest.approx(120.0)
    np.testing.assert_allclose(road.left[:, 1], 4.0)
    np.testing.assert_allclose(road.right[:, 1], -4.0)


def test_area_split_cases():
    road = straight_road()
    inside = BlockDesign(5.0, 2.0, (10.0, 0.0), 0.0)
    assert block_area_split(inside, road) == pytest.approx((40.0, 0.0))
    outside = BlockDesign(5.0, 2.0, (10.0, 20.0), 0.0)
    assert block_area_split(outside, road)[0] == pytest.approx(0.0)
    straddle = BlockDesign(5.0, 2.0, (10.0, 4.0), 0.0)
    a_in, a_out = block_area_split(straddle, road)
    assert a_in == pytest.approx(2 * 5.0 * 2.0)
    assert a_out == pytest.approx(2 * 5.0 * 2.0)


def test_reward_formula():
    assert reward_from_areas(5.0, 25.0, 5.0) == pytest.approx(200.0)
    assert reward_from_areas(5.0, 10.0, 10.0) == 0.0
    block = BlockDesign(5.0, 2.0, (10.0, 0.0), 0.0)
    assert reward(block, straight_road()) == pytest.approx(8 * 5.0**2 * 2.0)


def test_block_design_geometry():
    b = BlockDesign(5.0, 2.0, (0.0, 0.0), np.pi / 2)
    np.testing.assert_allclose(b.center, [0.0, 5.0], atol=1e-12)
    np.testing.assert_allclose(b.front, [0.0, 10.0], atol=1e-12)
    assert b.rect_area == 40.0
    with pytest.raises(PlanningError):
        BlockDesign(0.0, 1.0, (0.0, 0.0), 0.0)


def test_heuristic_init_on_straight_road():
    road = straight_road()
    b = init_block_heuristic(road, road.point_at(0.0))
    assert b.W == pytest.approx(3.2)
    assert b.theta == pytest.approx(0.0, abs=1e-12)
    assert 2 * b.L <= 0.8 * road.length + 1e-9
    assert block_area_split(b, road)[1] == pytest.approx(0.0, abs=1e-9)


def test_heuristic_length_shrinks_in_curves():
    straight = straight_road(n_stations=60)
    curved = generate_road(0, n_stations=60, width_range=(4.0, 4.0), curvature=[0.05])
    ls = init_block_heuristic(straight, straight.point_at(0.0)).L
    lc = init_block_heuristic(curved, curved.point_at(0.0)).L
    assert lc < ls


def test_heuristic_init_always_feasible():
    for seed in range(100):
        road = generate_road(seed)
        b = init_block_heuristic(road, road.point_at(0.0))
        assert block_area_split(b, road)[1] <= 1e-6 * b.rect_area


def test_naive_init_is_small_and_feasible():
    road = straight_road()
    b = naive_block_init(road, road.point_at(0.0))
    assert b.L == 1.0 and b.W == pytest.approx(1.2)
    assert is_feasible(b, road)


def test_init_rejects_bad_start_points():
    road = straight_road()
    with pytest.raises(PlanningError):
        init_block_heuristic(road, (10.0, 50.0))
    with pytest.raises(PlanningError):
        init_block_heuristic(road, (130.0, 0.0))


def test_optimizer_fills_straight_corridor():
    road = straight_road()
    init = init_block_heuristic(road, road.point_at(0.0))
    best = optimize_block(init, road)
    assert best.W == pytest.approx(4.0, rel=1e-2)
    assert best.lw >= init.lw
    assert is_feasible(best, road)
    again = optimize_block(best, road)
    assert again.lw == pytest.approx(best.lw, rel=1e-3)


@pytest.mark.slow
def test_optimizer_never_worse_than_init():
    for seed in range(100):
        road = generate_road(seed)
        init = init_block_heuristic(road, road.point_at(0.0))
        best = optimize_block(init, road)
        assert best.lw >= init.lw
        assert is_feasible(best, road)


def test_straight_road_needs_few_blocks():
    road = straight_road()
    plan = design_envelope(road)
    assert 1 <= len(plan.designs) <= 3
    assert all(d.W == pytest.approx(4.0, rel=2e-2) for d in plan.designs)
    assert plan.envelope.epsilon0 <= 0
    assert len(plan.reports) == len(plan.designs)


@pytest.mark.parametrize("seed", [1, 4, 9])
def test_planned_chain_overlaps_and_stays_on_road(seed):
    road = generate_road(seed, n_stations=60)
    plan = design_envelope(road)
    for a, b in zip(plan.designs, plan.designs[1:]):
        assert intersection_area(a.corners(), b.corners()) > 0
    for r in plan.reports:
        assert r.A_out <= 1e-6 * 4 * r.L * r.W
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = road.bounding_box()
    pts = rng.uniform([x0, y0], [x1, y1], (100_000, 2))
    members = exact_membership(pts[:, 0], pts[:, 1], plan.envelope) <= 0
    assert np.all(road.contains(pts[members]))


def test_planner_config_validation():
    assert PlannerConfig.from_mapping(None) == PlannerConfig()
    assert PlannerConfig.from_mapping({"max_half_length": 15}).max_half_length == 15
    with pytest.raises(ConfigurationError):
        PlannerConfig.from_mapping({"no_such_knob": 1})


def test_road_too_short():
    road = generate_road(0, n_stations=3, width_range=(4.0, 4.0), curvature=[0.0]).segment(0.0, 1.0)
    with pytest.raises(PlanningError):
        design_envelope(road)


def test_compare_planners_reports_each_road():
    roads = [generate_road(s, n_stations=30) for s in range(2)]
    out = compare_planners(roads)
    assert [c.road_index for c in out] == [0, 1]
    assert all(c.heuristic_blocks > 0 and c.naive_blocks > 0 for c in out)


def test_rerun_is_byte_identical():
    road = generate_road(11, n_stations=40)
    first = envelope_text(plan_envelope(road))
    again = envelope_text(plan_envelope(generate_road(11, n_stations=40)))
    assert first == again


def test_reports_carry_seed_area():
    plan = design_envelope(straight_road())
    for r in plan.reports:
        assert r.lw >= r.init_lw


@pytest.mark.slow
def test_hundred_roads_feasible_monotone_connected():
    for seed in range(100):
        road = generate_road(seed, n_stations=60)
        plan = design_envelope(road)
        for r in plan.reports:
            assert r.A_out <= 1e-6 * 4 * r.L * r.W, (seed, r.index)
            assert r.lw >= r.init_lw, (seed, r.index)
        for a, b in zip(plan.designs, plan.designs[1:]):
            assert intersection_area(a.corners(), b.corners()) > 0, seed
        assert envelope_text(plan.envelope) == envelope_text(plan_envelope(road)), seed


@pytest.mark.slow
def test_guided_planning_beats_naive_seeding():
    roads = [generate_road(seed, n_stations=60) for seed in range(100)]
    out = compare_planners(roads)
    assert sum(c.heuristic_faster for c in out) >= 0.8 * len(out)
