import itertools
import math

import pytest

from chanorm.intersection import (
    DIRECTIONS,
    EAST,
    EMPTY,
    NORTH,
    SOUTH,
    WEST,
    Controller,
    GridGeometry,
    Maneuver,
    TrafficPattern,
    World,
    conflict_detect,
    joint_payoff,
    perceive_view,
    set_traffic_pattern,
    step,
    unselfishness_cost,
)
from chanorm.norms import ActionKind, Antecedent, NormStructure, View
from chanorm.prosocial import ProsocialState

GO, STOP = ActionKind.GO, ActionKind.STOP
ENTERING = Antecedent(EAST, EMPTY, EMPTY)
INSIDE = Antecedent(EMPTY, EMPTY, WEST)


def empty_world(**kw):
    return World(TrafficPattern({}), check_invariants=True, record_decisions=True, **kw)


def crossing_pair(world):
    """Northbound vehicle one cell short of the i-zone, eastbound one already inside; both target one corner."""
    nb = world.add_vehicle(NORTH, Maneuver.STRAIGHT, 7)
    eb = world.add_vehicle(EAST, Maneuver.STRAIGHT, 9)
    assert nb.nxt == eb.nxt
    return nb, eb


def teach(world, direction, ant, follow, violate):
    world.shared[direction].add(NormStructure(ant, GO, follow, violate, m=10_000))


class TestPayoffs:
    def test_cost_examples(self):
        assert unselfishness_cost(0, 1.1) == 0.0
        assert unselfishness_cost(2, 1.1) == pytest.approx(-(2 ** 1.1), abs=1e-15)
        assert unselfishness_cost(2, 1.1) == pytest.approx(-2.1435469250725863)
        assert 6 ** 1.1 > 6 and unselfishness_cost(6, 1.1) == -6.0

    def test_cost_preconditions(self):
        with pytest.raises(ValueError):
            unselfishness_cost(-1, 1.1)
        with pytest.raises(ValueError):
            unselfishness_cost(2, 1.0)

    def test_table(self):
        assert joint_payoff(GO, GO, 0.0, 0.0) == (-6.0, -6.0)
        assert joint_payoff(GO, STOP, 0.0, 0.0) == (5.0, 0.0)
        r = joint_payoff(STOP, STOP, unselfishness_cost(2, 1.1), unselfishness_cost(3, 1.1))
        assert r == pytest.approx((-2.1435469250725863, -3.3483695221017124))


class TestGeometry:
    def test_izone(self):
        g = GridGeometry()
        assert len(g.izone) == 8 and len(g.conflict_cells) == 4
        assert g.conflict_cells <= g.izone

    def test_route_lengths(self):
        g = GridGeometry()
        lengths = {man: {len(g.routes[d, man][0]) for d in DIRECTIONS} for man in Maneuver}
        assert lengths == {Maneuver.RIGHT: {17}, Maneuver.STRAIGHT: {19}, Maneuver.LEFT: {21}}

    def test_even_lane_rejected(self):
        with pytest.raises(ValueError):
            GridGeometry(18)


class TestPerception:
    def test_empty_grid(self):
        w = empty_world()
        v = w.add_vehicle(NORTH)
        assert perceive_view(w, v) == View(EMPTY, EMPTY, EMPTY)

    def test_grid_edge(self):
        w = empty_world()
        v = w.add_vehicle(NORTH, Maneuver.STRAIGHT, 18)
        assert w.geometry.stencil(v.cell, v.heading) == (-1, -1, -1)
        assert perceive_view(w, v) == View(EMPTY, EMPTY, EMPTY)

    def test_crossing_vehicle_on_the_right(self):
        w = empty_world()
        nb = w.add_vehicle(NORTH, Maneuver.STRAIGHT, 9)
        w.add_vehicle(WEST, Maneuver.STRAIGHT, 7)
        assert perceive_view(w, nb).right == WEST


class TestConflicts:
    def test_crossing_pair(self):
        w = empty_world()
        nb, eb = crossing_pair(w)
        view, other = conflict_detect(w, nb)
        assert other is eb and view == View(*ENTERING)
        view, other = conflict_detect(w, eb)
        assert other is nb and view == View(*INSIDE)

    def test_single_vehicle(self):
        w = empty_world()
        v = w.add_vehicle(SOUTH, Maneuver.LEFT, 7)
        assert conflict_detect(w, v) is None

    def test_same_direction_never_conflicts(self):
        g = GridGeometry()
        for d in DIRECTIONS:
            placements = [(man, pos) for man in Maneuver
                          for pos in range(g.routes[d, man][2] - 1, len(g.routes[d, man][0]) - 1)
                          if g.routes[d, man][0][pos + 1] in g.izone]
            for (m1, p1), (m2, p2) in itertools.combinations(placements, 2):
                w = empty_world()
                a = w.add_vehicle(d, m1, p1)
                b = w.add_vehicle(d, m2, p2)
                if a.cell == b.cell:
                    continue
                assert conflict_detect(w, a) is None, (d, m1, p1, m2, p2)


class TestStep:
    def test_no_arrivals(self):
        w = empty_world()
        for _ in range(500):
            ev = step(w)
            assert ev.spawned == 0
        assert not w.vehicles

    def test_forced_collision(self):
        w = empty_world()
        teach(w, NORTH, ENTERING, 1.0, 0.0)
        teach(w, EAST, INSIDE, 1.0, 0.0)
        nb, eb = crossing_pair(w)
        ev = step(w)
        assert ev.collisions == 1
        assert [(d.action, d.reward) for d in ev.decisions] == [(GO, -6.0), (GO, -6.0)]
        assert nb.cell == eb.cell

    def test_single_crossing_takes_nineteen_ticks(self):
        w = empty_world()
        w.add_vehicle(WEST)
        ticks = 0
        while w.vehicles:
            ev = step(w)
            ticks += 1
        assert ticks == 19 and ev.departures[0].travel_time == 19

    def test_delay_only_before_entry(self):
        w = empty_world()
        teach(w, NORTH, ENTERING, 0.0, 1.0)  # northbound yields
        teach(w, EAST, INSIDE, 1.0, 0.0)
        nb, eb = crossing_pair(w)
        ev = step(w)
        assert (nb.delay, nb.held) == (1, 1)
        assert ev.decisions[0].reward == 0.0 and ev.decisions[1].reward == 5.0

        w2 = empty_world()
        teach(w2, NORTH, ENTERING, 1.0, 0.0)
        teach(w2, EAST, INSIDE, 0.0, 1.0)  # the inside vehicle yields
        nb, eb = crossing_pair(w2)
        step(w2)
        assert (eb.delay, eb.held) == (0, 1)

    def test_travel_time_is_route_plus_holds(self):
        w = World(TrafficPattern.axes(0.3, 0.3), seed=3, check_invariants=True)
        deps = []
        for _ in range(3000):
            deps += step(w).departures
        assert deps
        assert all(d.travel_time >= d.route_length + d.delay for d in deps)
        straight_free = [d for d in deps if d.maneuver is Maneuver.STRAIGHT and d.delay == 0]
        assert any(d.travel_time == 19 for d in straight_free)

    def test_collisions_bounded_by_conflict_cells(self):
        w = World(TrafficPattern.axes(0.6, 0.6), seed=11, check_invariants=True)
        assert max(step(w).collisions for _ in range(3000)) <= 4

    def test_actuated_never_collides(self):
        w = World(TrafficPattern.axes(0.25, 0.325), controller="actuated", seed=4, check_invariants=True)
        total = sum(step(w).collisions for _ in range(5000))
        assert total == 0 and w.departed_count > 0

    def test_cost_is_nondecreasing(self):
        w = World(TrafficPattern.axes(0.3, 0.4), seed=9)
        last = {}
        for _ in range(3000):
            step(w)
            for v in w.vehicles:
                assert v.cost >= last.get(v.vid, 0.0)
                last[v.vid] = v.cost

    def test_concession_inside_the_world(self):
        w = empty_world(controller="cha-prosocial")
        teach(w, NORTH, ENTERING, -1.0, 0.0)
        teach(w, EAST, INSIDE, 5.0, -1.0)
        w.shared[EAST].norms[tuple(INSIDE)].prosocial = ProsocialState(True, -2.0, -1.0)
        w.activate_prosocial()
        nb, eb = crossing_pair(w)
        nb.cost = 20.0
        ev = step(w)
        assert w.concessions == 1
        assert {d.vid: d.action for d in ev.decisions} == {nb.vid: GO, eb.vid: STOP}

    def test_activation_needs_prosocial_controller(self):
        with pytest.raises(ValueError):
            empty_world().activate_prosocial()

    def test_determinism(self):
        def trace(seed):
            w = World(TrafficPattern.axes(0.25, 0.325), seed=seed, record_decisions=True)
            out = []
            for _ in range(2000):
                ev = step(w)
                out.append((ev.collisions, ev.spawned, [(d.vid, d.action, d.reward) for d in ev.decisions],
                            [(d.vid, d.exit_tick) for d in ev.departures]))
            return out

        assert trace(21) == trace(21)
        assert trace(21) != trace(22)


class TestTrafficPattern:
    def test_reversal_swaps_axes(self):
        p = TrafficPattern.axes(east_west=0.2, north_south=0.26)
        r = p.reversed()
        assert r.rates[NORTH] == r.rates[SOUTH] == 0.2
        assert r.rates[EAST] == r.rates[WEST] == 0.26

    def test_symmetric_is_fixed_point(self):
        p = TrafficPattern.axes(0.25, 0.25)
        assert p.reversed().rates == p.rates

    def test_involution(self):
        p = TrafficPattern({NORTH: 0.1, SOUTH: 0.2, EAST: 0.3, WEST: 0.4})
        assert p.reversed().reversed().rates == p.rates

    def test_set_pattern(self):
        w = empty_world()
        p = TrafficPattern.axes(0.1, 0.2)
        assert set_traffic_pattern(w, p).pattern is p

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            TrafficPattern({NORTH: 1.5})


def test_controller_names():
    assert {c.value for c in Controller} == {"cha", "cha-prosocial", "actuated", "hybrid-static"}
    assert math.isclose(World(TrafficPattern({})).cost_of_delay(2), 2 ** 1.1)
