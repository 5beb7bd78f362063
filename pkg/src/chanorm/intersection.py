"""Four-way intersection on a square grid.

Layout (``L`` odd, ``c = L // 2``): the northbound lane runs up column
``c + 1``, southbound down column ``c - 1``, eastbound along row ``c - 1``
and westbound along row ``c + 1``.  Column and row ``c`` are medians.  The
i-zone is the 3x3 block around the centre minus the centre itself; its
four corners are where two lanes cross and are the only cells two
vehicles can claim in the same tick.  With ``L = 19`` every lane has 19
cells, the grid uses 72 cells and the i-zone 8.

Views are egocentric: the three cells of the row ahead (front-left,
front, front-right) with occupant headings rotated so that the observer
faces north.  A vehicle crossing from the observer's left therefore reads
as ``E`` in the left cell and one crossing from the right as ``W`` in the
right cell, whatever the observer's own direction.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum

from .norms import (
    ActionKind,
    CellContent,
    KnowledgeBase,
    LearningParams,
    NormStructure,
    View,
    generate_norm_structure,
    get_applicable_norm,
    greedy_action,
    select_action,
)
from .baselines import ActuatedController, actuated_step, central_recommendation, hybrid_static_reward
from .prosocial import ProsocialParams, ProsocialState, preferred_action, prosocial_decide

GO, STOP = ActionKind.GO, ActionKind.STOP
NORTH, SOUTH, EAST, WEST = CellContent.NORTH, CellContent.SOUTH, CellContent.EAST, CellContent.WEST
EMPTY = CellContent.EMPTY
DIRECTIONS = (NORTH, SOUTH, EAST, WEST)
NORTH_SOUTH = (NORTH, SOUTH)
EAST_WEST = (EAST, WEST)

_VEC = {EAST: (1, 0), WEST: (-1, 0), NORTH: (0, 1), SOUTH: (0, -1)}
_FROM_VEC = {v: k for k, v in _VEC.items()}
_RIGHT_OF = {NORTH: EAST, EAST: SOUTH, SOUTH: WEST, WEST: NORTH}
_LEFT_OF = {v: k for k, v in _RIGHT_OF.items()}
OPPOSITE = {NORTH: SOUTH, SOUTH: NORTH, EAST: WEST, WEST: EAST}


class Maneuver(str, Enum):
    STRAIGHT = "straight"
    LEFT = "left"
    RIGHT = "right"


class Controller(str, Enum):
    CHA = "cha"
    CHA_PROSOCIAL = "cha-prosocial"
    ACTUATED = "actuated"
    HYBRID_STATIC = "hybrid-static"


def egocentric(observer: CellContent, occupant: CellContent) -> CellContent:
    """Express ``occupant``'s heading in a frame where ``observer`` faces north."""
    fx, fy = _VEC[observer]
    rx, ry = _VEC[_RIGHT_OF[observer]]
    gx, gy = _VEC[occupant]
    return _FROM_VEC[(gx * rx + gy * ry, gx * fx + gy * fy)]


class GridGeometry:
    """Cell bookkeeping: lanes, routes, i-zone and per-cell view stencils."""

    def __init__(self, lane_length: int = 19):
        if lane_length < 3 or lane_length % 2 == 0:
            raise ValueError(f"lane length must be an odd integer >= 3, got {lane_length}")
        self.lane_length = L = lane_length
        self.centre = c = L // 2
        self.lanes = {
            NORTH: [(c + 1, y) for y in range(L)],
            SOUTH: [(c - 1, y) for y in reversed(range(L))],
            EAST: [(x, c - 1) for x in range(L)],
            WEST: [(x, c + 1) for x in reversed(range(L))],
        }
        block = {(x, y) for x in (c - 1, c, c + 1) for y in (c - 1, c, c + 1)}
        self.izone = frozenset(self.index(p) for p in block if p != (c, c))
        self.conflict_cells = frozenset(
            self.index((x, y)) for x in (c - 1, c + 1) for y in (c - 1, c + 1)
        )
        self.cells = frozenset(self.index(p) for lane in self.lanes.values() for p in lane)
        self.routes = {}
        for d in DIRECTIONS:
            for man in Maneuver:
                self.routes[d, man] = self._route(d, man)
        self.entry = {d: self.routes[d, Maneuver.STRAIGHT][0][0] for d in DIRECTIONS}
        # cell index along a lane of the last cell before the i-zone
        self.approach_index = c - 2
        self.detector = {d: self.routes[d, Maneuver.STRAIGHT][0][c - 2] for d in DIRECTIONS}
        self._stencils = {}
        for idx in self.cells:
            for h in DIRECTIONS:
                self._stencils[idx, h] = self._stencil(idx, h)

    def index(self, p) -> int:
        return p[1] * self.lane_length + p[0]

    def point(self, idx: int):
        return idx % self.lane_length, idx // self.lane_length

    def inside(self, p) -> bool:
        return 0 <= p[0] < self.lane_length and 0 <= p[1] < self.lane_length

    def _route(self, d, man):
        own = self.lanes[d]
        if man is Maneuver.STRAIGHT:
            cells = own
            headings = [d] * len(own)
        else:
            turn_to = _RIGHT_OF[d] if man is Maneuver.RIGHT else _LEFT_OF[d]
            other = self.lanes[turn_to]
            joint = next(p for p in own if p in other)
            k, j = own.index(joint), other.index(joint)
            cells = own[: k + 1] + other[j + 1:]
            headings = [d] * k + [turn_to] * (len(cells) - k)
        idx = tuple(self.index(p) for p in cells)
        first_in = next(i for i, cell in enumerate(idx) if cell in self.izone)
        return idx, tuple(headings), first_in

    def _stencil(self, idx, heading):
        x, y = self.point(idx)
        fx, fy = _VEC[heading]
        lx, ly = _VEC[_LEFT_OF[heading]]
        front = (x + fx, y + fy)
        out = []
        for p in ((front[0] + lx, front[1] + ly), front, (front[0] - lx, front[1] - ly)):
            out.append(self.index(p) if self.inside(p) else -1)
        return tuple(out)

    def stencil(self, idx: int, heading: CellContent):
        return self._stencils[idx, heading]


@dataclass
class PayoffParams:
    go_go: float = -6.0
    go_win: float = 5.0
    delay_exponent: float = 1.1
    cost_floor: float = -6.0

    def __post_init__(self):
        if self.delay_exponent <= 1:
            raise ValueError("delay exponent must exceed 1")


def unselfishness_cost(d: int, p: float, floor: float = -6.0) -> float:
    if p <= 1:
        raise ValueError("delay exponent must exceed 1")
    if d < 0:
        raise ValueError("delay must be nonnegative")
    return max(-(d ** p), floor)


def joint_payoff(a_i, a_j, u_i, u_j, payoffs: PayoffParams | None = None):
    go_go = payoffs.go_go if payoffs else -6.0
    win = payoffs.go_win if payoffs else 5.0
    if a_i == GO and a_j == GO:
        return go_go, go_go
    if a_i == GO:
        return win, u_j
    if a_j == GO:
        return u_i, win
    return u_i, u_j


@dataclass
class TrafficPattern:
    """Per-direction Bernoulli arrival probabilities."""

    rates: dict
    reversal_tick: int | None = None

    def __post_init__(self):
        self.rates = {CellContent(d): float(p) for d, p in self.rates.items()}
        for d in DIRECTIONS:
            p = self.rates.setdefault(d, 0.0)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"arrival probability for {d.name} must lie in [0, 1], got {p}")

    @classmethod
    def axes(cls, east_west: float, north_south: float, reversal_tick=None):
        return cls({NORTH: north_south, SOUTH: north_south, EAST: east_west, WEST: east_west},
                   reversal_tick)

    def reversed(self) -> "TrafficPattern":
        r = self.rates
        return TrafficPattern(
            {NORTH: r[EAST], SOUTH: r[WEST], EAST: r[NORTH], WEST: r[SOUTH]}, self.reversal_tick
        )


class Vehicle:
    """Agent state of one vehicle.

    ``delay`` is the number of ticks held before entering the i-zone and
    feeds the unselfishness cost; ``held`` counts every held tick, so the
    travel time is always ``len(route) + held``.  ``cost`` is the
    accumulated magnitude of unselfishness costs paid while held.
    """

    __slots__ = (
        "vid", "direction", "maneuver", "route", "headings", "first_in", "pos",
        "cell", "nxt", "heading", "entered",
        "delay", "held", "cost", "entry_tick", "kb", "kb_private", "kb_type",
    )

    def __init__(self, vid, direction, maneuver, route, entry_tick):
        self.vid = vid
        self.direction = direction
        self.maneuver = maneuver
        self.route, self.headings, self.first_in = route
        self.delay = 0
        self.held = 0
        self.cost = 0.0
        self.entry_tick = entry_tick
        self.kb = None
        self.kb_private = False
        self.kb_type = direction
        self.place(0)

    def place(self, pos: int) -> None:
        """Put the vehicle at route index ``pos`` and refresh the cached cell data."""
        self.pos = pos
        self.cell = self.route[pos]
        self.nxt = self.route[pos + 1] if pos + 1 < len(self.route) else -1
        self.heading = self.headings[pos]
        self.entered = pos >= self.first_in

    @property
    def next_cell(self):
        return self.nxt if self.nxt >= 0 else None

    def writable_kb(self) -> KnowledgeBase:
        if not self.kb_private:
            self.kb = self.kb.copy()
            self.kb_private = True
        return self.kb


@dataclass
class Decision:
    tick: int
    direction: CellContent
    norm_key: str
    action: ActionKind
    reward: float
    utility_follow: float
    utility_violate: float
    collisions: int = 0
    vid: int = -1


@dataclass
class Departure:
    vid: int
    direction: CellContent
    maneuver: Maneuver
    entry_tick: int
    exit_tick: int
    delay: int
    route_length: int

    @property
    def travel_time(self) -> int:
        return self.exit_tick - self.entry_tick


@dataclass
class TickEvents:
    tick: int
    collisions: int = 0
    conflicts: int = 0
    spawned: int = 0
    decisions: list = field(default_factory=list)
    departures: list = field(default_factory=list)


DEFAULT_TURNS = {Maneuver.STRAIGHT: 0.5, Maneuver.LEFT: 0.25, Maneuver.RIGHT: 0.25}


class World:
    """One simulated intersection with its vehicle population.

    ``controller`` picks how conflicting vehicles decide: Cha learners,
    Cha with prosocial concessions (active once :meth:`activate_prosocial`
    is called), the actuated signal baseline or the static-payoff hybrid
    learner.  All randomness comes from ``rng``.
    """

    def __init__(
        self,
        pattern: TrafficPattern,
        *,
        controller=Controller.CHA,
        learning: LearningParams | None = None,
        prosocial: ProsocialParams | None = None,
        payoffs: PayoffParams | None = None,
        lane_length: int = 19,
        turn_probabilities=None,
        minimum_green: int = 1,
        seed: int | None = None,
        rng: random.Random | None = None,
        check_invariants: bool = False,
        record_decisions: bool = False,
    ):

        self.geometry = GridGeometry(lane_length)
        self.pattern = pattern
        self.controller = Controller(controller)
        self.learning = learning or LearningParams()
        self.prosocial = prosocial or ProsocialParams()
        self.payoffs = payoffs or PayoffParams(delay_exponent=self.prosocial.delay_exponent)
        turns = dict(DEFAULT_TURNS if turn_probabilities is None else turn_probabilities)
        turns = {Maneuver(k): float(v) for k, v in turns.items()}
        total = sum(turns.values())
        if total <= 0 or any(v < 0 for v in turns.values()):
            raise ValueError("turn probabilities must be nonnegative and not all zero")
        self._turn_cdf = []
        acc = 0.0
        for man in Maneuver:
            acc += turns.get(man, 0.0) / total
            self._turn_cdf.append((acc, man))
        self.rng = rng if rng is not None else random.Random(seed)
        self.check_invariants = check_invariants
        self.record_decisions = record_decisions

        self.tick = 0
        self.next_vid = 0
        self.vehicles: list[Vehicle] = []
        n = lane_length * lane_length
        self.occupancy = [0] * n
        self.occupant = [None] * n
        self._blank = [None] * n
        if self.controller is Controller.HYBRID_STATIC:
            self.shared = {d: central_recommendation(d) for d in DIRECTIONS}
        else:
            self.shared = {d: KnowledgeBase(d) for d in DIRECTIONS}
        self.signal = ActuatedController(minimum_green=minimum_green)
        self.prosocial_active = False
        self.kb_version = 0
        self.concessions = 0
        self.entered_count = 0
        self.departed_count = 0
        self.total_collisions = 0
        self._cost_table = [min(d ** self.payoffs.delay_exponent, -self.payoffs.cost_floor)
                            for d in range(64)]

    # -- configuration -------------------------------------------------

    def set_traffic_pattern(self, pattern: TrafficPattern) -> "World":
        self.pattern = pattern
        return self

    def activate_prosocial(self) -> None:
        if self.controller is not Controller.CHA_PROSOCIAL:
            raise ValueError("prosocial reasoning needs the cha-prosocial controller")
        self.prosocial_active = True

    # -- perception ----------------------------------------------------

    def cost_of_delay(self, d: int) -> float:
        if d < len(self._cost_table):
            return self._cost_table[d]
        return min(d ** self.payoffs.delay_exponent, -self.payoffs.cost_floor)

    def perceive_view(self, vehicle: Vehicle) -> View:
        h = vehicle.heading
        out = []
        for idx in self.geometry.stencil(vehicle.cell, h):
            other = self.occupant[idx] if idx >= 0 else None
            out.append(EMPTY if other is None else egocentric(h, other.heading))
        return View(*out)

    def claims(self) -> dict:
        """Map each target cell to the vehicles that want to move into it."""
        out = {}
        for v in self.vehicles:
            nxt = v.next_cell
            if nxt is not None:
                out.setdefault(nxt, []).append(v)
        return out

    def conflict_pairs(self, claims=None):
        """Pairs of vehicles from different cells about to enter the same empty conflict cell.

        Each pair is ordered (entering, inside).  When several vehicles
        share a source cell after a collision, the lowest id speaks for
        them.
        """
        claims = self.claims() if claims is None else claims
        pairs = []
        for cell in sorted(self.geometry.conflict_cells):
            group = claims.get(cell)
            if not group or len(group) < 2 or self.occupancy[cell]:
                continue
            first = group[0]
            partner = next((v for v in group[1:] if v.cell != first.cell), None)
            if partner is not None:
                if first.entered:
                    first, partner = partner, first
                pairs.append((first, partner))
        return pairs

    def conflict_detect(self, vehicle: Vehicle):
        for a, b in self.conflict_pairs():
            if vehicle is a:
                return self.perceive_view(a), b
            if vehicle is b:
                return self.perceive_view(b), a
        return None

    # -- the tick ------------------------------------------------------

    def _spawn(self, events: TickEvents) -> None:
        rng = self.rng
        geo = self.geometry
        for d in DIRECTIONS:
            if rng.random() >= self.pattern.rates[d]:
                continue
            if self.occupancy[geo.entry[d]]:
                continue
            r = rng.random()
            man = next(m for edge, m in self._turn_cdf if r < edge or edge >= 1.0)
            self.add_vehicle(d, man)
            events.spawned += 1

    def add_vehicle(self, direction, maneuver=Maneuver.STRAIGHT, pos: int = 0) -> Vehicle:
        """Put a new vehicle on its route at index ``pos`` (0 is the entry cell)."""
        direction = CellContent(direction)
        v = Vehicle(self.next_vid, direction, Maneuver(maneuver),
                    self.geometry.routes[direction, Maneuver(maneuver)], self.tick)
        if pos:
            v.place(pos)
            v.kb_type = v.heading
        self.next_vid += 1
        v.kb = self.shared[v.kb_type]
        self.vehicles.append(v)
        self.occupancy[v.cell] += 1
        if self.occupant[v.cell] is None:
            self.occupant[v.cell] = v
        self.entered_count += 1
        return v

    def _norm_for(self, v: Vehicle, view: View) -> NormStructure:
        norm = get_applicable_norm(v.kb, view)
        if norm is None:
            norm = v.writable_kb().add(generate_norm_structure(view, GO))
        return norm

    def _decide_learning(self, pair, views):
        """Norm reasoning for a conflicting pair; returns actions, norms and the conceding index."""
        rng = self.rng
        E = self.learning.exploration
        norms = [self._norm_for(v, view) for v, view in zip(pair, views)]
        if self.controller is Controller.CHA_PROSOCIAL and self.prosocial_active:
            acts = [None, None]
            conceded = None
            for k in (0, 1):
                n = norms[k]
                if n.utility_follow == n.utility_violate:
                    acts[k] = select_action(n, E, rng)
                    continue
                i, j = pair[k], pair[1 - k]
                if n.prosocial is None:
                    n = pair[k].writable_kb().norms[tuple(n.antecedent)]
                    norms[k] = n
                    n.prosocial = ProsocialState()
                elif not pair[k].kb_private:
                    n = pair[k].writable_kb().norms[tuple(n.antecedent)]
                    norms[k] = n
                act, n.prosocial, gave_way = prosocial_decide(
                    n.prosocial, n, i.cost, j.cost, self.prosocial, True
                )
                acts[k] = act
                if gave_way and conceded is None:
                    conceded = k
            if conceded is not None:
                self.concessions += 1
                # the conceding agent signals it is yielding; the other proceeds
                acts[1 - conceded] = GO
                acts[conceded] = STOP
            return acts, norms, conceded
        return [select_action(n, E, rng) for n in norms], norms, None

    def _decide_actuated(self, pair):
        # the vehicle already inside the i-zone clears it; the entrant waits
        a, b = pair
        if a.entered and not b.entered:
            return [GO, STOP]
        if b.entered and not a.entered:
            return [STOP, GO]
        return [GO, STOP] if a.vid < b.vid else [STOP, GO]

    def step(self) -> TickEvents:
        events = TickEvents(self.tick)
        geo = self.geometry
        self._spawn(events)

        green = None
        if self.controller is Controller.ACTUATED:
            det = {d: self._waiting_at_detector(d) for d in DIRECTIONS}
            green = actuated_step(self.signal, det)

        vehicles = self.vehicles
        claims = {}
        for v in vehicles:
            if v.nxt >= 0:
                claims.setdefault(v.nxt, []).append(v)
        occupancy = self.occupancy
        pairs = self.conflict_pairs(claims)
        stay = set()
        resolved = []
        for pair in pairs:
            if self.controller is Controller.ACTUATED:
                acts = self._decide_actuated(pair)
                resolved.append((pair, acts, None))
            else:
                views = [self.perceive_view(v) for v in pair]
                acts, norms, _ = self._decide_learning(pair, views)
                resolved.append((pair, acts, norms))
            for v, a in zip(pair, acts):
                if a == STOP:
                    stay.add(v)
                    # co-occupants of a decider's cell heading the same way share its decision
                    if occupancy[v.cell] > 1:
                        stay.update(o for o in vehicles if o.cell == v.cell and o.nxt == v.nxt)

        conflict_cells = geo.conflict_cells
        for cell, group in claims.items():
            if len(group) > 1 and cell in conflict_cells and occupancy[cell]:
                if any(v.entered for v in group) and any(not v.entered for v in group):
                    # an occupied corner contested from both sides: the inside vehicle follows through
                    stay.update(v for v in group if not v.entered)
        if green is not None:
            for v in vehicles:
                if v.pos == v.first_in - 1 and v.kb_type not in green:
                    stay.add(v)

        blocked = self._resolve_blocking(claims, stay)

        events.conflicts = len(resolved)
        self._assign_payoffs(resolved, events)
        self._move(blocked, events)
        if self.check_invariants:
            self._check()
        self.tick += 1
        return events

    @staticmethod
    def _resolve_blocking(claims, stay):
        """Everything that cannot move this tick.

        Blocking spreads backwards from the vehicles that stay: whoever
        claims a cell holding a stopped vehicle stops too.  A closed loop
        of movers is never reached from a stop and rotates.
        """
        blocked = set(stay)
        frontier = list(stay)
        while frontier:
            b = frontier.pop()
            for c in claims.get(b.cell, ()):
                if c not in blocked:
                    blocked.add(c)
                    frontier.append(c)
        return blocked

    def _waiting_at_detector(self, d) -> bool:
        v = self.occupant[self.geometry.detector[d]]
        return v is not None and v.kb_type == d and v.pos == v.first_in - 1

    def _assign_payoffs(self, resolved, events):
        alpha = self.learning.alpha
        hybrid = self.controller is Controller.HYBRID_STATIC
        frozen = self.controller is Controller.CHA_PROSOCIAL and self.prosocial_active
        for pair, acts, norms in resolved:
            if acts[0] == GO and acts[1] == GO:
                events.collisions += 1
            if norms is None:
                continue
            us = [-self.cost_of_delay(v.delay) for v in pair]
            rewards = joint_payoff(acts[0], acts[1], us[0], us[1], self.payoffs)
            for k in (0, 1):
                v, n, a, r = pair[k], norms[k], acts[k], rewards[k]
                if hybrid:
                    r = hybrid_static_reward(a, r)
                if not v.kb_private:
                    n = v.writable_kb().norms[tuple(n.antecedent)]
                if not (frozen and n.prosocial is not None):
                    n.set_utility(a, (1.0 - alpha) * n.utility(a) + alpha * r)
                n.m += 1
                if self.record_decisions:
                    events.decisions.append(Decision(
                        self.tick, v.kb_type, n.antecedent.render(), a, r,
                        n.utility_follow, n.utility_violate, vid=v.vid,
                    ))
        self.total_collisions += events.collisions
        if self.record_decisions:
            for d in events.decisions:
                d.collisions = events.collisions

    def _move(self, blocked, events):
        occupancy = self.occupancy
        occupant = self.occupant
        cost_table = self._cost_table
        survivors = []
        for v in self.vehicles:
            if v in blocked:
                v.held += 1
                if not v.entered:
                    v.delay += 1
                d = v.delay
                v.cost += cost_table[d] if d < len(cost_table) else self.cost_of_delay(d)
                survivors.append(v)
                continue
            occupancy[v.cell] -= 1
            if v.nxt < 0:
                self._depart(v, events)
                continue
            old_type = v.heading
            v.place(v.pos + 1)
            if v.heading != old_type:
                self._switch_type(v, v.heading)
            survivors.append(v)
        for v in survivors:
            if v not in blocked:
                occupancy[v.cell] += 1
        # survivors keep id order, so the first writer is the lowest id
        occupant[:] = self._blank
        for v in survivors:
            if occupant[v.cell] is None:
                occupant[v.cell] = v
        self.vehicles = survivors

    def _hand_off(self, v: Vehicle) -> None:
        # hybrid agents always restart from the central recommendation, so nothing is passed on
        if self.controller in (Controller.ACTUATED, Controller.HYBRID_STATIC) or v.kb is None:
            return
        if v.kb_private:
            self.shared[v.kb_type] = v.kb
            self.kb_version += 1
        v.kb_private = False

    def _switch_type(self, v: Vehicle, new_type) -> None:
        self._hand_off(v)
        v.kb_type = new_type
        v.kb = self.shared[new_type]
        v.kb_private = False

    def _depart(self, v: Vehicle, events: TickEvents) -> None:
        self._hand_off(v)
        self.departed_count += 1
        events.departures.append(Departure(
            v.vid, v.direction, v.maneuver, v.entry_tick, self.tick + 1, v.delay, len(v.route),
        ))
        if self.check_invariants:
            dep = events.departures[-1]
            assert dep.travel_time == dep.route_length + v.held, "travel time accounting broken"

    def _check(self) -> None:
        counts = {}
        for v in self.vehicles:
            counts[v.cell] = counts.get(v.cell, 0) + 1
        for idx, n in enumerate(self.occupancy):
            assert n == counts.get(idx, 0), f"occupancy mismatch at cell {idx}"
        assert self.entered_count == self.departed_count + len(self.vehicles), "vehicle conservation broken"


def perceive_view(world: World, vehicle: Vehicle) -> View:
    return world.perceive_view(vehicle)


def conflict_detect(world: World, vehicle: Vehicle):
    return world.conflict_detect(vehicle)


def step(world: World) -> TickEvents:
    return world.step()


def set_traffic_pattern(world: World, pattern: TrafficPattern) -> World:
    return world.set_traffic_pattern(pattern)
