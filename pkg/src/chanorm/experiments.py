"""Scenario runner: seeded trials, scenario schedules and per-trial statistics.

Five scenarios are supported:

``static-equal`` / ``static-unequal``
    Fixed arrival rates, equal on both axes or north-south at
    ``volume_ratio`` times the east-west rate.
``dynamic-reversal``
    Starts as static-unequal and swaps the axes at ``reversal_tick``.
``prosocial``
    Static-unequal.  The world runs with plain Cha learners until both
    ``activation_tick`` has passed and the utilities have converged; it is
    then cloned and the clone continues with prosocial reasoning switched
    on, so both arms share their history up to the activation tick.
``welfare-comparison``
    Static-unequal with three arms: Cha with prosocial reasoning
    (activated as above), the hybrid static-payoff learner and the
    actuated signal.  All arms of a trial share its seed.
"""

from __future__ import annotations

import copy
import dataclasses
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .intersection import (
    DIRECTIONS,
    EAST_WEST,
    NORTH_SOUTH,
    Controller,
    Maneuver,
    TrafficPattern,
    World,
)
from .metrics import ConvergenceTracker
from .norms import (
    ActionKind,
    CellContent,
    DeonticOperator,
    LearningParams,
    View,
    classify_deontic,
    generalize_for_report,
    get_applicable_norm,
    render_norm_line,
)
from .prosocial import ProsocialParams

SCENARIOS = ("static-equal", "static-unequal", "dynamic-reversal", "prosocial", "welfare-comparison")
DEFAULT_TICKS = {
    "static-equal": 30_000,
    "static-unequal": 30_000,
    "dynamic-reversal": 60_000,
    "prosocial": 60_000,
    "welfare-comparison": 60_000,
}
SCENARIO_ARMS = {
    "prosocial": ("cha", "cha-prosocial"),
    "welfare-comparison": ("cha-prosocial", "hybrid-static", "actuated"),
}

# The two situations every vehicle meets at a conflict cell, seen egocentrically:
# about to enter with the crossing vehicle to the front-left, or already inside with
# the entering vehicle to the front-right.
E, W, EMPTY = CellContent.EAST, CellContent.WEST, CellContent.EMPTY
SIDE_VIEWS = {"entering": View(E, EMPTY, EMPTY), "inside": View(EMPTY, EMPTY, W)}
NS_PRIORITY = "NS"
EW_PRIORITY = "EW"
MIXED = "mixed"


@dataclass
class ExperimentConfig:
    scenario: str = "static-unequal"
    trials: int = 1000
    max_ticks: int | None = None
    seed: int = 0
    learning: LearningParams = field(default_factory=LearningParams)
    prosocial: ProsocialParams = field(default_factory=ProsocialParams)
    base_rate: float = 0.25
    volume_ratio: float = 1.3
    rates: dict | None = None
    reversal_tick: int = 44_000
    activation_tick: int = 40_000
    controller: str = "cha"
    lane_length: int = 19
    turn_probabilities: dict = field(
        default_factory=lambda: {"straight": 0.5, "left": 0.25, "right": 0.25}
    )
    minimum_green: int = 1
    window: int = 1000
    workers: int = 1
    output_dir: str | None = None
    trace_decisions: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.max_ticks is None:
            self.max_ticks = DEFAULT_TICKS[self.scenario]
        if self.max_ticks < 1:
            raise ValueError("max_ticks must be positive")
        Controller(self.controller)
        if self.window < 1:
            raise ValueError("window must be positive")
        if not 0.0 <= self.base_rate <= 1.0 or self.volume_ratio < 0:
            raise ValueError("arrival rates must be probabilities")
        if self.base_rate * self.volume_ratio > 1.0:
            raise ValueError("the higher-volume axis rate exceeds 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.traffic()

    @property
    def arms(self) -> tuple:
        return SCENARIO_ARMS.get(self.scenario, (self.controller,))

    def traffic(self) -> TrafficPattern:
        if self.rates is not None:
            return TrafficPattern({CellContent.from_symbol(k) if isinstance(k, str) else k: v
                                   for k, v in self.rates.items()})
        high = self.base_rate if self.scenario == "static-equal" else self.base_rate * self.volume_ratio
        return TrafficPattern.axes(east_west=self.base_rate, north_south=high)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["arms"] = list(self.arms)
        return d

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        """Build a config from flat keys; learning and prosocial fields may be given inline."""
        data = dict(data)
        learning_keys = {f.name for f in dataclasses.fields(LearningParams)}
        prosocial_keys = {f.name for f in dataclasses.fields(ProsocialParams)}
        learning = dict(data.pop("learning", None) or {})
        prosocial = dict(data.pop("prosocial", None) or {})
        for key in list(data):
            if key in learning_keys:
                learning[key] = data.pop(key)
            elif key in prosocial_keys:
                prosocial[key] = data.pop(key)
        data.pop("arms", None)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(learning=LearningParams(**learning), prosocial=ProsocialParams(**prosocial), **data)


def trial_seed(master: int, index: int) -> int:
    """64-bit seed for trial ``index``; independent of how many trials run."""
    words = np.random.SeedSequence(entropy=int(master), spawn_key=(int(index),)).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


def side_operators(shared, converged: bool = True) -> dict:
    """Deontic operator each type applies in the entering and the inside situation."""
    out = {}
    for d in DIRECTIONS:
        for side, view in SIDE_VIEWS.items():
            n = get_applicable_norm(shared[d], view)
            out[d.symbol, side] = classify_deontic(n, converged) if n is not None else DeonticOperator.MAY
    return out


def outcome_label(ops: dict) -> str:
    """``NS`` if north-south is obliged and east-west prohibited to Go everywhere, ``EW`` for the reverse."""
    for label, winners in ((NS_PRIORITY, "NS"), (EW_PRIORITY, "EW")):
        if all((op is DeonticOperator.OBL) == (d in winners) and op is not DeonticOperator.MAY
               for (d, _), op in ops.items()):
            return label
    return MIXED


def flipped(label: str) -> str:
    return {NS_PRIORITY: EW_PRIORITY, EW_PRIORITY: NS_PRIORITY}.get(label, MIXED)


def norm_report(shared, converged: bool = True) -> list[str]:
    lines = []
    for d in DIRECTIONS:
        kb = shared[d]
        if not len(kb):
            continue
        if not converged:
            entries = [(n.antecedent, DeonticOperator.MAY) for n in kb]
        else:
            entries = generalize_for_report(kb)
        for ant, op in sorted(entries, key=lambda e: (e[1].value, e[0])):
            lines.append(render_norm_line(d, ant, op))
    return lines


UTILITY_COLUMNS = tuple((d, a) for d in DIRECTIONS for a in (ActionKind.GO, ActionKind.STOP))


def mean_side_utilities(shared) -> tuple:
    """Per type, the Go and Stop utilities averaged over the two conflict situations."""
    out = []
    for d in DIRECTIONS:
        go = stop = 0.0
        k = 0
        for view in SIDE_VIEWS.values():
            n = get_applicable_norm(shared[d], view)
            if n is not None:
                go += n.utility(ActionKind.GO)
                stop += n.utility(ActionKind.STOP)
                k += 1
        out += [go / k, stop / k] if k else [0.0, 0.0]
    return tuple(out)


@dataclass
class RunStats:
    """Everything recorded from one world over one trial."""

    controller: str
    collisions: list = field(default_factory=list)
    utilities: list = field(default_factory=list)
    departures: np.ndarray | None = None
    convergence_tick: int | None = None
    converged_at_end: bool = False
    outcome: str = MIXED
    operators: dict = field(default_factory=dict)
    norms: list = field(default_factory=list)
    activation_tick: int | None = None
    outcome_before_reversal: str | None = None
    converged_before_reversal: bool = False
    reconvergence_tick: int | None = None
    utility_before_reversal: np.ndarray | None = None
    utility_final: np.ndarray | None = None
    measure_from: int = 0
    decisions: list | None = None
    total_collisions: int = 0
    concessions: int = 0


def measured_departures(stats: RunStats) -> np.ndarray:
    """Departure rows of vehicles that entered at or after ``stats.measure_from``."""
    dep = stats.departures
    return dep[dep[:, 2] >= stats.measure_from]


def mean_travel_time(stats: RunStats) -> float:
    dep = measured_departures(stats)
    if not len(dep):
        return float("nan")
    return float(np.mean(dep[:, 3] - dep[:, 2]))


@dataclass
class TrialStats:
    index: int
    seed: int
    scenario: str
    arms: dict


class _Recorder:
    """Per-tick bookkeeping attached to one world."""

    def __init__(self, world: World, cfg: ExperimentConfig, controller: str):
        self.world = world
        self.cfg = cfg
        self.stats = RunStats(controller)
        self.window = cfg.window
        self.tracker = ConvergenceTracker(cfg.learning.convergence_epsilon, cfg.learning.convergence_window)
        self._version = -1
        self._util = mean_side_utilities(world.shared)
        self._util_sum = [0.0] * len(UTILITY_COLUMNS)
        self._coll = 0
        self._recent = []
        self._departures = []
        self._decisions = [] if cfg.trace_decisions else None

    def converged(self) -> bool:
        return self.tracker.is_converged(self.world.tick)

    def after_step(self, events) -> None:
        w = self.world
        t = w.tick
        if w.kb_version != self._version:
            self._version = w.kb_version
            self.tracker.observe(t, {
                (d, key): n.utility_follow for d, kb in w.shared.items() for key, n in kb.norms.items()
            })
            self._util = mean_side_utilities(w.shared)
        if self.stats.convergence_tick is None and self.tracker.is_converged(t):
            self.stats.convergence_tick = t
        self._coll += events.collisions
        u = self._util
        s = self._util_sum
        for k in range(len(s)):
            s[k] += u[k]
        self._recent.append(u)
        if len(self._recent) > 2 * self.window:
            del self._recent[: self.window]
        for dep in events.departures:
            self._departures.append((dep.vid, int(dep.direction), dep.entry_tick, dep.exit_tick, dep.delay))
        if self._decisions is not None:
            self._decisions.extend(events.decisions)
        if t % self.window == 0:
            self.stats.collisions.append(self._coll)
            self.stats.utilities.append([x / self.window for x in s])
            self._coll = 0
            self._util_sum = [0.0] * len(UTILITY_COLUMNS)

    def last_window_utilities(self) -> np.ndarray:
        return np.asarray(self._recent[-self.window:], dtype=float)

    def finish(self) -> RunStats:
        w = self.world
        st = self.stats
        t = w.tick
        if t % self.window:
            st.collisions.append(self._coll)
            st.utilities.append([x / (t % self.window) for x in self._util_sum])
        st.converged_at_end = self.tracker.is_converged(t)
        st.operators = {f"{d}:{side}": op.value for (d, side), op in side_operators(w.shared).items()}
        st.outcome = outcome_label(side_operators(w.shared))
        st.norms = norm_report(w.shared, st.converged_at_end)
        st.utility_final = self.last_window_utilities()
        st.departures = np.asarray(self._departures, dtype=np.int64).reshape(-1, 5)
        st.decisions = self._decisions
        st.total_collisions = w.total_collisions
        st.concessions = w.concessions
        return st


def build_world(cfg: ExperimentConfig, controller: str, seed: int, pattern=None) -> World:
    return World(
        pattern or cfg.traffic(),
        controller=controller,
        learning=cfg.learning,
        prosocial=cfg.prosocial,
        lane_length=cfg.lane_length,
        turn_probabilities={Maneuver(k): v for k, v in cfg.turn_probabilities.items()},
        minimum_green=cfg.minimum_green,
        rng=random.Random(seed),
        record_decisions=cfg.trace_decisions,
    )


def _advance(rec: _Recorder, until: int, stop_when=None) -> bool:
    w = rec.world
    while w.tick < until:
        rec.after_step(w.step())
        if stop_when is not None and stop_when(rec):
            return True
    return False


def _run_single(cfg, seed, controller) -> RunStats:
    world = build_world(cfg, controller, seed)
    rec = _Recorder(world, cfg, controller)
    if cfg.scenario != "dynamic-reversal":
        _advance(rec, cfg.max_ticks)
        return rec.finish()

    rev = min(cfg.reversal_tick, cfg.max_ticks)
    _advance(rec, rev)
    st = rec.stats
    st.converged_before_reversal = rec.converged()
    st.outcome_before_reversal = outcome_label(side_operators(world.shared))
    st.utility_before_reversal = rec.last_window_utilities()
    world.set_traffic_pattern(world.pattern.reversed())
    target = flipped(st.outcome_before_reversal)
    changed = [False]

    def reconverged(r):
        if r.tracker.last_violation > rev:
            changed[0] = True
        if not changed[0] or not r.converged() or r.world.tick % 10:
            return False
        if outcome_label(side_operators(r.world.shared)) == target:
            r.stats.reconvergence_tick = r.world.tick
            return True
        return False

    if _advance(rec, cfg.max_ticks, reconverged):
        _advance(rec, cfg.max_ticks)
    return rec.finish()


def _activated_pair(cfg, seed, keep_plain: bool):
    """Run plain Cha until activation, then fork a prosocial clone."""
    world = build_world(cfg, "cha-prosocial", seed)
    rec = _Recorder(world, cfg, "cha-prosocial")
    gate = min(cfg.activation_tick, cfg.max_ticks)
    _advance(rec, gate)
    if not rec.converged():
        _advance(rec, cfg.max_ticks, lambda r: r.converged())
    activated = world.tick < cfg.max_ticks or rec.converged()
    measure_from = world.tick if activated else gate
    rec.stats.measure_from = measure_from
    plain = None
    if keep_plain:
        plain = copy.deepcopy(rec, memo={id(world.geometry): world.geometry})
        plain.world.controller = Controller.CHA
        plain.stats.controller = "cha"
    if activated:
        world.activate_prosocial()
        rec.stats.activation_tick = world.tick
    _advance(rec, cfg.max_ticks)
    arms = {"cha-prosocial": rec.finish()}
    if plain is not None:
        _advance(plain, cfg.max_ticks)
        arms["cha"] = plain.finish()
    return arms, measure_from


def run_trial(config: ExperimentConfig, trial_index: int) -> TrialStats:
    seed = trial_seed(config.seed, trial_index)
    if config.scenario == "prosocial":
        arms, _ = _activated_pair(config, seed, keep_plain=True)
    elif config.scenario == "welfare-comparison":
        arms, measure_from = _activated_pair(config, seed, keep_plain=False)
        for controller in ("hybrid-static", "actuated"):
            world = build_world(config, controller, seed)
            rec = _Recorder(world, config, controller)
            rec.stats.measure_from = measure_from
            _advance(rec, config.max_ticks)
            arms[controller] = rec.finish()
    else:
        arms = {config.controller: _run_single(config, seed, config.controller)}
    return TrialStats(trial_index, seed, config.scenario, arms)


def _run_indexed(args):
    config, index = args
    return run_trial(config, index)


def iter_trials(config: ExperimentConfig, indices=None):
    """Yield trials (all by default) in index order, from worker processes when ``config.workers > 1``."""
    indices = list(range(config.trials)) if indices is None else list(indices)
    if config.workers == 1 or len(indices) == 1:
        for i in indices:
            yield run_trial(config, i)
        return
    workers = min(config.workers, len(indices), os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_run_indexed, [(config, i) for i in indices], chunksize=1)


def run_trials(config: ExperimentConfig, indices=None) -> list[TrialStats]:
    return list(iter_trials(config, indices))
