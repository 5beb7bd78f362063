"""Reference controllers to compare emergent norms against.

The actuated controller is a two-phase signal (north-south, east-west)
with a minimum green that is extended for as long as a vehicle waits at
a green approach.  The hybrid-static learner runs the same norm learning
as Cha agents but is denied the unselfishness cost (Stop always pays 0),
and every newcomer starts from the central recommendation (a neutral
Go norm for each conflict situation) instead of inheriting experience.
"""

from __future__ import annotations

from dataclasses import dataclass

from .norms import (
    ActionKind,
    Antecedent,
    CellContent,
    KnowledgeBase,
    NormStructure,
    select_action,
)

NS_PHASE = (CellContent.NORTH, CellContent.SOUTH)
EW_PHASE = (CellContent.EAST, CellContent.WEST)


@dataclass
class ActuatedController:
    phases: tuple = (NS_PHASE, EW_PHASE)
    minimum_green: int = 1
    current_phase: int = 0
    green_elapsed: int = 0

    def __post_init__(self):
        if self.minimum_green < 1:
            raise ValueError(f"minimum green must be at least one tick, got {self.minimum_green}")
        if len(self.phases) < 2:
            raise ValueError("an actuated signal needs at least two phases")

    @property
    def green(self) -> tuple:
        return self.phases[self.current_phase]


def actuated_step(ctrl: ActuatedController, detections) -> tuple:
    """Advance the signal by one tick and return the directions with green.

    ``detections`` maps direction to whether a vehicle waits at that
    approach.  Green is held until the minimum has elapsed and then
    extended while any green approach still detects a vehicle.
    """
    if ctrl.green_elapsed >= ctrl.minimum_green and not any(
        detections.get(d, False) for d in ctrl.green
    ):
        ctrl.current_phase = (ctrl.current_phase + 1) % len(ctrl.phases)
        ctrl.green_elapsed = 0
    ctrl.green_elapsed += 1
    return ctrl.green


_E, _W, _0 = CellContent.EAST, CellContent.WEST, CellContent.EMPTY
# crossing vehicle to the front-left (about to enter) and to the front-right (already inside)
CONFLICT_SITUATIONS = (Antecedent(_E, _0, _0), Antecedent(_0, _0, _W))


def central_recommendation(agent_type: CellContent) -> KnowledgeBase:
    """The knowledge base every hybrid agent of ``agent_type`` starts from: may(Go) with zero utilities."""
    kb = KnowledgeBase(CellContent(agent_type))
    for ant in CONFLICT_SITUATIONS:
        kb.add(NormStructure(ant, ActionKind.GO, 0.0, 0.0))
    return kb


def hybrid_static_reward(action: ActionKind, payoff: float) -> float:
    """Stop earns nothing: the hybrid learner never sees its delay."""
    return 0.0 if action == ActionKind.STOP else payoff


def hybrid_static_decide(n: NormStructure, E: float, rng) -> ActionKind:
    return select_action(n, E, rng)
