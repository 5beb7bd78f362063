"""Norm structures and the agent-side learning life cycle.

A norm structure pairs an antecedent over the agent's three-cell view with
the regulated action (always Go here) and two utilities: the utility of
performing the action and the utility of refraining from it.  Agents
generate concrete norm structures on first contact with a view, pick
actions epsilon-greedily, update utilities with an exponential moving
average and hand their knowledge base on to newcomers of the same type.
"""

from __future__ import annotations

import copy
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, NamedTuple


class CellContent(IntEnum):
    EAST = 0
    WEST = 1
    SOUTH = 2
    NORTH = 3
    EMPTY = 4
    WILDCARD = 5

    @property
    def symbol(self) -> str:
        return _SYMBOLS[self]

    @classmethod
    def from_symbol(cls, s: str) -> "CellContent":
        try:
            return cls(_SYMBOLS.index(s))
        except ValueError:
            raise ValueError(f"unknown cell symbol {s!r}") from None


_SYMBOLS = ("E", "W", "S", "N", "0", "*")
HEADINGS = (CellContent.EAST, CellContent.WEST, CellContent.SOUTH, CellContent.NORTH)
PERCEIVABLE = HEADINGS + (CellContent.EMPTY,)


class View(NamedTuple):
    """Perceived contents of the left, front and right cells."""

    left: CellContent
    front: CellContent
    right: CellContent


class Antecedent(NamedTuple):
    left: CellContent
    front: CellContent
    right: CellContent

    @property
    def wildcards(self) -> int:
        return sum(c == CellContent.WILDCARD for c in self)

    def render(self) -> str:
        return "L({})&F({})&R({})".format(*(CellContent(c).symbol for c in self))

    @classmethod
    def parse(cls, text: str) -> "Antecedent":
        parts = text.split("&")
        if len(parts) != 3 or [p[:2] for p in parts] != ["L(", "F(", "R("]:
            raise ValueError(f"malformed antecedent {text!r}")
        return cls(*(CellContent.from_symbol(p[2:-1]) for p in parts))


class ActionKind(IntEnum):
    GO = 0
    STOP = 1

    @property
    def other(self) -> "ActionKind":
        return ActionKind.STOP if self is ActionKind.GO else ActionKind.GO


class DeonticOperator(str, Enum):
    MAY = "may"
    OBL = "obl"
    PRH = "prh"


@dataclass
class LearningParams:
    alpha: float = 0.2
    exploration: float = 0.05
    convergence_epsilon: float = 1e-3
    convergence_window: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.exploration <= 0:
            raise ValueError(f"exploration constant must be positive, got {self.exploration}")
        if self.convergence_epsilon <= 0:
            raise ValueError("convergence_epsilon must be positive")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be a positive integer")


@dataclass(slots=True)
class NormStructure:
    """A candidate norm ``<antecedent, op(action)>`` with its two utilities.

    ``utility_follow`` is the utility of performing ``action`` and
    ``utility_violate`` the utility of not performing it.  ``m`` counts how
    often the situation has arisen and drives the exploration schedule.
    ``prosocial`` holds the guilt-adjusted utilities once prosocial
    reasoning has been switched on (see :mod:`chanorm.prosocial`).
    """

    antecedent: Antecedent
    action: ActionKind = ActionKind.GO
    utility_follow: float = 0.0
    utility_violate: float = 0.0
    m: int = 0
    prosocial: object = None

    def utility(self, taken: ActionKind) -> float:
        return self.utility_follow if taken == self.action else self.utility_violate

    def set_utility(self, taken: ActionKind, value: float) -> None:
        if taken == self.action:
            self.utility_follow = value
        else:
            self.utility_violate = value

    def copy(self) -> "NormStructure":
        return NormStructure(
            self.antecedent, self.action, self.utility_follow, self.utility_violate,
            self.m, copy.copy(self.prosocial),
        )


@dataclass
class KnowledgeBase:
    """Per-type norm set, at most one norm structure per antecedent."""

    agent_type: CellContent
    norms: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.norms)

    def __iter__(self):
        return iter(self.norms.values())

    def __contains__(self, antecedent) -> bool:
        return tuple(antecedent) in self.norms

    def add(self, norm: NormStructure) -> NormStructure:
        key = tuple(norm.antecedent)
        if key in self.norms:
            raise ValueError(f"knowledge base already holds a norm for {norm.antecedent.render()}")
        self.norms[key] = norm
        return norm

    def copy(self) -> "KnowledgeBase":
        return KnowledgeBase(self.agent_type, {k: n.copy() for k, n in self.norms.items()})


def match_antecedent(ant: Iterable[CellContent], v: Iterable[CellContent]) -> bool:
    for a, c in zip(ant, v):
        if a != CellContent.WILDCARD and a != c:
            return False
    return True


def get_applicable_norm(kb: KnowledgeBase, v: View) -> NormStructure | None:
    """Return the matching norm with the fewest wildcards, or None.

    Ties between equally specific wildcard patterns go to the
    lexicographically smallest antecedent so the choice is deterministic.
    """
    exact = kb.norms.get(tuple(v))
    if exact is not None:
        return exact
    best = None
    for key, norm in kb.norms.items():
        if match_antecedent(key, v):
            rank = (norm.antecedent.wildcards, key)
            if best is None or rank < best[0]:
                best = (rank, norm)
    return best[1] if best else None


def generate_norm_structure(v: View, a: ActionKind = ActionKind.GO) -> NormStructure:
    if CellContent.WILDCARD in v:
        raise ValueError("a perceived view cannot contain wildcards")
    return NormStructure(Antecedent(*v), ActionKind(a))


def epsilon(m: int, E: float) -> float:
    return math.exp(-E * m)


def greedy_action(n: NormStructure, rng) -> ActionKind:
    if n.utility_follow > n.utility_violate:
        return n.action
    if n.utility_violate > n.utility_follow:
        return n.action.other
    return ActionKind.GO if rng.random() < 0.5 else ActionKind.STOP


def select_action(n: NormStructure, E: float, rng) -> ActionKind:
    """Epsilon-greedy choice with epsilon = exp(-E m); random ties."""
    if rng.random() < math.exp(-E * n.m):
        return ActionKind.GO if rng.random() < 0.5 else ActionKind.STOP
    return greedy_action(n, rng)


def update_utility(u_prev: float, r: float, alpha: float) -> float:
    return (1.0 - alpha) * u_prev + alpha * r


def classify_deontic(n: NormStructure, converged: bool) -> DeonticOperator:
    if not converged or n.utility_follow == n.utility_violate:
        return DeonticOperator.MAY
    return DeonticOperator.OBL if n.utility_follow > n.utility_violate else DeonticOperator.PRH


def kb_handoff(departing: KnowledgeBase, shared: KnowledgeBase) -> KnowledgeBase:
    """Replace the shared per-type base with a copy of the departing agent's norms."""
    if departing.agent_type != shared.agent_type:
        raise ValueError(
            f"cannot hand {departing.agent_type.name} experience to a {shared.agent_type.name} base"
        )
    return departing.copy()


def _expand(ant: tuple) -> set:
    choices = [PERCEIVABLE if c == CellContent.WILDCARD else (c,) for c in ant]
    return set(itertools.product(*choices))


def generalize_for_report(entries, converged: bool = True) -> list[tuple[Antecedent, DeonticOperator]]:
    """Merge concrete antecedents with identical deontics into wildcard patterns.

    ``entries`` is a knowledge base or a mapping from concrete antecedents
    to operators.  A pattern is emitted only if every view it covers is in
    the input with the same operator, so patterns never swallow views of a
    different classification or views that were never seen.  Patterns are
    chosen greedily, most general first, and each concrete antecedent is
    reported exactly once.
    """
    if not converged:
        raise ValueError("norms are only reported after convergence")
    if isinstance(entries, KnowledgeBase):
        entries = {n.antecedent: classify_deontic(n, True) for n in entries}
    table = {tuple(k): v for k, v in dict(entries).items()}
    remaining = set(table)
    out = []
    for op in sorted(set(table.values()), key=lambda o: o.value):
        pool = {k for k in table if table[k] == op}
        candidates = set()
        for key in pool:
            for mask in itertools.product((False, True), repeat=3):
                candidates.add(tuple(CellContent.WILDCARD if w else c for c, w in zip(key, mask)))
        ranked = sorted(candidates, key=lambda a: (-sum(c == CellContent.WILDCARD for c in a), a))
        for pattern in ranked:
            covered = _expand(pattern)
            if not covered <= pool:
                continue
            fresh = covered & remaining
            if fresh != covered:
                continue
            out.append((Antecedent(*pattern), op))
            remaining -= covered
    return out


def render_norm_line(direction: CellContent, ant: Antecedent, op: DeonticOperator) -> str:
    return f"{CellContent(direction).symbol};{ant.render()};{op.value}(Go)"


def parse_norm_line(line: str) -> tuple[CellContent, Antecedent, DeonticOperator]:
    direction, ant, consequent = line.strip().split(";")
    if not consequent.endswith("(Go)"):
        raise ValueError(f"unsupported consequent {consequent!r}")
    return CellContent.from_symbol(direction), Antecedent.parse(ant), DeonticOperator(consequent[:-4])
