"""Inequity-aversion guilt and the concession strategy.

Once the system has converged, an agent holding an advantageous norm
(one that tells it to Go) compares its accumulated cost with that of the
agent it conflicts with.  When the other agent is worse off by more than
the tolerance ``c`` the agent still follows its norm but books a guilt
disutility against the prosocial utility of doing so; once that utility
drops below the utility of the complement norm, the agent concedes.
"""

from __future__ import annotations

from dataclasses import dataclass

from .norms import ActionKind, NormStructure, select_action


@dataclass
class ProsocialParams:
    beta: float = 0.5
    threshold: float = 4.0
    delay_exponent: float = 1.1

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.threshold < 0:
            raise ValueError(f"inequity threshold must be nonnegative, got {self.threshold}")
        if self.delay_exponent <= 1:
            raise ValueError(f"delay exponent must exceed 1, got {self.delay_exponent}")


@dataclass
class ProsocialState:
    initialized: bool = False
    u_follow: float = 0.0
    u_violate: float = 0.0


def guilt_disutility(f_i: float, f_j: float, params: ProsocialParams) -> float:
    """Guilt felt by i towards j; costs are nonnegative magnitudes."""
    return -params.beta * max(f_j - f_i - params.threshold, 0.0)


def preferred_action(n: NormStructure) -> ActionKind:
    """The action ``n`` currently obliges: its regulated action unless refraining scores higher."""
    return n.action.other if n.utility_violate > n.utility_follow else n.action


def prosocial_decide(state, n, f_i, f_j, params, converged, *, E=0.05, rng=None):
    """One decision tick of the prosocial strategy.

    Returns ``(action, state, conceded)``.  Before convergence the choice
    falls back to ordinary epsilon-greedy selection and ``state`` is left
    untouched.  After convergence the prosocial utilities are seeded from
    the converged ordinary utilities of ``n`` and its complement.  Ties
    between the two prosocial utilities follow the norm.
    """
    if not converged:
        if rng is None:
            raise ValueError("an unconverged decision needs a random source")
        return select_action(n, E, rng), state, False

    follow = preferred_action(n)
    if follow == ActionKind.STOP:
        # a yielding norm already benefits j; there is nothing to concede
        return follow, state, False
    if state is None:
        state = ProsocialState()
    if not state.initialized:
        state.initialized = True
        state.u_follow = n.utility(follow)
        state.u_violate = n.utility(follow.other)

    gap = f_j - f_i
    if gap > params.threshold and state.u_follow > state.u_violate:
        state.u_follow += guilt_disutility(f_i, f_j, params)
        return follow, state, False
    if gap > params.threshold and state.u_follow < state.u_violate:
        return follow.other, state, True
    return follow, state, False
