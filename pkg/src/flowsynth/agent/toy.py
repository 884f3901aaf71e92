"""A one-step, single-state bandit with the flowsheet action interface."""

from __future__ import annotations

import numpy as np

from ..env import N_KINDS, ActionKind, ActionMask, FeedSpec, HierarchicalAction, StepResult
from ..flowsheet import FlowsheetGraph, new_flowsheet


class BanditEnv:
    """Two legal level-2 actions on a fresh flowsheet; one pays +1, the other -1."""

    def __init__(self, good: ActionKind = ActionKind.DECLARE_PRODUCT, bad: ActionKind = ActionKind.ADD_PFR):
        self.good, self.bad = good, bad
        self.flow_scale = 10.0
        self._state = new_flowsheet(FeedSpec().stream())

    def reset(self) -> FlowsheetGraph:
        return self._state

    def mask(self, g: FlowsheetGraph) -> ActionMask:
        l2 = np.zeros((1, N_KINDS), dtype=bool)
        l2[0, [self.good, self.bad]] = True
        return ActionMask(np.ones(1, dtype=bool), l2)

    def step(self, a: HierarchicalAction) -> StepResult:
        if a.level2 not in (self.good, self.bad):
            raise ValueError(f"{a.level2!r} is masked in the bandit")
        reward = 1.0 if a.level2 == self.good else -1.0
        return StepResult(self._state, reward, True, {"status": "bandit"})
