"""Flowsheet-synthesis MDP: hierarchical actions, masking, transitions, rewards."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .economics import DEFAULT_COSTS, CostModel, step_reward
from .flowsheet import FlowsheetGraph, UnitKind, attach_recycle, attach_unit, new_flowsheet
from .simulate import SimulationOutcome, Status, TearSettings, evaluate
from .thermo import DEFAULT_THERMO, HOAC, MEOH, Stream, ThermoConfig, make_stream
from .units import DEFAULT_UNITS, Fidelity, UnitConfig


class ActionKind(IntEnum):
    ADD_PFR = 0
    ADD_COLUMN = 1
    ADD_HEATER = 2
    ADD_RECYCLE = 3
    DECLARE_PRODUCT = 4


N_KINDS = len(ActionKind)
_UNIT_FOR = {
    ActionKind.ADD_PFR: UnitKind.PFR,
    ActionKind.ADD_COLUMN: UnitKind.COLUMN,
    ActionKind.ADD_HEATER: UnitKind.HEATER,
    ActionKind.DECLARE_PRODUCT: UnitKind.PRODUCT,
}


class ConfigError(ValueError):
    pass


class IllegalAction(ValueError):
    pass


@dataclass(frozen=True)
class HierarchicalAction:
    level1: int  # index into open_streams
    level2: ActionKind
    level3: float = 0.5  # raw design value in [0, 1]

    @property
    def uses_level3(self) -> bool:
        return self.level2 is not ActionKind.DECLARE_PRODUCT


@dataclass(frozen=True)
class FeedSpec:
    flows: tuple[float, float, float, float] = (5.0, 5.0, 0.0, 0.0)  # mol/s
    temperature: float = 298.15
    pressure: float = 101325.0

    def stream(self) -> Stream:
        return make_stream(self.temperature, self.flows, self.pressure)


@dataclass(frozen=True)
class EnvConfig:
    feed: FeedSpec = field(default_factory=FeedSpec)
    fidelity: Fidelity = Fidelity.SHORTCUT
    max_steps: int = 12
    thermo: ThermoConfig = DEFAULT_THERMO
    units: UnitConfig = DEFAULT_UNITS
    cost: CostModel = DEFAULT_COSTS
    tear: TearSettings = TearSettings()
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        try:
            self.feed.stream()
        except ValueError as exc:
            raise ConfigError(f"invalid feed: {exc}") from None
        if self.feed.flows[HOAC] <= 0 and self.feed.flows[MEOH] <= 0:
            raise ConfigError("feed needs a positive flow of at least one reactant")
        object.__setattr__(self, "fidelity", Fidelity(self.fidelity))

    @property
    def flow_scale(self) -> float:
        return sum(self.feed.flows)


@dataclass
class StepResult:
    state: FlowsheetGraph
    reward: float
    terminal: bool
    info: dict


@dataclass
class ActionMask:
    level1: np.ndarray  # (n_open,) bool
    level2: np.ndarray  # (n_open, N_KINDS) bool


def reset(cfg: EnvConfig) -> FlowsheetGraph:
    g = new_flowsheet(cfg.feed.stream())
    return evaluate(g, cfg.fidelity, cfg.thermo, cfg.units, cfg.tear).graph


def action_mask(g: FlowsheetGraph) -> ActionMask:
    n = len(g.open_streams)
    l1 = np.ones(n, dtype=bool)
    l2 = np.ones((n, N_KINDS), dtype=bool)
    for i, eid in enumerate(g.open_streams):
        if g.is_untouched_feed(eid):
            l2[i, ActionKind.ADD_RECYCLE] = False
    return ActionMask(l1, l2)


def apply_action(g: FlowsheetGraph, a: HierarchicalAction) -> FlowsheetGraph:
    if not 0 <= a.level1 < len(g.open_streams):
        raise IllegalAction(f"level1 index {a.level1} out of range for {len(g.open_streams)} open streams")
    kind = ActionKind(a.level2)
    mask = action_mask(g)
    if not mask.level2[a.level1, kind]:
        raise IllegalAction(f"{kind.name} is masked on open stream {a.level1}")
    if kind is not ActionKind.DECLARE_PRODUCT and not 0.0 <= a.level3 <= 1.0:
        raise IllegalAction(f"level3 value {a.level3} outside [0, 1]")
    eid = g.open_streams[a.level1]
    if kind is ActionKind.ADD_RECYCLE:
        return attach_recycle(g, eid, a.level3)[0]
    unit = _UNIT_FOR[kind]
    design = None if unit is UnitKind.PRODUCT else a.level3
    return attach_unit(g, eid, unit, design)[0]


def step(g: FlowsheetGraph, a: HierarchicalAction, cfg: EnvConfig) -> StepResult:
    """Apply ``a``, simulate the new flowsheet and score it."""
    g_next = apply_action(g, a)
    outcome = evaluate(g_next, cfg.fidelity, cfg.thermo, cfg.units, cfg.tear)
    n_steps = g_next.action_count()
    info = {"status": outcome.status.value, "step": n_steps, "outcome": outcome}
    state = outcome.graph
    if outcome.status is not Status.CONVERGED:
        return StepResult(state, step_reward(outcome, False, cfg.cost, cfg.thermo), True, info)
    if g_next.complete:
        return StepResult(state, step_reward(outcome, True, cfg.cost, cfg.thermo), True, info)
    if n_steps >= cfg.max_steps:
        info["status"] = "BudgetExhausted"
        failed = SimulationOutcome(Status.UNIT_INFEASIBLE, state)
        return StepResult(state, step_reward(failed, False, cfg.cost, cfg.thermo), True, info)
    return StepResult(state, 0.0, False, info)


class FlowsheetEnv:
    """Stateful convenience wrapper; one instance per rollout worker."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.state: FlowsheetGraph | None = None

    @property
    def flow_scale(self) -> float:
        return self.cfg.flow_scale

    def reset(self) -> FlowsheetGraph:
        self.state = reset(self.cfg)
        return self.state

    def mask(self, g: FlowsheetGraph) -> ActionMask:
        return action_mask(g)

    def step(self, a: HierarchicalAction) -> StepResult:
        res = step(self.state, a, self.cfg)
        self.state = res.state
        return res
