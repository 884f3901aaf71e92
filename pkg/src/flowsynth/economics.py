"""Annual flowsheet economics and the episode reward protocol.

Rewards are in MEUR/yr. A converged but incomplete flowsheet earns 0, any
failed simulation earns a fixed penalty, and a complete flowsheet earns

    revenue - feed cost - sum over units of (opex + recovery_factor * capex)

with negative totals divided by ``negative_reduction``.

All prices and cost correlations below are calibration defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .flowsheet import UnitKind
from .simulate import SimulationOutcome, Status
from .thermo import DEFAULT_THERMO, ThermoConfig

SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class CapitalCorrelation:
    """``cost = base_cost * (size / ref_size) ** exponent`` in EUR."""

    base_cost: float
    ref_size: float
    exponent: float = 0.6

    def __post_init__(self):
        if not (0.0 < self.exponent <= 1.0):
            raise ValueError(f"capital exponent must lie in (0, 1], got {self.exponent}")
        if self.base_cost < 0 or self.ref_size <= 0:
            raise ValueError("capital correlation needs base_cost >= 0 and ref_size > 0")

    def cost(self, size: float) -> float:
        if size <= 0.0:
            return 0.0
        return self.base_cost * (size / self.ref_size) ** self.exponent


def _default_capital():
    return {
        UnitKind.PFR.value: CapitalCorrelation(150_000.0, 1.0, 0.6),  # size: volume m3
        UnitKind.COLUMN.value: CapitalCorrelation(400_000.0, 10.0, 0.6),  # size: vapor flow mol/s
        UnitKind.HEATER.value: CapitalCorrelation(30_000.0, 100_000.0, 0.6),  # size: |duty| W
    }


@dataclass(frozen=True)
class CostModel:
    utility_price: float = 0.06  # EUR/kWh
    operating_hours: float = 8000.0  # h/yr
    latent_heat: float = 30_000.0  # J/mol, column vapor proxy to energy
    column_duty_factor: float = 2.0  # condenser + reboiler
    recovery_factor: float = 0.15
    infeasible_penalty: float = -10.0  # MEUR/yr
    negative_reduction: float = 10.0
    reduce_penalty: bool = False
    capital: dict = field(default_factory=_default_capital)

    def __post_init__(self):
        if self.utility_price < 0 or self.operating_hours <= 0:
            raise ValueError("utility price must be >= 0 and operating hours > 0")

    def __hash__(self):
        return hash((self.utility_price, self.operating_hours, self.latent_heat,
                     self.column_duty_factor, self.recovery_factor, self.infeasible_penalty,
                     self.negative_reduction, self.reduce_penalty,
                     tuple(sorted(self.capital.items()))))

    @property
    def seconds_per_year(self) -> float:
        return self.operating_hours * SECONDS_PER_HOUR


DEFAULT_COSTS = CostModel()


@dataclass
class Ledger:
    revenue: float = 0.0
    feed_cost: float = 0.0
    opex: dict[int, float] = field(default_factory=dict)
    capex: dict[int, float] = field(default_factory=dict)
    recovery_factor: float = 0.15

    @property
    def total(self) -> float:
        """Annual profit in EUR/yr."""
        units = sum(self.opex.values()) + self.recovery_factor * sum(self.capex.values())
        return self.revenue - self.feed_cost - units

    def rows(self) -> list[tuple[str, float]]:
        out = [("revenue", self.revenue), ("feed_cost", self.feed_cost)]
        for nid in sorted(self.opex):
            out.append((f"opex_unit_{nid}", self.opex[nid]))
        for nid in sorted(self.capex):
            out.append((f"capex_unit_{nid}", self.capex[nid]))
        out.append(("annualized_capex", self.recovery_factor * sum(self.capex.values())))
        out.append(("profit", self.total))
        return out


def stream_value(flows, thermo: ThermoConfig, cost: CostModel) -> float:
    """EUR/yr of a stream priced component-wise."""
    per_s = sum(f * c.molar_mass * c.price for f, c in zip(flows, thermo.components))
    return per_s * cost.seconds_per_year


def flowsheet_economics(outcome: SimulationOutcome, cost: CostModel = DEFAULT_COSTS,
                        thermo: ThermoConfig = DEFAULT_THERMO) -> Ledger:
    if outcome.status is not Status.CONVERGED:
        raise ValueError(f"economics need a converged outcome, got {outcome.status.value}")
    g = outcome.graph
    led = Ledger(recovery_factor=cost.recovery_factor)
    for e in g.edges.values():
        if e.to_node is not None and g.nodes[e.to_node].kind is UnitKind.PRODUCT:
            led.revenue += stream_value(e.payload.flows, thermo, cost)
    for n in g.nodes.values():
        if n.kind is UnitKind.FEED:
            led.feed_cost += stream_value(g.outlets(n.node_id)[0].payload.flows, thermo, cost)
    kwh_per_w = cost.operating_hours / 1000.0
    for nid, res in sorted(outcome.unit_results.items()):
        kind = g.nodes[nid].kind
        corr = cost.capital.get(kind.value)
        if kind is UnitKind.HEATER:
            led.opex[nid] = abs(res.duty) * kwh_per_w * cost.utility_price
        elif kind is UnitKind.COLUMN:
            watts = res.size_metric * cost.latent_heat * cost.column_duty_factor
            led.opex[nid] = watts * kwh_per_w * cost.utility_price
        elif kind is UnitKind.PFR:
            led.opex[nid] = 0.0
        if corr is not None:
            led.capex[nid] = corr.cost(res.size_metric)
    return led


def step_reward(outcome: SimulationOutcome, complete: bool, cost: CostModel = DEFAULT_COSTS,
                thermo: ThermoConfig = DEFAULT_THERMO) -> float:
    """Reward in MEUR/yr for the flowsheet after one action."""
    if outcome.status is not Status.CONVERGED:
        r = cost.infeasible_penalty
        return r / cost.negative_reduction if cost.reduce_penalty else r
    if not complete:
        return 0.0
    return shape_profit(flowsheet_economics(outcome, cost, thermo).total / 1e6, cost)


def shape_profit(profit_meur: float, cost: CostModel = DEFAULT_COSTS) -> float:
    if profit_meur < 0.0:
        return profit_meur / cost.negative_reduction
    return profit_meur
