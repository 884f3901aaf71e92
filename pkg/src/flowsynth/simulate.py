"""Sequential-modular flowsheet evaluation with tear-stream convergence."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from . import units as U
from .flowsheet import FlowsheetError, FlowsheetGraph, UnitKind, audit
from .thermo import DEFAULT_THERMO, H2O, HOAC, MEOAC, MEOH, Stream, ThermoConfig
from .units import Fidelity, UnitConfig, UnitResult


class Status(str, Enum):
    CONVERGED = "Converged"
    TEAR_DIVERGED = "TearDiverged"
    UNIT_INFEASIBLE = "UnitInfeasible"
    MALFORMED = "Malformed"


@dataclass(frozen=True)
class TearSettings:
    tolerance: float = 1e-6
    max_iter: int = 200
    q_min: float = -5.0
    q_max: float = 0.0
    # once ``tolerance`` is met within max_iter, keep iterating (up to
    # polish_iter more passes) towards tolerance * polish_factor; recycle
    # loops amplify the tear residue into the overall balance by about R/F
    polish_factor: float = 1e-3
    polish_iter: int = 100


@dataclass
class SimulationOutcome:
    status: Status
    graph: FlowsheetGraph
    iterations: int = 0
    unit_results: dict[int, UnitResult] = field(default_factory=dict)
    residual: float = 0.0
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


class _Infeasible(Exception):
    def __init__(self, node_id):
        self.node_id = node_id


def _topological_order(g: FlowsheetGraph) -> list[int]:
    indeg = {nid: 0 for nid in g.nodes}
    succ = {nid: [] for nid in g.nodes}
    for e in g.edges.values():
        if e.to_node is None or e.edge_id in g.recycle_edges:
            continue
        indeg[e.to_node] += 1
        succ[e.from_node].append(e.to_node)
    ready = sorted(n for n, d in indeg.items() if d == 0)
    order = []
    while ready:
        u = ready.pop(0)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
        ready.sort()
    if len(order) != len(g.nodes):
        raise FlowsheetError("flowsheet has a cycle that is not a marked recycle")
    return order


class _Plan:
    """Precomputed wiring so repeated passes avoid graph scans."""

    def __init__(self, g: FlowsheetGraph):
        self.order = _topological_order(g)
        self.inlets = {nid: [e.edge_id for e in g.inlets(nid)] for nid in g.nodes}
        self.outlets = {nid: [e.edge_id for e in g.outlets(nid)] for nid in g.nodes}
        self.kinds = {nid: n.kind for nid, n in g.nodes.items()}
        self.design = {nid: n.design_value for nid, n in g.nodes.items()}
        self.feed_edge = g.feed_edge().edge_id
        self.feed = g.edges[self.feed_edge].payload
        self.tears = sorted(g.recycle_edges)


def _run_unit(kind, design, inlets, fidelity, thermo, units) -> UnitResult:
    if kind is UnitKind.PFR:
        return U.pfr(inlets[0], U.scale(design, U.PFR_LENGTH), fidelity, thermo, units)
    if kind is UnitKind.COLUMN:
        return U.column(inlets[0], U.scale(design, U.COLUMN_DTF), fidelity, thermo, units)
    if kind is UnitKind.HEATER:
        return U.heater(inlets[0], U.scale(design, U.HEATER_T), thermo)
    if kind is UnitKind.SPLITTER:
        return U.split(inlets[0], U.scale(design, U.SPLIT_RATIO))
    if kind is UnitKind.MIXER:
        return UnitResult((U.mix(*inlets),))
    if kind is UnitKind.PRODUCT:
        return UnitResult(())
    raise FlowsheetError(f"unexpected unit kind {kind}")


def _single_pass(plan: _Plan, tear_streams: dict[int, Stream], fidelity, thermo, units):
    streams: dict[int, Stream] = dict(tear_streams)
    results: dict[int, UnitResult] = {}
    for nid in plan.order:
        kind = plan.kinds[nid]
        if kind is UnitKind.FEED:
            streams[plan.feed_edge] = plan.feed
            continue
        ins = [streams[eid] for eid in plan.inlets[nid]]
        res = _run_unit(kind, plan.design[nid], ins, fidelity, thermo, units)
        if not res.feasible:
            raise _Infeasible(nid)
        for eid, s in zip(plan.outlets[nid], res.outlets):
            if not _finite_nonneg(s):
                raise _Infeasible(nid)
            streams[eid] = s
        results[nid] = res
    return streams, results


def _finite_nonneg(s: Stream) -> bool:
    if not (math.isfinite(s.temperature) and s.temperature > 0):
        return False
    return all(math.isfinite(f) and f >= 0 for f in s.flows)


def _pack(tears: list[int], streams: dict[int, Stream]) -> list[float]:
    x = []
    for eid in tears:
        s = streams[eid]
        x.extend(s.flows)
        x.append(s.temperature)
    return x


def _unpack(tears: list[int], x: list[float], pressure: float) -> dict[int, Stream]:
    out = {}
    for k, eid in enumerate(tears):
        base = 5 * k
        flows = tuple(max(v, 0.0) for v in x[base:base + 4])
        out[eid] = Stream(x[base + 4], flows, pressure)
    return out


def evaluate(g: FlowsheetGraph, fidelity: Fidelity | str = Fidelity.SHORTCUT,
             thermo: ThermoConfig = DEFAULT_THERMO, units: UnitConfig = U.DEFAULT_UNITS,
             tear: TearSettings = TearSettings()) -> SimulationOutcome:
    """Simulate ``g``; open streams are treated as terminal. Never raises."""
    fidelity = Fidelity(fidelity)
    try:
        audit(g)
        plan = _Plan(g)
        if plan.feed is None or not plan.feed.is_valid():
            raise FlowsheetError("feed edge has no valid stream payload")
    except (FlowsheetError, KeyError, IndexError) as exc:
        return SimulationOutcome(Status.MALFORMED, g, message=str(exc))

    try:
        if not plan.tears:
            streams, results = _single_pass(plan, {}, fidelity, thermo, units)
            return SimulationOutcome(Status.CONVERGED, g.with_payloads(streams), 1, results)
        return _solve_tears(g, plan, fidelity, thermo, units, tear)
    except _Infeasible as exc:
        return SimulationOutcome(Status.UNIT_INFEASIBLE, g, message=f"unit {exc.node_id} infeasible")


def _solve_tears(g, plan, fidelity, thermo, units, tear: TearSettings) -> SimulationOutcome:
    feed = plan.feed
    pressure = feed.pressure
    guess = {eid: Stream(feed.temperature, (0.0, 0.0, 0.0, 0.0), pressure) for eid in plan.tears}
    x = _pack(plan.tears, guess)
    x_prev = gx_prev = None
    resid = math.inf
    best = None
    first_hit = None
    for it in range(1, tear.max_iter + tear.polish_iter + 1):
        if it > tear.max_iter and best is None:
            break
        streams, results = _single_pass(plan, _unpack(plan.tears, x, pressure), fidelity, thermo, units)
        gx = _pack(plan.tears, streams)
        if not all(math.isfinite(v) for v in gx):
            if best is not None:
                break
            return SimulationOutcome(Status.TEAR_DIVERGED, g, it, message="non-finite tear iterate")
        resid = _residual(x, gx)
        if resid <= tear.tolerance:
            first_hit = it if first_hit is None else first_hit
            if best is None or resid < best[0]:
                best = (resid, streams, results, it)
            if resid <= tear.tolerance * tear.polish_factor or it - first_hit >= tear.polish_iter:
                break
        x_new = []
        for k, (xk, gk) in enumerate(zip(x, gx)):
            q = 0.0
            if x_prev is not None:
                dx = xk - x_prev[k]
                if dx != 0.0:
                    s = (gk - gx_prev[k]) / dx
                    if s != 1.0:
                        q = s / (s - 1.0)
                q = min(max(q, tear.q_min), tear.q_max)
            x_new.append(q * xk + (1.0 - q) * gk)
        x_prev, gx_prev, x = x, gx, x_new
    if best is not None:
        resid, streams, results, it = best
        # the recycle payload is the value the splitter produced on that pass
        return SimulationOutcome(Status.CONVERGED, g.with_payloads(streams), it, results, resid)
    return SimulationOutcome(Status.TEAR_DIVERGED, g, tear.max_iter, residual=resid,
                             message=f"tear residual {resid:.3g} after {tear.max_iter} iterations")


def _residual(x, gx) -> float:
    """Largest relative change over tear flows and temperatures."""
    worst = 0.0
    scale_flow = max(max(abs(v) for v in gx), 1e-300)
    for k, (a, b) in enumerate(zip(x, gx)):
        # flows whose magnitude is negligible against the largest tear flow are judged absolutely
        ref = max(abs(b), 1e-9 * scale_flow) if k % 5 != 4 else abs(b)
        worst = max(worst, abs(a - b) / ref)
    return worst


# --------------------------------------------------------------------------
# balance audit


def _invariants(flows) -> tuple[float, float, float]:
    return (flows[HOAC] + flows[MEOH] + flows[MEOAC] + flows[H2O],
            flows[HOAC] + flows[MEOAC],
            flows[MEOH] + flows[MEOAC])


def terminal_streams(g: FlowsheetGraph) -> list[int]:
    """Edges leaving the system: open edges and edges into product sinks."""
    out = []
    for eid, e in sorted(g.edges.items()):
        if e.to_node is None or g.nodes[e.to_node].kind is UnitKind.PRODUCT:
            out.append(eid)
    return out


def audit_balance(outcome: SimulationOutcome) -> float:
    """Max imbalance of the reaction invariants, relative to total feed flow."""
    if outcome.status is not Status.CONVERGED:
        raise ValueError(f"audit_balance requires a converged outcome, got {outcome.status.value}")
    g = outcome.graph
    feed = g.feed_edge().payload
    fin = _invariants(feed.flows)
    fout = [0.0, 0.0, 0.0]
    for eid in terminal_streams(g):
        inv = _invariants(g.edges[eid].payload.flows)
        for i in range(3):
            fout[i] += inv[i]
    ref = max(feed.total, 1e-300)
    return max(abs(a - b) / ref for a, b in zip(fin, fout))
