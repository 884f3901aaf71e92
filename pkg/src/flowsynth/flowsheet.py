"""Directed flowsheet graph: unit nodes, stream edges and open-stream bookkeeping.

Operations are value-semantic: every mutation returns a new graph and leaves
its argument untouched.

Text format (UTF-8, one record per line, ``#`` starts a comment)::

    FLOWSHEET 1
    NODES
    <node_id> <kind> <design_value | ->
    EDGES
    <edge_id> <from_node> <port> <to_node | -> <T> <P> <F_HOAc> <F_MeOH> <F_MeOAc> <F_H2O>
    OPEN
    <edge_id> ...
    RECYCLE
    <edge_id> ...

An edge without a simulated payload writes ``-`` in all six payload fields.
``port`` orders the outlets of one node: column distillate is 0 and bottoms 1;
splitter recycle is 0 and purge 1. Floats use 17 significant digits, so a
round-trip is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .thermo import N_COMPONENTS, Stream


class UnitKind(str, Enum):
    FEED = "Feed"
    PFR = "PFR"
    COLUMN = "Column"
    HEATER = "Heater"
    SPLITTER = "Splitter"
    MIXER = "Mixer"
    PRODUCT = "ProductSink"


KIND_ORDER = list(UnitKind)
N_OUTLETS = {
    UnitKind.FEED: 1, UnitKind.PFR: 1, UnitKind.COLUMN: 2, UnitKind.HEATER: 1,
    UnitKind.SPLITTER: 2, UnitKind.MIXER: 1, UnitKind.PRODUCT: 0,
}
HAS_DESIGN = {UnitKind.PFR, UnitKind.COLUMN, UnitKind.HEATER, UnitKind.SPLITTER}
ATTACHABLE = {UnitKind.PFR, UnitKind.COLUMN, UnitKind.HEATER, UnitKind.PRODUCT}

NODE_FEATURES = 8
EDGE_FEATURES = 7
T_NORM = 400.0  # K


class FlowsheetError(ValueError):
    """Illegal graph operation or violated graph invariant."""


class ParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class UnitNode:
    node_id: int
    kind: UnitKind
    design_value: float | None = None


@dataclass
class StreamEdge:
    edge_id: int
    from_node: int
    to_node: int | None = None
    port: int = 0
    payload: Stream | None = None

    @property
    def is_open(self) -> bool:
        return self.to_node is None


@dataclass
class FlowsheetGraph:
    nodes: dict[int, UnitNode] = field(default_factory=dict)
    edges: dict[int, StreamEdge] = field(default_factory=dict)
    open_streams: list[int] = field(default_factory=list)
    recycle_edges: set[int] = field(default_factory=set)

    def copy(self) -> "FlowsheetGraph":
        return FlowsheetGraph(
            {k: UnitNode(n.node_id, n.kind, n.design_value) for k, n in self.nodes.items()},
            {k: StreamEdge(e.edge_id, e.from_node, e.to_node, e.port, e.payload)
             for k, e in self.edges.items()},
            list(self.open_streams),
            set(self.recycle_edges),
        )

    @property
    def complete(self) -> bool:
        return not self.open_streams

    def _next_node_id(self) -> int:
        return max(self.nodes, default=-1) + 1

    def _next_edge_id(self) -> int:
        return max(self.edges, default=-1) + 1

    def feed_node(self) -> UnitNode:
        for n in self.nodes.values():
            if n.kind is UnitKind.FEED:
                return n
        raise FlowsheetError("flowsheet has no Feed node")

    def feed_edge(self) -> StreamEdge:
        return self.outlets(self.feed_node().node_id)[0]

    def mixer(self) -> UnitNode | None:
        for n in self.nodes.values():
            if n.kind is UnitKind.MIXER:
                return n
        return None

    def outlets(self, node_id: int) -> list[StreamEdge]:
        return sorted((e for e in self.edges.values() if e.from_node == node_id),
                      key=lambda e: e.port)

    def inlets(self, node_id: int) -> list[StreamEdge]:
        return sorted((e for e in self.edges.values() if e.to_node == node_id),
                      key=lambda e: e.edge_id)

    def is_untouched_feed(self, edge_id: int) -> bool:
        e = self.edges[edge_id]
        return e.is_open and self.nodes[e.from_node].kind is UnitKind.FEED

    def action_count(self) -> int:
        """Number of agent actions that produced this graph."""
        counted = {UnitKind.PFR, UnitKind.COLUMN, UnitKind.HEATER, UnitKind.SPLITTER, UnitKind.PRODUCT}
        return sum(1 for n in self.nodes.values() if n.kind in counted)

    def with_payloads(self, payloads: dict[int, Stream]) -> "FlowsheetGraph":
        g = self.copy()
        for eid, s in payloads.items():
            g.edges[eid].payload = s
        return g

    def __eq__(self, other) -> bool:
        if not isinstance(other, FlowsheetGraph):
            return NotImplemented
        return (self.nodes == other.nodes and self.edges == other.edges
                and self.open_streams == other.open_streams
                and self.recycle_edges == other.recycle_edges)


def new_flowsheet(feed: Stream) -> FlowsheetGraph:
    feed.check()
    g = FlowsheetGraph()
    g.nodes[0] = UnitNode(0, UnitKind.FEED)
    g.edges[0] = StreamEdge(0, 0, None, 0, feed)
    g.open_streams = [0]
    return g


def _check_design(design_value):
    if design_value is None or not (math.isfinite(design_value) and 0.0 <= design_value <= 1.0):
        raise FlowsheetError(f"design value must lie in [0, 1], got {design_value!r}")
    return float(design_value)


def attach_unit(g: FlowsheetGraph, open_edge_id: int, kind: UnitKind,
                design_value: float | None = None) -> tuple[FlowsheetGraph, list[int]]:
    """Close ``open_edge_id`` into a new unit and return the new open edge ids."""
    kind = UnitKind(kind)
    if kind not in ATTACHABLE:
        raise FlowsheetError(f"cannot attach a {kind.value} unit")
    if open_edge_id not in g.open_streams:
        raise FlowsheetError(f"edge {open_edge_id} is not open")
    if kind in HAS_DESIGN:
        design_value = _check_design(design_value)
    else:
        design_value = None
    g = g.copy()
    nid = g._next_node_id()
    g.nodes[nid] = UnitNode(nid, kind, design_value)
    g.edges[open_edge_id].to_node = nid
    new_ids = []
    eid = g._next_edge_id()
    for port in range(N_OUTLETS[kind]):
        g.edges[eid] = StreamEdge(eid, nid, None, port)
        new_ids.append(eid)
        eid += 1
    pos = g.open_streams.index(open_edge_id)
    g.open_streams[pos:pos + 1] = new_ids
    return g, new_ids


def attach_recycle(g: FlowsheetGraph, open_edge_id: int,
                   split_fraction: float) -> tuple[FlowsheetGraph, int]:
    """Split ``open_edge_id`` and route the recycle branch into the feed mixer.

    ``split_fraction`` is the raw value in [0, 1]; the splitter scales it to
    the recycled ratio. Returns the new graph and the purge edge id.
    """
    split_fraction = _check_design(split_fraction)
    if open_edge_id not in g.open_streams:
        raise FlowsheetError(f"edge {open_edge_id} is not open")
    if g.is_untouched_feed(open_edge_id):
        raise FlowsheetError("the raw feed stream cannot be recycled")
    g = g.copy()
    feed_edge = g.feed_edge()
    mixer = g.mixer()
    if mixer is None:
        mid = g._next_node_id()
        mixer = UnitNode(mid, UnitKind.MIXER)
        g.nodes[mid] = mixer
        downstream = feed_edge.to_node
        feed_edge.to_node = mid
        eid = g._next_edge_id()
        g.edges[eid] = StreamEdge(eid, mid, downstream, 0)
    sid = g._next_node_id()
    g.nodes[sid] = UnitNode(sid, UnitKind.SPLITTER, split_fraction)
    g.edges[open_edge_id].to_node = sid
    rid = g._next_edge_id()
    g.edges[rid] = StreamEdge(rid, sid, mixer.node_id, 0)
    pid = rid + 1
    g.edges[pid] = StreamEdge(pid, sid, None, 1)
    g.recycle_edges.add(rid)
    pos = g.open_streams.index(open_edge_id)
    g.open_streams[pos] = pid
    return g, pid


def audit(g: FlowsheetGraph) -> None:
    """Raise :class:`FlowsheetError` listing every violated graph invariant."""
    problems = []
    feeds = [n for n in g.nodes.values() if n.kind is UnitKind.FEED]
    if len(feeds) != 1:
        problems.append(f"expected exactly one Feed node, found {len(feeds)}")
    for nid, n in g.nodes.items():
        if n.node_id != nid:
            problems.append(f"node key {nid} != node_id {n.node_id}")
        if n.kind in HAS_DESIGN and (n.design_value is None or not math.isfinite(n.design_value)):
            problems.append(f"node {nid} ({n.kind.value}) lacks a finite design value")
    open_set = set()
    for eid, e in g.edges.items():
        if e.edge_id != eid:
            problems.append(f"edge key {eid} != edge_id {e.edge_id}")
        if e.from_node not in g.nodes:
            problems.append(f"edge {eid} starts at unknown node {e.from_node}")
        if e.to_node is None:
            open_set.add(eid)
        elif e.to_node not in g.nodes:
            problems.append(f"edge {eid} ends at unknown node {e.to_node}")
    if set(g.open_streams) != open_set or len(g.open_streams) != len(open_set):
        problems.append(f"open list {g.open_streams} != open edges {sorted(open_set)}")
    for rid in g.recycle_edges:
        e = g.edges.get(rid)
        if e is None or e.is_open:
            problems.append(f"recycle edge {rid} missing or open")
        elif g.nodes[e.from_node].kind is not UnitKind.SPLITTER or g.nodes[e.to_node].kind is not UnitKind.MIXER:
            problems.append(f"recycle edge {rid} must run Splitter -> Mixer")
    if problems:
        raise FlowsheetError("; ".join(problems))
    for nid, n in g.nodes.items():
        n_in = len(g.inlets(nid))
        outs = g.outlets(nid)
        if n.kind is UnitKind.FEED and n_in:
            problems.append("Feed node has inbound edges")
        elif n.kind is UnitKind.MIXER and n_in < 1:
            problems.append(f"Mixer {nid} has no inlets")
        elif n.kind not in (UnitKind.FEED, UnitKind.MIXER) and n_in != 1:
            problems.append(f"node {nid} ({n.kind.value}) has {n_in} inlets")
        if [e.port for e in outs] != list(range(N_OUTLETS[n.kind])):
            problems.append(f"node {nid} ({n.kind.value}) has outlet ports {[e.port for e in outs]}")
    # reachability from the feed
    if feeds:
        seen = {feeds[0].node_id}
        stack = [feeds[0].node_id]
        while stack:
            u = stack.pop()
            for e in g.edges.values():
                if e.from_node == u and e.to_node is not None and e.to_node not in seen:
                    seen.add(e.to_node)
                    stack.append(e.to_node)
        orphans = sorted(set(g.nodes) - seen)
        if orphans:
            problems.append(f"nodes unreachable from Feed: {orphans}")
    if problems:
        raise FlowsheetError("; ".join(problems))


# --------------------------------------------------------------------------
# features


def node_features(g: FlowsheetGraph, node_id: int) -> np.ndarray:
    n = g.nodes[node_id]
    v = np.zeros(NODE_FEATURES)
    v[KIND_ORDER.index(n.kind)] = 1.0
    if n.design_value is not None:
        v[7] = n.design_value
    return v


def edge_features(g: FlowsheetGraph, edge_id: int, flow_scale: float = 1.0) -> np.ndarray:
    e = g.edges[edge_id]
    v = np.zeros(EDGE_FEATURES)
    if e.payload is not None:
        v[0] = e.payload.temperature / T_NORM
        flows = e.payload.flows
        for i in range(N_COMPONENTS):
            v[1 + i] = flows[i] / flow_scale
        v[5] = sum(flows) / flow_scale
    v[6] = 1.0 if e.is_open else 0.0
    return v


# --------------------------------------------------------------------------
# text serialization


def _fmt(x: float) -> str:
    return format(x, ".17g")


def serialize(g: FlowsheetGraph) -> str:
    lines = ["FLOWSHEET 1", "NODES"]
    for nid in sorted(g.nodes):
        n = g.nodes[nid]
        dv = "-" if n.design_value is None else _fmt(n.design_value)
        lines.append(f"{nid} {n.kind.value} {dv}")
    lines.append("EDGES")
    for eid in sorted(g.edges):
        e = g.edges[eid]
        to = "-" if e.to_node is None else str(e.to_node)
        if e.payload is None:
            pay = " ".join(["-"] * 6)
        else:
            p = e.payload
            pay = " ".join(_fmt(x) for x in (p.temperature, p.pressure, *p.flows))
        lines.append(f"{eid} {e.from_node} {e.port} {to} {pay}")
    lines.append("OPEN")
    lines.append(" ".join(str(i) for i in g.open_streams))
    lines.append("RECYCLE")
    lines.append(" ".join(str(i) for i in sorted(g.recycle_edges)))
    return "\n".join(lines) + "\n"


_SECTIONS = ("NODES", "EDGES", "OPEN", "RECYCLE")


def _int(tok: str, line_no: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(line_no, f"{what}: expected an integer, got {tok!r}") from None


def _float(tok: str, line_no: int, what: str) -> float:
    try:
        x = float(tok)
    except ValueError:
        raise ParseError(line_no, f"{what}: expected a number, got {tok!r}") from None
    if not math.isfinite(x):
        raise ParseError(line_no, f"{what}: non-finite value {tok!r}")
    return x


def deserialize(text: str) -> FlowsheetGraph:
    """Parse the text format; raises :class:`ParseError` with the offending line."""
    g = FlowsheetGraph()
    section = None
    seen_header = False
    seen_sections = []
    open_list = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if not seen_header:
            if toks != ["FLOWSHEET", "1"]:
                raise ParseError(line_no, f"expected header 'FLOWSHEET 1', got {line!r}")
            seen_header = True
            continue
        if len(toks) == 1 and toks[0] in _SECTIONS:
            section = toks[0]
            if section in seen_sections:
                raise ParseError(line_no, f"duplicate section {section}")
            seen_sections.append(section)
            if section == "OPEN":
                open_list = []
            continue
        if section is None:
            raise ParseError(line_no, f"record outside of any section: {line!r}")
        if section == "NODES":
            if len(toks) != 3:
                raise ParseError(line_no, "node record needs 3 fields: id kind design")
            nid = _int(toks[0], line_no, "node_id")
            try:
                kind = UnitKind(toks[1])
            except ValueError:
                raise ParseError(line_no, f"unknown unit kind {toks[1]!r}") from None
            dv = None if toks[2] == "-" else _float(toks[2], line_no, "design_value")
            if nid in g.nodes:
                raise ParseError(line_no, f"duplicate node id {nid}")
            g.nodes[nid] = UnitNode(nid, kind, dv)
        elif section == "EDGES":
            if len(toks) != 10:
                raise ParseError(line_no, f"edge record needs 10 fields, got {len(toks)}")
            eid = _int(toks[0], line_no, "edge_id")
            frm = _int(toks[1], line_no, "from_node")
            port = _int(toks[2], line_no, "port")
            to = None if toks[3] == "-" else _int(toks[3], line_no, "to_node")
            pay_toks = toks[4:]
            if all(t == "-" for t in pay_toks):
                payload = None
            elif any(t == "-" for t in pay_toks):
                raise ParseError(line_no, "payload must be fully present or fully '-'")
            else:
                names = ("T", "P", "F_HOAc", "F_MeOH", "F_MeOAc", "F_H2O")
                vals = [_float(t, line_no, nm) for t, nm in zip(pay_toks, names)]
                payload = Stream(vals[0], tuple(vals[2:]), vals[1])
                if not payload.is_valid():
                    raise ParseError(line_no, f"invalid stream payload {pay_toks}")
            if eid in g.edges:
                raise ParseError(line_no, f"duplicate edge id {eid}")
            g.edges[eid] = StreamEdge(eid, frm, to, port, payload)
        elif section == "OPEN":
            open_list.extend(_int(t, line_no, "open edge id") for t in toks)
        elif section == "RECYCLE":
            g.recycle_edges.update(_int(t, line_no, "recycle edge id") for t in toks)
    if not seen_header:
        raise ParseError(0, "empty flowsheet text")
    if not g.nodes:
        raise ParseError(0, "flowsheet has no nodes")
    g.open_streams = open_list if open_list is not None else []
    try:
        audit(g)
    except FlowsheetError as exc:
        raise ParseError(0, f"inconsistent flowsheet: {exc}") from None
    if g.feed_edge().payload is None:
        raise ParseError(0, "feed edge must carry a stream payload")
    return g
