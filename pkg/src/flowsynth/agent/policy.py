"""Hierarchical actor-critic over flowsheet graphs.

Level 1 scores every open stream, level 2 picks an action kind for the chosen
stream, level 3 draws the raw design value from a Beta head. The critic reads
the pooled flowsheet fingerprint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..env import N_KINDS, ActionKind, ActionMask, HierarchicalAction, action_mask
from ..flowsheet import EDGE_FEATURES, NODE_FEATURES, FlowsheetGraph, edge_features, node_features
from ..learncore import autograd as ag
from ..learncore.checkpoint import CheckpointError
from ..learncore.distributions import (
    beta_head,
    beta_logp_entropy,
    categorical_head,
    categorical_logp_entropy,
    segment_categorical_logp_entropy,
)
from ..learncore.layers import MLP, GraphEncoder, Module


@dataclass
class GraphBatch:
    node_x: np.ndarray
    edge_x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    node_graph: np.ndarray
    open_x: np.ndarray
    open_from: np.ndarray
    open_graph: np.ndarray
    open_offset: np.ndarray  # first flat open-stream index of each graph
    n_graphs: int


def featurize(graphs: list[FlowsheetGraph], flow_scale: float) -> GraphBatch:
    node_x, edge_x, src, dst, node_graph = [], [], [], [], []
    open_x, open_from, open_graph, open_offset = [], [], [], []
    base = 0
    n_open = 0
    for gi, g in enumerate(graphs):
        ids = sorted(g.nodes)
        index = {nid: base + k for k, nid in enumerate(ids)}
        for nid in ids:
            node_x.append(node_features(g, nid))
            node_graph.append(gi)
        for eid in sorted(g.edges):
            e = g.edges[eid]
            if e.to_node is not None:
                edge_x.append(edge_features(g, eid, flow_scale))
                src.append(index[e.from_node])
                dst.append(index[e.to_node])
        open_offset.append(n_open)
        for eid in g.open_streams:
            open_x.append(edge_features(g, eid, flow_scale))
            open_from.append(index[g.edges[eid].from_node])
            open_graph.append(gi)
            n_open += 1
        base += len(ids)
    as_i = lambda v: np.asarray(v, dtype=np.int64)
    return GraphBatch(
        np.asarray(node_x, dtype=np.float64).reshape(-1, NODE_FEATURES),
        np.asarray(edge_x, dtype=np.float64).reshape(-1, EDGE_FEATURES),
        as_i(src), as_i(dst), as_i(node_graph),
        np.asarray(open_x, dtype=np.float64).reshape(-1, EDGE_FEATURES),
        as_i(open_from), as_i(open_graph), as_i(open_offset), len(graphs),
    )


@dataclass(frozen=True)
class AgentSpec:
    hidden: int = 64
    layers: int = 2
    head_hidden: int = 64


class Agent(Module):
    """All learnable tensors: encoder, three actor heads and the critic."""

    def __init__(self, spec: AgentSpec = AgentSpec(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.spec = spec
        h = spec.hidden
        self.encoder = GraphEncoder(NODE_FEATURES, EDGE_FEATURES, h, spec.layers, rng)
        n_stream = 2 * h + EDGE_FEATURES
        self.level1 = MLP(n_stream, spec.head_hidden, 1, rng, out_gain=0.01)
        self.level2 = MLP(n_stream, spec.head_hidden, N_KINDS, rng, out_gain=0.01)
        self.level3 = MLP(n_stream + N_KINDS, spec.head_hidden, 2, rng, out_gain=0.01)
        self.critic = MLP(h, spec.head_hidden, 1, rng)

    # -- serialization -----------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def signature(self) -> str:
        shapes = {k: list(p.shape) for k, p in sorted(self.parameters().items())}
        return json.dumps({"arch": "flowsynth-hac", "hidden": self.spec.hidden,
                           "layers": self.spec.layers, "head_hidden": self.spec.head_hidden,
                           "tensors": shapes}, sort_keys=True)

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        for name, p in params.items():
            if name not in tensors:
                raise CheckpointError(f"checkpoint lacks tensor {name!r}")
            if tensors[name].shape != p.shape:
                raise CheckpointError(f"tensor {name!r} has shape {tensors[name].shape}, "
                                      f"architecture expects {p.shape}")
        extra = sorted(set(tensors) - set(params))
        if extra:
            raise CheckpointError(f"checkpoint has unknown tensor {extra[0]!r}")
        for name, p in params.items():
            p.data = np.array(tensors[name], dtype=np.float64)

    def clone(self) -> "Agent":
        other = Agent(self.spec)
        other.load_state_dict(self.state_dict())
        return other

    # -- forward pieces ----------------------------------------------------

    def encode(self, b: GraphBatch):
        h, fp = self.encoder(b.node_x, b.edge_x, b.src, b.dst, b.node_graph, b.n_graphs)
        streams = ag.concat([ag.take_rows(h, b.open_from), b.open_x,
                             ag.take_rows(fp, b.open_graph)], axis=1)
        return h, fp, streams

    def value(self, fp):
        return ag.column(self.critic(fp), 0)

    def level3_raw(self, stream_rows, kinds):
        onehot = np.zeros((len(kinds), N_KINDS))
        onehot[np.arange(len(kinds)), np.asarray(kinds, dtype=np.int64)] = 1.0
        return self.level3(ag.concat([stream_rows, onehot], axis=1))

    def evaluate(self, batch: GraphBatch, masks2: np.ndarray, l1, l2, l3):
        """Per-level log-probs, per-level entropies and values for stored actions.

        ``masks2`` is (B, N_KINDS) for the selected stream of each sample.
        """
        _, fp, streams = self.encode(batch)
        sel = batch.open_offset + np.asarray(l1, dtype=np.int64)
        logits1 = ag.column(self.level1(streams), 0)
        lp1, ent1 = segment_categorical_logp_entropy(logits1, batch.open_graph, batch.n_graphs, sel)
        s_sel = ag.take_rows(streams, sel)
        lp2, ent2 = categorical_logp_entropy(self.level2(s_sel), masks2, l2)
        lp3, ent3 = beta_logp_entropy(self.level3_raw(s_sel, l2), l3)
        return (lp1, lp2, lp3), (ent1, ent2, ent3), self.value(fp)


@dataclass
class ActResult:
    action: HierarchicalAction
    log_prob: float
    value: float
    level_log_probs: tuple[float, float, float]
    mask2: np.ndarray


def act(agent: Agent, g: FlowsheetGraph, rng: np.random.Generator | None = None,
        greedy: bool = False, flow_scale: float = 10.0, mask: ActionMask | None = None) -> ActResult:
    """Sample level 1, then level 2, then level 3, each conditioned on the previous choice."""
    if not g.open_streams:
        raise ValueError("act() needs a flowsheet with at least one open stream")
    mask = mask if mask is not None else action_mask(g)
    batch = featurize([g], flow_scale)
    with ag.no_grad():
        _, fp, streams = agent.encode(batch)
        logits1 = agent.level1(streams).data[:, 0]
        value = float(agent.value(fp).data[0])
    i1, lp1, _ = categorical_head(logits1, mask.level1, rng, greedy)
    with ag.no_grad():
        s_sel = ag.Tensor(streams.data[i1:i1 + 1])
        logits2 = agent.level2(s_sel).data[0]
    m2 = mask.level2[i1]
    i2, lp2, _ = categorical_head(logits2, m2, rng, greedy)
    kind = ActionKind(i2)
    lp3 = 0.0
    x3 = 0.5
    if kind is not ActionKind.DECLARE_PRODUCT:
        with ag.no_grad():
            raw = agent.level3_raw(s_sel, [i2]).data[0]
        x3, lp3, _ = beta_head(raw, rng, greedy)
    action = HierarchicalAction(i1, kind, x3)
    return ActResult(action, lp1 + lp2 + lp3, value, (lp1, lp2, lp3), m2.copy())


def joint_log_prob(agent: Agent, g: FlowsheetGraph, action: HierarchicalAction,
                   flow_scale: float = 10.0) -> float:
    """Re-evaluate the joint log-probability of ``action`` in state ``g``."""
    mask = action_mask(g)
    batch = featurize([g], flow_scale)
    with ag.no_grad():
        (lp1, lp2, lp3), _, _ = agent.evaluate(batch, mask.level2[[action.level1]], [action.level1],
                                               [int(action.level2)], [action.level3])
    total = float(lp1.data[0]) + float(lp2.data[0])
    if action.uses_level3:
        total += float(lp3.data[0])
    return total
