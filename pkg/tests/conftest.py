from pathlib import Path

import numpy as np
import pytest

from flowsynth.env import ActionKind, HierarchicalAction, action_mask, apply_action
from flowsynth.flowsheet import deserialize, new_flowsheet
from flowsynth.thermo import make_stream

DATA = Path(__file__).parent / "data"
REFERENCE_FS = DATA / "reference.fs"

FEED = make_stream(298.15, (5.0, 5.0, 0.0, 0.0))


@pytest.fixture
def reference_graph():
    return deserialize(REFERENCE_FS.read_text())


def random_actions(rng, n_units, allow_recycle=True, finish=True, feed=FEED):
    """Build a random legal flowsheet by sampling masked actions.

    Adds up to ``n_units`` unit actions, then (optionally) declares every
    remaining open stream a product.
    """
    g = new_flowsheet(feed)
    for _ in range(n_units):
        m = action_mask(g)
        i = int(rng.integers(len(g.open_streams)))
        kinds = [k for k in ActionKind if m.level2[i, k] and k is not ActionKind.DECLARE_PRODUCT]
        if not allow_recycle:
            kinds = [k for k in kinds if k is not ActionKind.ADD_RECYCLE]
        k = kinds[int(rng.integers(len(kinds)))]
        g = apply_action(g, HierarchicalAction(i, k, float(rng.random())))
    if finish:
        while g.open_streams:
            g = apply_action(g, HierarchicalAction(0, ActionKind.DECLARE_PRODUCT))
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def relabel_nodes(g, rng):
    """Same flowsheet with node ids shuffled; edge ids and wiring are preserved."""
    from flowsynth.flowsheet import FlowsheetGraph, StreamEdge, UnitNode

    ids = sorted(g.nodes)
    new = dict(zip(ids, (int(i) for i in rng.permutation(ids))))
    nodes = {new[k]: UnitNode(new[k], n.kind, n.design_value) for k, n in g.nodes.items()}
    edges = {k: StreamEdge(e.edge_id, new[e.from_node], None if e.to_node is None else new[e.to_node],
                           e.port, e.payload) for k, e in g.edges.items()}
    return FlowsheetGraph(nodes, edges, list(g.open_streams), set(g.recycle_edges))


# -- acceptance reporting -----------------------------------------------------

_ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the terminal summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _ACCEPTANCE.append((marker.args[0], rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else ""))
