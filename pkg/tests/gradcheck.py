"""Central finite-difference gradient checks shared by the unit and acceptance suites.

Each case builder takes an rng and returns ``(inputs, fn)`` where ``inputs``
is a list of float64 arrays and ``fn(*tensors)`` returns a Tensor. The output
is contracted with a fixed random weight so the whole Jacobian is exercised.
"""

from __future__ import annotations

import numpy as np

from flowsynth.learncore import autograd as ag
from flowsynth.learncore import distributions as D
from flowsynth.learncore.layers import MLP, Dense, GraphEncoder, MessagePassingLayer

H = 1e-5


def rel_error(a, n) -> float:
    a, n = np.ravel(a), np.ravel(n)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    diff = np.linalg.norm(a - n)
    if scale < 1e-8:
        return diff
    return diff / scale


def check(inputs, fn, rng, h=H) -> float:
    """Worst relative error over all inputs between backprop and central differences."""
    params = [ag.param(x.copy()) for x in inputs]
    out = fn(*params)
    w = rng.standard_normal(out.shape)
    ag.sum_all(out * w).backward()

    def f():
        with ag.no_grad():
            return float(np.sum(fn(*[ag.Tensor(p.data) for p in params]).data * w))

    worst = 0.0
    for p in params:
        num = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            num.reshape(-1)[i] = (fp - fm) / (2 * h)
        got = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, rel_error(got, num))
    return worst


def _away(rng, shape, points, gap=1e-3, lo=-2.0, hi=2.0):
    x = rng.uniform(lo, hi, shape)
    for c in points:
        near = np.abs(x - c) < gap
        x[near] += 2 * gap
    return x


def _mask(rng, shape):
    m = rng.random(shape) < 0.6
    m[np.arange(shape[0]), rng.integers(shape[1], size=shape[0])] = True
    return m


def _graph(rng, n_nodes=5, n_edges=7):
    src = rng.integers(n_nodes, size=n_edges)
    dst = rng.integers(n_nodes, size=n_edges)
    return src, dst


def _case_masked_softmax(rng):
    m = _mask(rng, (3, 5))
    return [rng.standard_normal((3, 5))], lambda z: ag.masked_log_softmax(z, m) * m.astype(float)


def _case_segment_softmax(rng):
    seg = np.array([0, 0, 1, 1, 1, 2])
    return [rng.standard_normal(6)], lambda z: ag.segment_log_softmax(z, seg, 3)


def _case_categorical(rng):
    m = _mask(rng, (4, 5))
    idx = [int(rng.choice(np.flatnonzero(r))) for r in m]

    def fn(z):
        lp, ent = D.categorical_logp_entropy(z, m, idx)
        return lp + ent * 0.7
    return [rng.standard_normal((4, 5))], fn


def _case_segment_categorical(rng):
    seg = np.array([0, 0, 0, 1, 2, 2])
    chosen = np.array([1, 3, 5])

    def fn(z):
        lp, ent = D.segment_categorical_logp_entropy(z, seg, 3, chosen)
        return lp + ent
    return [rng.standard_normal(6)], fn


def _case_beta(rng):
    x = rng.uniform(0.02, 0.98, 4)

    def fn(raw):
        lp, ent = D.beta_logp_entropy(raw, x)
        return lp + ent * 0.7
    return [rng.standard_normal((4, 2))], fn


def _case_dense(rng):
    layer = Dense(3, 4, rng)
    return [rng.standard_normal((5, 3)), layer.weight.data.copy(), layer.bias.data.copy()], \
        lambda x, w, b: ag.matmul(x, w) + b


def _module_case(module, call, inputs):
    """Make a module's parameters the checked inputs alongside the data inputs."""
    names = sorted(module.parameters())
    params = module.parameters()

    def fn(*ts):
        data, ws = ts[:len(inputs)], ts[len(inputs):]
        saved = {k: params[k] for k in names}
        _swap(module, dict(zip(names, ws)))
        try:
            return call(*data)
        finally:
            _swap(module, saved)
    return list(inputs) + [params[k].data.copy() for k in names], fn


def _swap(module, mapping):
    for dotted, t in mapping.items():
        obj = module
        parts = dotted.split(".")
        for p in parts[:-1]:
            obj = obj[int(p)] if p.isdigit() else getattr(obj, p)
        setattr(obj, parts[-1], t)


def _case_mlp(rng):
    mlp = MLP(3, 4, 2, rng, out_act=True)
    return _module_case(mlp, lambda x: mlp(x), [rng.standard_normal((5, 3))])


def _case_message_passing(rng):
    layer = MessagePassingLayer(4, 3, rng)
    src, dst = _graph(rng)
    return _module_case(layer, lambda h, e: layer(h, e, src, dst, 5),
                        [rng.standard_normal((5, 4)), rng.standard_normal((7, 3))])


def _case_encoder(rng):
    enc = GraphEncoder(3, 2, 4, 2, rng)
    src, dst = _graph(rng)
    node_graph = np.array([0, 0, 1, 1, 1])

    def call(nx, ex):
        h, fp = enc(nx, ex, src, dst, node_graph, 2)
        return ag.concat([fp, ag.take_rows(h, [0, 4])], axis=0)
    return _module_case(enc, call, [rng.standard_normal((5, 3)), rng.standard_normal((7, 2))])


def _binary(op, lo=-2.0, hi=2.0, shape_b=(3, 4)):
    def case(rng):
        return [rng.uniform(lo, hi, (3, 4)), rng.uniform(lo, hi, shape_b)], op
    return case


def _unary(op, lo=-2.0, hi=2.0):
    def case(rng):
        return [rng.uniform(lo, hi, (3, 4))], op
    return case


def _case_div(rng):
    b = rng.uniform(0.5, 2.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4))
    return [rng.standard_normal((3, 4)), b], ag.div


def _case_clip(rng):
    return [_away(rng, (3, 4), [-0.5, 0.7])], lambda x: ag.clip(x, -0.5, 0.7)


def _case_minimum(rng):
    a = rng.standard_normal((3, 4))
    b = a + _away(rng, (3, 4), [0.0])
    return [a, b], ag.minimum


def _case_take_rows(rng):
    idx = np.array([0, 2, 2, 1, 0])
    return [rng.standard_normal((3, 4))], lambda x: ag.take_rows(x, idx)


def _case_segment(reducer):
    def case(rng):
        seg = np.array([0, 1, 1, 3, 3, 3])
        return [rng.standard_normal((6, 2))], lambda x: reducer(x, seg, 4)
    return case


OPS = {
    "add": _binary(ag.add, shape_b=(1, 4)),
    "sub": _binary(ag.sub, shape_b=(3, 1)),
    "mul": _binary(ag.mul, shape_b=(4,)),
    "div": _case_div,
    "matmul": lambda rng: ([rng.standard_normal((3, 4)), rng.standard_normal((4, 2))], ag.matmul),
    "tanh": _unary(ag.tanh),
    "exp": _unary(ag.exp),
    "log": _unary(ag.log, 0.2, 3.0),
    "softplus": _unary(ag.softplus, -4.0, 4.0),
    "square": _unary(ag.square),
    "gammaln": _unary(ag.gammaln, 0.3, 6.0),
    "digamma": _unary(ag.digamma, 0.3, 6.0),
    "clip": _case_clip,
    "minimum": _case_minimum,
    "sum_all": _unary(ag.sum_all),
    "mean_all": _unary(ag.mean_all),
    "sum_rows": _unary(ag.sum_rows),
    "column": _unary(lambda x: ag.column(x, 2)),
    "concat": _binary(lambda a, b: ag.concat([a, b], axis=1), shape_b=(3, 2)),
    "concat_rows": _binary(lambda a, b: ag.concat([a, b], axis=0), shape_b=(2, 4)),
    "take_rows": _case_take_rows,
    "segment_sum": _case_segment(ag.segment_sum),
    "segment_mean": _case_segment(ag.segment_mean),
    "masked_log_softmax": _case_masked_softmax,
    "segment_log_softmax": _case_segment_softmax,
    "categorical_logp_entropy": _case_categorical,
    "segment_categorical_logp_entropy": _case_segment_categorical,
    "beta_logp_entropy": _case_beta,
    "dense": _case_dense,
    "mlp": _case_mlp,
    "message_passing": _case_message_passing,
    "graph_encoder": _case_encoder,
}


def op_error(name: str, rng) -> float:
    inputs, fn = OPS[name](rng)
    return check(inputs, fn, rng)


# --------------------------------------------------------------------------
# full agent composite: directional derivatives of the PPO loss


def composite_error(rng, agent, recs, adv, ret, cfg, flow_scale, h=H) -> float:
    """Relative error of d loss / d theta along a random direction over all parameters."""
    from flowsynth.agent.ppo import minibatch_loss

    params = agent.parameters()
    for p in params.values():
        p.zero_grad()
    total, _ = minibatch_loss(agent, recs, adv, ret, cfg, flow_scale)
    total.backward()
    direction = {k: rng.standard_normal(p.shape) for k, p in params.items()}
    analytic = sum(float(np.sum(p.grad * direction[k])) for k, p in params.items() if p.grad is not None)
    base = {k: p.data.copy() for k, p in params.items()}

    def loss_at(step):
        for k, p in params.items():
            p.data = base[k] + step * direction[k]
        with ag.no_grad():
            val, _ = minibatch_loss(agent, recs, adv, ret, cfg, flow_scale)
        return float(val.data)

    numeric = (loss_at(h) - loss_at(-h)) / (2 * h)
    for k, p in params.items():
        p.data = base[k]
    return rel_error([analytic], [numeric])
