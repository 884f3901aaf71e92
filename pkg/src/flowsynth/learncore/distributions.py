"""Masked categorical and Beta action heads.

The differentiable ``*_logp_entropy`` functions are the single source of
truth for log-probabilities: sampling code evaluates them too, so a stored
log-probability always matches a later re-evaluation.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor

BETA_EPS = 1e-9


def categorical_logp_entropy(logits, mask, index) -> tuple[Tensor, Tensor]:
    """Per-row log-probability of ``index`` and entropy under the masked softmax."""
    logp = ag.masked_log_softmax(logits, mask)
    onehot = np.zeros(logp.shape)
    onehot[np.arange(logp.shape[0]), np.asarray(index)] = 1.0
    chosen = ag.sum_rows(logp * onehot)
    safe = np.asarray(mask, dtype=np.float64)
    p = ag.exp(logp)
    entropy = -ag.sum_rows(p * logp * safe)
    return chosen, entropy


def segment_categorical_logp_entropy(logits, seg, n_seg, chosen_flat) -> tuple[Tensor, Tensor]:
    """Categorical distributions over variable-length segments of a flat logit vector."""
    logp = ag.segment_log_softmax(logits, seg, n_seg)
    chosen = ag.take_rows(logp, chosen_flat)
    entropy = -ag.segment_sum(ag.exp(logp) * logp, seg, n_seg)
    return chosen, entropy


def beta_params(raw) -> tuple[Tensor, Tensor]:
    """alpha, beta = 1 + softplus(raw[:, 0]), 1 + softplus(raw[:, 1])."""
    sp = ag.softplus(raw)
    return ag.column(sp, 0) + 1.0, ag.column(sp, 1) + 1.0


def beta_logp_entropy(raw, x) -> tuple[Tensor, Tensor]:
    a, b = beta_params(raw)
    x = np.clip(np.asarray(x, dtype=np.float64), BETA_EPS, 1.0 - BETA_EPS)
    ab = a + b
    log_norm = ag.gammaln(a) + ag.gammaln(b) - ag.gammaln(ab)
    logp = (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - log_norm
    entropy = (log_norm - (a - 1.0) * ag.digamma(a) - (b - 1.0) * ag.digamma(b)
               + (ab - 2.0) * ag.digamma(ab))
    return logp, entropy


def categorical_head(logits, mask, rng: np.random.Generator | None = None, greedy: bool = False):
    """Sample one index from a 1-d masked logit vector; returns (index, log_prob, entropy)."""
    logits = np.asarray(logits, dtype=np.float64).reshape(1, -1)
    mask = np.asarray(mask, dtype=bool).reshape(1, -1)
    if not mask.any():
        raise ValueError("categorical_head needs at least one legal entry")
    with ag.no_grad():
        logp = ag.masked_log_softmax(logits, mask).data[0]
    if greedy:
        idx = int(np.argmax(np.where(mask[0], logp, -np.inf)))
    else:
        p = np.where(mask[0], np.exp(logp), 0.0)
        idx = int(_sample_index(p / p.sum(), rng))
    with ag.no_grad():
        lp, ent = categorical_logp_entropy(logits, mask, [idx])
    return idx, float(lp.data[0]), float(ent.data[0])


def _sample_index(p, rng):
    c = np.cumsum(p)
    u = rng.random() * c[-1]
    return min(int(np.searchsorted(c, u, side="right")), len(p) - 1)


def beta_sample(a: float, b: float, rng: np.random.Generator) -> float:
    """Two-gamma construction: X~Gamma(a), Y~Gamma(b), X/(X+Y) ~ Beta(a, b)."""
    x = rng.gamma(a)
    y = rng.gamma(b)
    return float(np.clip(x / (x + y), BETA_EPS, 1.0 - BETA_EPS))


def beta_mode(a: float, b: float) -> float:
    if a > 1.0 and b > 1.0:
        return (a - 1.0) / (a + b - 2.0)
    return a / (a + b)


def beta_head(raw, rng: np.random.Generator | None = None, greedy: bool = False):
    """Sample from Beta(1+softplus(raw0), 1+softplus(raw1)); returns (x, log_prob, entropy)."""
    raw = np.asarray(raw, dtype=np.float64).reshape(1, 2)
    with ag.no_grad():
        a, b = beta_params(raw)
    a, b = float(a.data[0]), float(b.data[0])
    x = beta_mode(a, b) if greedy else beta_sample(a, b, rng)
    x = float(np.clip(x, BETA_EPS, 1.0 - BETA_EPS))
    with ag.no_grad():
        lp, ent = beta_logp_entropy(raw, [x])
    return x, float(lp.data[0]), float(ent.data[0])
