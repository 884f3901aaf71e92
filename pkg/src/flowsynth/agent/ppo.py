"""PPO with GAE for the hierarchical agent."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..env import ActionKind, HierarchicalAction
from ..flowsheet import FlowsheetGraph
from ..learncore import autograd as ag
from ..learncore.optim import Adam, clip_grad_norm
from .policy import Agent, featurize


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 2000
    update_every: int = 10  # episodes per PPO update
    epochs: int = 4
    minibatch_size: int = 64
    clip_eps: float = 0.2
    gamma: float = 1.0
    gae_lambda: float = 0.95
    value_coeff: float = 0.5
    entropy_coeff: float = 0.01
    lr: float = 3e-4
    max_grad_norm: float = 0.5
    seed: int = 0
    checkpoint_every: int = 0  # episodes; 0 disables periodic checkpoints
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.episodes < 0 or self.update_every < 1 or self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("episode and batch counts must be positive")


@dataclass
class StepRecord:
    graph: FlowsheetGraph
    mask2: np.ndarray
    action: HierarchicalAction
    log_probs: tuple[float, float, float]
    value: float
    reward: float
    done: bool

    @property
    def log_prob(self) -> float:
        lp1, lp2, lp3 = self.log_probs
        return lp1 + lp2 + (lp3 if self.action.uses_level3 else 0.0)


@dataclass
class TrajectoryBuffer:
    records: list[StepRecord] = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return len(self.records)

    def add(self, rec: StepRecord):
        if self.advantages is not None:
            raise RuntimeError("buffer already finalized; clear it before adding steps")
        self.records.append(rec)

    def finalize(self, gamma: float, lam: float):
        if self.records and not self.records[-1].done:
            raise RuntimeError("advantages need completed episodes")
        r = np.array([s.reward for s in self.records])
        v = np.array([s.value for s in self.records])
        d = np.array([s.done for s in self.records], dtype=bool)
        self.advantages, self.returns = gae(r, v, d, gamma, lam)

    def clear(self):
        self.records.clear()
        self.advantages = self.returns = None


def gae(rewards, values, dones, gamma: float, lam: float):
    """Generalized advantage estimates and returns (advantages + values)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    adv = np.zeros(n)
    next_adv = 0.0
    next_value = 0.0
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    clip_fraction: float = 0.0
    grad_norm: float = 0.0
    minibatches: int = 0
    aborted: int = 0
    head_losses: list = field(default_factory=list)  # per minibatch (l1, l2, l3)
    max_abs_adv: list = field(default_factory=list)


def minibatch_loss(agent: Agent, recs: list[StepRecord], adv: np.ndarray, ret: np.ndarray,
                   cfg: TrainConfig, flow_scale: float):
    batch = featurize([r.graph for r in recs], flow_scale)
    masks2 = np.stack([r.mask2 for r in recs])
    l1 = [r.action.level1 for r in recs]
    l2 = [int(r.action.level2) for r in recs]
    l3 = [r.action.level3 for r in recs]
    used3 = np.array([r.action.uses_level3 for r in recs], dtype=np.float64)
    old = np.array([r.log_probs for r in recs])
    n = len(recs)
    lps, ents, values = agent.evaluate(batch, masks2, l1, l2, l3)
    head_losses = []
    policy = None
    kl = 0.0
    clipped = 0.0
    for k, (lp, execd) in enumerate(zip(lps, (np.ones(n), np.ones(n), used3))):
        ratio = ag.exp(lp - old[:, k])
        surr = ag.minimum(ratio * adv, ag.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv)
        loss_k = -ag.sum_all(surr * execd) * (1.0 / n)
        head_losses.append(float(loss_k.data))
        policy = loss_k if policy is None else policy + loss_k
        log_ratio = lp.data - old[:, k]
        kl += float(np.sum((np.expm1(log_ratio) - log_ratio) * execd)) / n
        clipped += float(np.mean(np.abs(ratio.data - 1.0) > cfg.clip_eps))
    value_loss = ag.mean_all(ag.square(values - ret))
    entropy = ag.sum_all(ents[0] + ents[1] + ents[2] * used3) * (1.0 / n)
    total = policy + cfg.value_coeff * value_loss - cfg.entropy_coeff * entropy
    info = dict(policy=float(policy.data), value=float(value_loss.data), entropy=float(entropy.data),
                kl=kl, clip=clipped / 3.0, heads=head_losses)
    return total, info


def ppo_update(agent: Agent, opt: Adam, buffer: TrajectoryBuffer, cfg: TrainConfig,
               rng: np.random.Generator, flow_scale: float) -> UpdateStats:
    if not len(buffer) or buffer.advantages is None:
        raise ValueError("ppo_update needs a non-empty buffer with advantages computed")
    adv_raw = buffer.advantages
    std = adv_raw.std()
    adv_all = (adv_raw - adv_raw.mean()) / (std + 1e-8) if len(adv_raw) > 1 else adv_raw - adv_raw.mean()
    ret_all = buffer.returns
    stats = UpdateStats()
    params = agent.parameters()
    n = len(buffer)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            recs = [buffer.records[i] for i in idx]
            for p in params.values():
                p.zero_grad()
            total, info = minibatch_loss(agent, recs, adv_all[idx], ret_all[idx], cfg, flow_scale)
            if not math.isfinite(float(total.data)):
                stats.aborted += 1
                continue
            total.backward()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            stats.grad_norm = clip_grad_norm(grads, cfg.max_grad_norm)
            opt.step(grads)
            stats.minibatches += 1
            stats.policy_loss += info["policy"]
            stats.value_loss += info["value"]
            stats.entropy += info["entropy"]
            stats.approx_kl += info["kl"]
            stats.clip_fraction += info["clip"]
            stats.head_losses.append(tuple(info["heads"]))
            stats.max_abs_adv.append(float(np.max(np.abs(adv_all[idx]))))
    if stats.minibatches:
        m = stats.minibatches
        stats.policy_loss /= m
        stats.value_loss /= m
        stats.entropy /= m
        stats.approx_kl /= m
        stats.clip_fraction /= m
    return stats


def is_product(action: HierarchicalAction) -> bool:
    return action.level2 is ActionKind.DECLARE_PRODUCT
