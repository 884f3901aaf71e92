"""Episode rollouts, the PPO training loop and the pre-train/fine-tune harness."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..env import EnvConfig, FlowsheetEnv
from ..flowsheet import FlowsheetGraph
from ..learncore import checkpoint as ckpt
from ..learncore.optim import Adam
from .policy import Agent, AgentSpec, act
from .ppo import StepRecord, TrainConfig, TrajectoryBuffer, ppo_update

log = logging.getLogger(__name__)

MA_WINDOW = 100


@dataclass
class Episode:
    records: list[StepRecord]
    reward: float
    final_state: FlowsheetGraph
    status: str


@dataclass
class LearningCurve:
    rewards: list[float] = field(default_factory=list)
    best_reward: float = float("-inf")
    best_flowsheet: FlowsheetGraph | None = None

    def add(self, ep: Episode):
        self.rewards.append(ep.reward)
        if ep.reward > self.best_reward:
            self.best_reward = ep.reward
            self.best_flowsheet = ep.final_state

    @property
    def moving_average(self) -> np.ndarray:
        return moving_average(self.rewards, MA_WINDOW)

    def rows(self):
        ma = self.moving_average
        return [(i + 1, r, float(m)) for i, (r, m) in enumerate(zip(self.rewards, ma))]

    def __len__(self):
        return len(self.rewards)


def moving_average(values, window: int = MA_WINDOW) -> np.ndarray:
    """Trailing mean over the last ``window`` values (fewer at the start)."""
    x = np.asarray(values, dtype=np.float64)
    if not len(x):
        return x
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def episodes_to_threshold(values, threshold: float, window: int = MA_WINDOW) -> int | None:
    """1-based episode count at which a full-window moving average first reaches ``threshold``.

    Partial windows at the start of a run are skipped so a single lucky
    episode cannot count as having learned.
    """
    ma = moving_average(values, window)
    hits = np.flatnonzero(ma >= threshold)
    hits = hits[hits >= min(window, len(ma)) - 1]
    return int(hits[0]) + 1 if len(hits) else None


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng([seed, episode])


def run_episode(agent: Agent, env, rng: np.random.Generator, greedy: bool = False) -> Episode:
    g = env.reset()
    records = []
    total = 0.0
    status = ""
    while True:
        res = act(agent, g, rng, greedy, env.flow_scale, env.mask(g))
        step = env.step(res.action)
        records.append(StepRecord(g, res.mask2, res.action, res.level_log_probs, res.value,
                                  step.reward, step.terminal))
        total += step.reward
        g = step.state
        if step.terminal:
            status = step.info.get("status", "")
            break
    return Episode(records, total, g, status)


def _collect(agent, env, cfg: TrainConfig, first: int, count: int, pool=None):
    if pool is None:
        return [run_episode(agent, env, episode_rng(cfg.seed, first + k)) for k in range(count)]
    jobs = [(agent.state_dict(), agent.spec, env, cfg.seed, first + k) for k in range(count)]
    return pool.map(_worker_episode, jobs)


def _worker_episode(job):
    state, spec, env, seed, episode = job
    agent = Agent(spec)
    agent.load_state_dict(state)
    return run_episode(agent, env, episode_rng(seed, episode))


def make_env(env_cfg) -> object:
    return FlowsheetEnv(env_cfg) if isinstance(env_cfg, EnvConfig) else env_cfg


def train(cfg: TrainConfig, env_cfg, init: Agent | None = None, spec: AgentSpec = AgentSpec(),
          checkpoint_dir: Path | None = None, progress=None) -> tuple[Agent, LearningCurve]:
    """Run ``cfg.episodes`` episodes with a PPO update every ``cfg.update_every`` episodes."""
    env = make_env(env_cfg)
    agent = init.clone() if init is not None else Agent(spec, cfg.seed)
    curve = LearningCurve()
    if cfg.episodes == 0:
        return agent, curve
    opt = Adam(agent.parameters(), lr=cfg.lr)
    buffer = TrajectoryBuffer()
    pool = None
    if cfg.workers > 1:
        import multiprocessing as mp
        pool = mp.get_context("fork").Pool(cfg.workers)
    try:
        done = 0
        n_update = 0
        while done < cfg.episodes:
            count = min(cfg.update_every, cfg.episodes - done)
            for ep in _collect(agent, env, cfg, done, count, pool):
                curve.add(ep)
                for rec in ep.records:
                    buffer.add(rec)
            done += count
            buffer.finalize(cfg.gamma, cfg.gae_lambda)
            stats = ppo_update(agent, opt, buffer, cfg, np.random.default_rng([cfg.seed, n_update, 7]),
                               env.flow_scale)
            if stats.aborted:
                log.warning("update %d: %d minibatches aborted on non-finite loss", n_update, stats.aborted)
            buffer.clear()
            n_update += 1
            if checkpoint_dir is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
                save_agent(agent, Path(checkpoint_dir) / f"episode_{done:06d}.ckpt")
            if progress is not None:
                progress(done, curve)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return agent, curve


def save_agent(agent: Agent, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        ckpt.save(path, agent.state_dict(), agent.signature())
    except OSError as exc:
        raise ckpt.CheckpointError(f"cannot write checkpoint {path}: {exc}") from None


def load_agent(path, spec: AgentSpec | None = None) -> Agent:
    tensors, signature = ckpt.load(path)
    if spec is None:
        import json
        try:
            meta = json.loads(signature)
            spec = AgentSpec(meta["hidden"], meta["layers"], meta["head_hidden"])
        except (ValueError, KeyError):
            raise ckpt.CheckpointError("checkpoint lacks a readable architecture signature") from None
    agent = Agent(spec)
    agent.load_state_dict(tensors)
    return agent


def transfer(pretrained, env_cfg, cfg: TrainConfig, checkpoint_dir: Path | None = None,
             progress=None) -> tuple[Agent, LearningCurve]:
    """Fine-tune from a checkpoint path or an :class:`Agent`; every weight is transferred."""
    agent = load_agent(pretrained) if not isinstance(pretrained, Agent) else pretrained
    return train(cfg, env_cfg, init=agent, spec=agent.spec, checkpoint_dir=checkpoint_dir,
                 progress=progress)


def evaluate_policy(agent: Agent, env_cfg, episodes: int, greedy: bool = True, seed: int = 0):
    env = make_env(env_cfg)
    return [run_episode(agent, env, episode_rng(seed, k), greedy) for k in range(episodes)]
