"""PPO with GAE and AdamW, plus the synchronous-to-asynchronous training curriculum."""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .env import EnvConfig, NavEnv
from .policy import (Policy, PolicyConfig, beta_entropy, beta_entropy_grad, beta_log_prob,
                     beta_log_prob_grad, scale_action, U_CLAMP)
from .schedule import ScheduleConfig
from .world import Status

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class PpoConfig:
    clip_ratio: float = 0.1
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatch_size: int = 256
    value_coef: float = 0.5
    entropy_coef: float = 0.003
    lr: float = 3e-4
    weight_decay: float = 1e-4
    max_grad_norm: float = 1.0
    reward_scale: float = 0.1

    def __post_init__(self):
        if not 0 < self.clip_ratio < 1:
            raise ValueError("clip_ratio must lie in (0, 1)")
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")


# -- advantage estimation -------------------------------------------------------------

def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, last_values: np.ndarray,
                gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates over a (T, ...) rollout.

    ``dones[t]`` marks step t as the last of its episode, which stops both the
    bootstrap and the trace at that step. ``last_values`` bootstraps the step
    after the final one.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    next_v = np.asarray(last_values, dtype=np.float64)
    for t in range(len(rewards) - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_v * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_v = values[t]
    return adv, adv + values


def normalize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / (x.std() + 1e-8)


# -- optimizer ------------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay, updating a flat parameter vector in place."""

    def __init__(self, n: int, lr: float = 3e-4, weight_decay: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr, self.weight_decay, self.betas, self.eps = lr, weight_decay, betas, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        b1, b2 = self.betas
        params *= 1.0 - self.lr * self.weight_decay
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1 ** self.t)
        v_hat = self.v / (1 - b2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- objective ------------------------------------------------------------------------

def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray, clip: float) -> np.ndarray:
    return np.minimum(ratio * adv, np.clip(ratio, 1 - clip, 1 + clip) * adv)


@dataclass
class Batch:
    images: np.ndarray
    image_index: np.ndarray
    proprio: np.ndarray
    u: np.ndarray
    logp_old: np.ndarray
    adv: np.ndarray
    returns: np.ndarray


def ppo_loss(policy: Policy, batch: Batch, cfg: PpoConfig, backward: bool = True) -> dict:
    """Clipped PPO loss on ``batch``; with ``backward`` its gradient is accumulated into the policy."""
    bp, value = policy.forward(batch.images, batch.proprio, batch.image_index)
    n = len(batch.u)
    logp = beta_log_prob(batch.u, bp.alpha, bp.beta)
    ratio = np.exp(logp - batch.logp_old)
    surr = ratio * batch.adv
    surr_clipped = np.clip(ratio, 1 - cfg.clip_ratio, 1 + cfg.clip_ratio) * batch.adv
    policy_loss = -np.mean(np.minimum(surr, surr_clipped))
    value_err = value - batch.returns
    value_loss = np.mean(value_err ** 2)
    entropy = np.mean(beta_entropy(bp.alpha, bp.beta))
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    stats = {
        "loss": float(loss), "policy_loss": float(policy_loss), "value_loss": float(value_loss),
        "entropy": float(entropy), "clip_frac": float(np.mean(np.abs(ratio - 1) > cfg.clip_ratio)),
        "approx_kl": float(np.mean(batch.logp_old - logp)),
    }
    if not backward:
        policy._cache = None
        return stats
    d_logp = -(batch.adv * ratio * (surr <= surr_clipped)) / n
    ga, gb = beta_log_prob_grad(batch.u, bp.alpha, bp.beta)
    ha, hb = beta_entropy_grad(bp.alpha, bp.beta)
    ec = cfg.entropy_coef / n
    policy.backward(d_logp[:, None] * ga - ec * ha, d_logp[:, None] * gb - ec * hb,
                    2.0 * cfg.value_coef * value_err / n)
    return stats


# -- rollouts -------------------------------------------------------------------------

@dataclass
class RolloutBuffer:
    """Decision-step records laid out (T, n_envs); images live in a shared bank."""

    proprio: np.ndarray
    frame: np.ndarray
    u: np.ndarray
    logp: np.ndarray
    value: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    aoi: np.ndarray
    bank: np.ndarray
    last_value: np.ndarray
    adv: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.reward.size

    def finish(self, gamma: float, lam: float) -> None:
        self.adv, self.returns = compute_gae(self.reward, self.value, self.done, self.last_value, gamma, lam)

    def batch(self, idx: np.ndarray, adv: np.ndarray) -> Batch:
        frames = self.frame.reshape(-1)[idx]
        uniq, inv = np.unique(frames, return_inverse=True)
        return Batch(self.bank[uniq], inv, self.proprio.reshape(-1, self.proprio.shape[-1])[idx],
                     self.u.reshape(-1, self.u.shape[-1])[idx], self.logp.reshape(-1)[idx],
                     adv[idx], self.returns.reshape(-1)[idx])


@dataclass
class EpisodeSummary:
    seed: int
    status: Status
    ret: float
    steps: int
    duration: float
    mean_aoi: float


def episode_seed(master: int, env_index: int, episode: int) -> int:
    return int(np.random.SeedSequence([master, env_index, episode]).generate_state(1)[0])


class Collector:
    """Steps a fixed set of environments with a shared read-only policy."""

    def __init__(self, make_env: Callable[[], NavEnv], n_envs: int, seed: int):
        self.envs = [make_env() for _ in range(n_envs)]
        self.seed = seed
        # one action stream per environment, so trajectories do not depend on how many envs run alongside
        self.rngs = [np.random.default_rng([seed, 7919, k]) for k in range(n_envs)]
        self.episodes = [0] * n_envs
        self.decisions = [env.reset(episode_seed(seed, k, 0)) for k, env in enumerate(self.envs)]
        self._ret = [0.0] * n_envs
        self._aoi = [[] for _ in range(n_envs)]
        self._cached_frame = [None] * n_envs
        self._z = None

    def collect(self, policy: Policy, horizon: int, reward_scale: float = 1.0
                ) -> tuple[RolloutBuffer, list[EpisodeSummary]]:
        n = len(self.envs)
        cfg = policy.cfg
        proprio = np.zeros((horizon, n, cfg.proprio_dim))
        frame = np.zeros((horizon, n), dtype=np.int64)
        u = np.zeros((horizon, n, cfg.action_dim))
        logp = np.zeros((horizon, n))
        value = np.zeros((horizon, n))
        reward = np.zeros((horizon, n))
        done = np.zeros((horizon, n))
        aoi = np.zeros((horizon, n))
        bank: list[np.ndarray] = []
        bank_of = {}
        z = np.zeros((n, cfg.feature_dim))
        finished: list[EpisodeSummary] = []

        for t in range(horizon):
            fresh = []
            for k, d in enumerate(self.decisions):
                key = (k, d.frame_id)
                if key not in bank_of:
                    bank_of[key] = len(bank)
                    bank.append(d.image)
                    fresh.append(k)
                elif self._cached_frame[k] != d.frame_id:
                    fresh.append(k)
            if fresh:
                z[fresh] = policy.encode(np.stack([self.decisions[k].image for k in fresh]))
                for k in fresh:
                    self._cached_frame[k] = self.decisions[k].frame_id
            proprio[t] = np.stack([d.proprio for d in self.decisions])
            frame[t] = [bank_of[(k, d.frame_id)] for k, d in enumerate(self.decisions)]
            aoi[t] = [d.aoi for d in self.decisions]
            bp, value[t] = policy.act_params(z, proprio[t])
            u[t] = np.clip([r.beta(a, b) for r, a, b in zip(self.rngs, bp.alpha, bp.beta)], U_CLAMP, 1 - U_CLAMP)
            logp[t] = beta_log_prob(u[t], bp.alpha, bp.beta)
            actions = scale_action(u[t], cfg.v_max)
            for k, env in enumerate(self.envs):
                self._aoi[k].append(self.decisions[k].aoi)
                d, r, is_done, info = env.step(actions[k])
                reward[t, k] = r * reward_scale
                self._ret[k] += r
                if is_done:
                    done[t, k] = 1.0
                    finished.append(EpisodeSummary(env.seed, info["status"], self._ret[k], env.n_decisions,
                                                   env.t, float(np.mean(self._aoi[k]))))
                    self.episodes[k] += 1
                    self._ret[k] = 0.0
                    self._aoi[k] = []
                    d = env.reset(episode_seed(self.seed, k, self.episodes[k]))
                self.decisions[k] = d

        fresh = [k for k, d in enumerate(self.decisions) if self._cached_frame[k] != d.frame_id]
        if fresh:
            z[fresh] = policy.encode(np.stack([self.decisions[k].image for k in fresh]))
            for k in fresh:
                self._cached_frame[k] = self.decisions[k].frame_id
        _, last_value = policy.act_params(z, np.stack([d.proprio for d in self.decisions]))
        buf = RolloutBuffer(proprio, frame, u, logp, value, reward, done, aoi, np.stack(bank), last_value)
        return buf, finished


def ppo_update(policy: Policy, opt: AdamW, buf: RolloutBuffer, cfg: PpoConfig,
               rng: np.random.Generator) -> dict:
    """Minibatched clipped-PPO epochs over a finished buffer. Restores parameters on a non-finite loss."""
    if buf.adv is None:
        raise RuntimeError("compute advantages (buffer.finish) before updating")
    adv = normalize(buf.adv.reshape(-1))
    n = buf.size
    backup = policy.params.copy()
    totals: dict[str, float] = {}
    count = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            policy.zero_grad()
            stats = ppo_loss(policy, buf.batch(idx, adv), cfg)
            grad_norm = float(np.linalg.norm(policy.grad))
            if not (math.isfinite(stats["loss"]) and math.isfinite(grad_norm)):
                policy.params[...] = backup
                raise DivergenceError(f"non-finite loss/gradient: {stats}, grad_norm={grad_norm}")
            if cfg.max_grad_norm and grad_norm > cfg.max_grad_norm:
                policy.grad[...] *= cfg.max_grad_norm / grad_norm
            opt.step(policy.params, policy.grad)
            stats["grad_norm"] = grad_norm
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    return {k: v / count for k, v in totals.items()}


# -- curriculum -----------------------------------------------------------------------

@dataclass(frozen=True)
class CurriculumStage:
    name: str  # "synchronous" or "asynchronous"
    schedule: ScheduleConfig
    max_iters: int
    success_threshold: Optional[float] = None  # leave the stage early once the rolling rate reaches this
    window: int = 200

    @property
    def synchronous(self) -> bool:
        return self.name == "synchronous"


def two_stage(async_schedule: ScheduleConfig, stage1_iters: int, stage2_iters: int,
              stage1_threshold: Optional[float] = 0.7, window: int = 200,
              stage2_threshold: Optional[float] = None) -> tuple[CurriculumStage, ...]:
    sync = ScheduleConfig.synchronous(async_schedule.f_ctrl, async_schedule.jitter_seed)
    return (CurriculumStage("synchronous", sync, stage1_iters, stage1_threshold, window),
            CurriculumStage("asynchronous", async_schedule, stage2_iters, stage2_threshold, window))


def async_only(async_schedule: ScheduleConfig, iters: int, window: int = 200,
               threshold: Optional[float] = None) -> tuple[CurriculumStage, ...]:
    return (CurriculumStage("asynchronous", async_schedule, iters, threshold, window),)


def iterations_to_threshold(metrics: Sequence[dict], threshold: float = 0.7, window: int = 200,
                            stage: str = "asynchronous") -> Optional[int]:
    """First iteration at which ``stage`` has a full window of episodes at or above ``threshold``."""
    seen = 0
    for row in metrics:
        if row["stage"] != stage:
            continue
        seen += row["episodes"]
        if seen >= window and row["success_rate"] >= threshold:
            return row["iteration"]
    return None


@dataclass(frozen=True)
class TrainConfig:
    env: EnvConfig = EnvConfig()
    policy: PolicyConfig = PolicyConfig()
    ppo: PpoConfig = PpoConfig()
    stages: tuple[CurriculumStage, ...] = two_stage(ScheduleConfig(), 150, 150)
    variant: str = "proposed"  # proposed | no_tem | sync_baseline
    n_envs: int = 64
    horizon: int = 128
    seed: int = 0
    collapse_threshold: Optional[float] = None


@dataclass
class TrainResult:
    policy: Policy
    metrics: list[dict]
    halted: Optional[str] = None


def _stage_env(cfg: TrainConfig, stage: CurriculumStage) -> Callable[[], NavEnv]:
    tem = cfg.variant != "no_tem"
    gated = cfg.variant == "sync_baseline"
    return lambda: NavEnv(cfg.env, stage.schedule, mode="proposed", tem=tem, gated=gated)


def _fmt(x):
    return round(x, 10) if isinstance(x, float) else x


def train(cfg: TrainConfig, out_dir: Optional[Path] = None, policy: Optional[Policy] = None,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Run every curriculum stage in order, carrying parameters (and optimizer state) across stages.

    Writes ``metrics.jsonl`` and ``policy.ckpt`` to ``out_dir`` when given.
    """
    if cfg.variant not in ("proposed", "no_tem", "sync_baseline"):
        raise ValueError(f"unknown training variant {cfg.variant!r}")
    policy = policy or Policy(cfg.policy, seed=cfg.seed)
    opt = AdamW(policy.params.size, cfg.ppo.lr, cfg.ppo.weight_decay)
    rng = np.random.default_rng([cfg.seed, 104729])
    metrics: list[dict] = []
    halted = None
    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "metrics.jsonl", "w")
    iteration = 0
    try:
        for s_idx, stage in enumerate(cfg.stages):
            collector = Collector(_stage_env(cfg, stage), cfg.n_envs, seed=episode_seed(cfg.seed, 10_000 + s_idx, 0))
            recent: deque = deque(maxlen=stage.window)
            for _ in range(stage.max_iters):
                buf, episodes = collector.collect(policy, cfg.horizon, cfg.ppo.reward_scale)
                buf.finish(cfg.ppo.gamma, cfg.ppo.gae_lambda)
                try:
                    stats = ppo_update(policy, opt, buf, cfg.ppo, rng)
                except DivergenceError as exc:
                    halted = f"diverged: {exc}"
                    break
                recent.extend(ep.status == Status.REACHED_GOAL for ep in episodes)
                iteration += 1
                row = {
                    "iteration": iteration,
                    "stage": stage.name,
                    "mean_return": float(np.mean([e.ret for e in episodes])) if episodes else None,
                    "success_rate": float(np.mean(recent)) if recent else 0.0,
                    "episodes": len(episodes),
                    "mean_aoi": float(buf.aoi.mean()),
                    "max_aoi": float(buf.aoi.max()),
                    "policy_loss": stats["policy_loss"],
                    "value_loss": stats["value_loss"],
                    "entropy": stats["entropy"],
                    "approx_kl": stats["approx_kl"],
                    "clip_frac": stats["clip_frac"],
                }
                row = {k: _fmt(v) for k, v in row.items()}
                metrics.append(row)
                if log_fh:
                    log_fh.write(json.dumps(row) + "\n")
                    log_fh.flush()
                if progress:
                    progress(row)
                if (cfg.collapse_threshold is not None and episodes
                        and row["mean_return"] < cfg.collapse_threshold):
                    halted = f"return collapsed to {row['mean_return']:.3f}"
                    break
                if (stage.success_threshold is not None and len(recent) == recent.maxlen
                        and row["success_rate"] >= stage.success_threshold):
                    break
            if halted:
                break
    finally:
        if log_fh:
            log_fh.close()
        if out_dir is not None:
            policy.save(out_dir / "policy.ckpt", {"variant": cfg.variant, "iterations": iteration,
                                                  "halted": halted})
    return TrainResult(policy, metrics, halted)


def read_metrics(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
