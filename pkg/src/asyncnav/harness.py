"""Evaluation suites, ablation grids, latency benchmarks and their persisted outputs."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .env import MODES, EnvConfig, NavEnv, StepRecord
from .learn import TrainConfig, async_only, train, two_stage
from .pointcloud import PillarGridSpec, project_cartesian
from .policy import ConfigurationError, Policy, PolicyConfig
from .schedule import ScheduleConfig
from .world import Status

WILSON_Z = float(stats.norm.ppf(0.975))
OUTCOMES = ("success", "collision", "timeout", "out_of_bounds")
_OUTCOME_OF = {
    Status.REACHED_GOAL: "success",
    Status.COLLIDED: "collision",
    Status.TIMED_OUT: "timeout",
    Status.OUT_OF_BOUNDS: "out_of_bounds",
}


def wilson_interval(successes: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # the bounds at k = 0 and k = n are exactly 0 and 1; rounding would leave them a few ulp off
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


def mcnemar_exact(a: Sequence[bool], b: Sequence[bool]) -> tuple[int, int, float]:
    """Paired exact test on discordant pairs; returns (a-only wins, b-only wins, two-sided p)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    n10 = int(np.sum(a & ~b))
    n01 = int(np.sum(~a & b))
    if n10 + n01 == 0:
        return n10, n01, 1.0
    return n10, n01, float(stats.binomtest(n10, n10 + n01, 0.5).pvalue)


# -- experiment description -----------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "proposed"
    env: EnvConfig = EnvConfig()
    schedule: ScheduleConfig = ScheduleConfig()  # the low-rate schedule; ideal replaces it
    checkpoint: Optional[str] = None  # None flies a straight-to-goal reference controller
    trials: int = 100
    seed: int = 0
    v_des: Optional[float] = None  # None samples per episode from env.v_des_range
    density: Optional[float] = None  # overrides env.world.density
    deterministic: bool = True
    record_steps: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.trials < 1:
            raise ConfigurationError("trials must be positive")

    def env_config(self) -> EnvConfig:
        if self.density is None:
            return self.env
        return replace(self.env, world=replace(self.env.world, density=self.density))


def suite_seeds(master: int, n: int) -> list[int]:
    """Per-episode seeds shared by every mode, so suites are paired by construction."""
    return [int(s) for s in np.random.SeedSequence([master, 0xE7A1]).generate_state(n, dtype=np.uint32)]


# -- controllers ----------------------------------------------------------------------

class PolicyController:
    """Acts from decisions with a trained policy, encoding each perception frame once."""

    def __init__(self, policy: Policy, deterministic: bool = True):
        self.policy = policy
        self.deterministic = deterministic
        self.rng = np.random.default_rng(0)
        self._frame = None
        self._z = None

    def reset(self, seed: int) -> None:
        self.rng = np.random.default_rng([seed, 31337])
        self._frame = None

    def __call__(self, decision, env: NavEnv) -> np.ndarray:
        if decision.frame_id != self._frame:
            self._z = self.policy.encode(decision.image[None])
            self._frame = decision.frame_id
        if self.deterministic:
            return self.policy.mean_action(self._z, decision.proprio)[0]
        sample, _ = self.policy.sample(self._z, decision.proprio, self.rng)
        return sample.a[0]


class GoalSeeker:
    """Reference controller: fly at the desired speed straight at the goal, ignoring obstacles."""

    def reset(self, seed: int) -> None:
        pass

    def __call__(self, decision, env: NavEnv) -> np.ndarray:
        from .world import quat_to_matrix
        to_goal = env.world.goal - env.state.p
        dist = float(np.linalg.norm(to_goal))
        if dist == 0:
            return np.zeros(3)
        v_world = to_goal / dist * min(env.v_des, dist / 0.3)
        yaw = math.atan2(2 * (env.state.q[0] * env.state.q[3] + env.state.q[1] * env.state.q[2]),
                         1 - 2 * (env.state.q[2] ** 2 + env.state.q[3] ** 2))
        c, s = math.cos(yaw), math.sin(yaw)
        return np.array([c * v_world[0] + s * v_world[1], -s * v_world[0] + c * v_world[1], v_world[2]])


def load_policy(path: Union[str, Path], env: EnvConfig) -> Policy:
    spec = env.lidar.spec
    policy = Policy.load(path)
    if tuple(policy.cfg.image_shape) != spec.shape or policy.cfg.r_max != spec.r_max:
        raise ConfigurationError(
            f"checkpoint expects images {tuple(policy.cfg.image_shape)} / r_max {policy.cfg.r_max}, "
            f"config gives {spec.shape} / r_max {spec.r_max}")
    return policy


# -- episodes ---------------------------------------------------------------------------

@dataclass
class EpisodeRecord:
    seed: int
    mode: str
    outcome: str
    v_des: float
    duration: float
    path_length: float
    mean_speed: float
    mean_aoi: float
    max_aoi: float
    decisions: int
    steps: list[StepRecord] = field(default_factory=list)

    def to_json(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "steps"}
        if self.steps:
            d["steps"] = [{
                "t": s.t, "position": s.position.tolist(), "velocity": s.velocity.tolist(),
                "action": s.action.tolist(), "reward": s.reward.as_dict(), "aoi": s.aoi,
            } for s in self.steps]
        return d


def run_episode(env: NavEnv, controller, seed: int, v_des: Optional[float] = None) -> EpisodeRecord:
    record_steps = env.record
    env.record = True  # AoI statistics come from the step log
    d = env.reset(seed, v_des=v_des)
    controller.reset(seed)
    done = False
    while not done:
        d, _, done, info = env.step(controller(d, env))
    steps = env.records
    aoi = np.array([s.aoi for s in steps])
    env.record = record_steps
    duration = env.t
    return EpisodeRecord(
        seed=seed, mode=env.mode, outcome=_OUTCOME_OF[info["status"]], v_des=env.v_des,
        duration=duration, path_length=env.path_length,
        mean_speed=env.path_length / duration if duration > 0 else 0.0,
        mean_aoi=float(aoi.mean()), max_aoi=float(aoi.max()), decisions=len(steps),
        steps=steps if record_steps else [],
    )


# -- suites ---------------------------------------------------------------------------

@dataclass
class ModeStats:
    mode: str
    n: int
    counts: dict
    rates: dict
    intervals: dict
    mean_speed: float
    mean_aoi: float
    max_aoi: float

    @classmethod
    def from_episodes(cls, mode: str, episodes: Sequence[EpisodeRecord]) -> "ModeStats":
        n = len(episodes)
        counts = {o: sum(e.outcome == o for e in episodes) for o in OUTCOMES}
        return cls(
            mode=mode, n=n, counts=counts,
            rates={o: counts[o] / n for o in OUTCOMES},
            intervals={o: wilson_interval(counts[o], n) for o in OUTCOMES},
            mean_speed=float(np.mean([e.mean_speed for e in episodes])),
            mean_aoi=float(np.mean([e.mean_aoi for e in episodes])),
            max_aoi=float(np.max([e.max_aoi for e in episodes])),
        )


@dataclass
class SuiteReport:
    modes: dict  # mode -> ModeStats
    episodes: dict  # mode -> list[EpisodeRecord]
    meta: dict = field(default_factory=dict)

    def outcomes(self, mode: str) -> np.ndarray:
        return np.array([e.outcome == "success" for e in self.episodes[mode]])

    def to_json(self) -> dict:
        return {"meta": self.meta, "modes": {m: asdict(s) for m, s in self.modes.items()}}

    def table(self) -> str:
        head = ("mode", "n", "success", "95% CI", "collision", "timeout", "oob", "speed", "mean_aoi", "max_aoi")
        rows = [head]
        for m, s in self.modes.items():
            lo, hi = s.intervals["success"]
            rows.append((m, str(s.n), f"{s.rates['success']:.3f}", f"[{lo:.3f}, {hi:.3f}]",
                         f"{s.rates['collision']:.3f}", f"{s.rates['timeout']:.3f}",
                         f"{s.rates['out_of_bounds']:.3f}", f"{s.mean_speed:.3f}",
                         f"{s.mean_aoi:.3f}", f"{s.max_aoi:.3f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"

    def write(self, out_dir: Union[str, Path]) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(self.table())
        (out / "report.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        with open(out / "episodes.jsonl", "w") as fh:
            for eps in self.episodes.values():
                for e in eps:
                    fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")


def _controller(cfg: ExperimentConfig, policy: Optional[Policy]):
    if policy is None and cfg.checkpoint is not None:
        policy = load_policy(cfg.checkpoint, cfg.env_config())
    if policy is not None:
        spec = cfg.env_config().lidar.spec
        if tuple(policy.cfg.image_shape) != spec.shape:
            raise ConfigurationError("policy image shape does not match the lidar grid")
        return PolicyController(policy, cfg.deterministic)
    return GoalSeeker()


def run_mode(cfg: ExperimentConfig, policy: Optional[Policy] = None,
             seeds: Optional[Sequence[int]] = None) -> list[EpisodeRecord]:
    controller = _controller(cfg, policy)
    env = NavEnv(cfg.env_config(), cfg.schedule, mode=cfg.mode, record=cfg.record_steps)
    seeds = suite_seeds(cfg.seed, cfg.trials) if seeds is None else seeds
    return [run_episode(env, controller, s, cfg.v_des) for s in seeds]


def run_suite(cfg: ExperimentConfig, policy: Optional[Policy] = None) -> SuiteReport:
    """Run ``cfg.trials`` seeded episodes in ``cfg.mode`` and aggregate them."""
    episodes = run_mode(cfg, policy)
    return SuiteReport({cfg.mode: ModeStats.from_episodes(cfg.mode, episodes)}, {cfg.mode: episodes},
                       _meta(cfg))


def run_modes(cfg: ExperimentConfig, modes: Sequence[str] = MODES,
              policies: Optional[dict] = None) -> SuiteReport:
    """Same seeds across every mode; ``policies`` maps mode to a policy (or checkpoint path)."""
    stats_, eps = {}, {}
    for m in modes:
        p = (policies or {}).get(m)
        c = replace(cfg, mode=m)
        if isinstance(p, (str, Path)):
            c, p = replace(c, checkpoint=str(p)), None
        eps[m] = run_mode(c, p)
        stats_[m] = ModeStats.from_episodes(m, eps[m])
    return SuiteReport(stats_, eps, _meta(cfg) | {"modes": list(modes)})


def _meta(cfg: ExperimentConfig) -> dict:
    return {"mode": cfg.mode, "trials": cfg.trials, "seed": cfg.seed, "v_des": cfg.v_des,
            "density": cfg.density if cfg.density is not None else cfg.env.world.density,
            "checkpoint": Path(cfg.checkpoint).name if cfg.checkpoint else None,
            "deterministic": cfg.deterministic}


# -- ablation -------------------------------------------------------------------------

@dataclass
class AblationCell:
    axis: str  # "speed" or "density"
    value: float
    mode: str
    stats: ModeStats


def ablation_matrix(base: ExperimentConfig, speeds: Sequence[float], densities: Sequence[float],
                    modes: Sequence[str] = MODES, policies: Optional[dict] = None,
                    fixed_density: float = 0.25, fixed_speed: float = 4.0) -> list[AblationCell]:
    """Vary speed at a fixed density, then density at a fixed speed; every mode at every value."""
    if not speeds and not densities:
        raise ValueError("need at least one speed or density")
    cells = []
    for axis, values in (("speed", speeds), ("density", densities)):
        for v in values:
            cfg = (replace(base, v_des=float(v), density=fixed_density) if axis == "speed"
                   else replace(base, v_des=fixed_speed, density=float(v)))
            rep = run_modes(cfg, modes, policies)
            cells += [AblationCell(axis, float(v), m, rep.modes[m]) for m in modes]
    return cells


def ablation_table(cells: Sequence[AblationCell]) -> str:
    lines = ["axis\tvalue\tmode\tn\tsuccess\tsuccess_lo\tsuccess_hi\tcollision\ttimeout\tout_of_bounds\tmean_speed\tmean_aoi"]
    for c in cells:
        s = c.stats
        lo, hi = s.intervals["success"]
        lines.append(f"{c.axis}\t{c.value:g}\t{c.mode}\t{s.n}\t{s.rates['success']:.6f}\t{lo:.6f}\t{hi:.6f}\t"
                     f"{s.rates['collision']:.6f}\t{s.rates['timeout']:.6f}\t{s.rates['out_of_bounds']:.6f}\t"
                     f"{s.mean_speed:.6f}\t{s.mean_aoi:.6f}")
    return "\n".join(lines) + "\n"


# -- latency --------------------------------------------------------------------------

@dataclass
class BenchRow:
    stage: str  # "projection" or "policy_forward"
    size: int
    median_ms: float
    p95_ms: float
    repetitions: int
    checksum: str


def _ms(samples_ns: list[int]) -> tuple[float, float]:
    a = np.asarray(samples_ns, dtype=np.float64) / 1e6
    return float(np.median(a)), float(np.percentile(a, 95))


def bench_latency(spec: PillarGridSpec = PillarGridSpec(), sizes: Sequence[int] = (0, 1000, 5000, 20000),
                  repetitions: int = 50, policy_cfg: Optional[PolicyConfig] = None, seed: int = 0) -> list[BenchRow]:
    """Median and p95 compute time of cloud projection per size and of one policy forward pass.

    Inputs are generated before timing starts, so file I/O is excluded.
    Checksums cover the computed outputs and are reproducible; timings are not.
    """
    if repetitions < 30:
        raise ValueError("repetitions must be at least 30")
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        cloud = rng.uniform(-12, 12, size=(int(n), 3))
        samples = []
        for _ in range(repetitions):
            t0 = time.perf_counter_ns()
            img = project_cartesian(spec, cloud)
            samples.append(time.perf_counter_ns() - t0)
        med, p95 = _ms(samples)
        rows.append(BenchRow("projection", int(n), med, p95, repetitions,
                             hashlib.sha256(img.values.tobytes()).hexdigest()[:16]))
    pcfg = policy_cfg or PolicyConfig(image_shape=spec.shape, r_max=spec.r_max)
    policy = Policy(pcfg, seed=seed)
    image = rng.uniform(0, spec.r_max, size=spec.shape)
    proprio = rng.normal(size=pcfg.proprio_dim)
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        bp, value = policy.act_params(policy.encode(image[None]), proprio)
        samples.append(time.perf_counter_ns() - t0)
    med, p95 = _ms(samples)
    out = np.concatenate([bp.alpha.ravel(), bp.beta.ravel(), value.ravel()])
    rows.append(BenchRow("policy_forward", 1, med, p95, repetitions, hashlib.sha256(out.tobytes()).hexdigest()[:16]))
    return rows


def write_bench(rows: Sequence[BenchRow], out_dir: Union[str, Path]) -> None:
    """``bench_timing.json`` holds measurements; ``bench_workload.json`` the reproducible part."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench_timing.json").write_text(json.dumps([asdict(r) for r in rows], indent=2) + "\n")
    work = [{"stage": r.stage, "size": r.size, "repetitions": r.repetitions, "checksum": r.checksum} for r in rows]
    (out / "bench_workload.json").write_text(json.dumps(work, indent=2) + "\n")


def bench_table(rows: Sequence[BenchRow]) -> str:
    lines = [f"{'stage':<16}{'size':>8}{'median_ms':>12}{'p95_ms':>10}"]
    lines += [f"{r.stage:<16}{r.size:>8}{r.median_ms:>12.4f}{r.p95_ms:>10.4f}" for r in rows]
    return "\n".join(lines) + "\n"


# -- training from settings -----------------------------------------------------------

def train_config(env: EnvConfig, schedule: ScheduleConfig, policy: PolicyConfig, ppo, ts, seed: int) -> TrainConfig:
    """Assemble a :class:`TrainConfig` from a ``TrainSettings`` record."""
    if ts.curriculum == "two_stage":
        stages = two_stage(schedule, ts.stage1_iters, ts.stage2_iters, ts.stage1_threshold, ts.window)
    else:
        stages = async_only(schedule, ts.stage1_iters + ts.stage2_iters, ts.window)
    return TrainConfig(env=env, policy=policy, ppo=ppo, stages=stages, variant=ts.variant,
                       n_envs=ts.n_envs, horizon=ts.horizon, seed=seed,
                       collapse_threshold=ts.collapse_threshold)
