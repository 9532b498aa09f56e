"""Navigation episode driver: world physics at the control rate, perception on its own schedule.

The environment runs in one of four modes:

``ideal``          perception at the control rate with zero latency (age is always 0)
``proposed``       low-rate, delayed perception; the policy sees the encoded age
``no_tem``         same schedule as ``proposed`` with the age-encoding slots zeroed
``sync_baseline``  same perception schedule, but decisions only happen when a new
                   frame arrives and the command is held in between
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import temporal
from .policy import proprio_vector
from .reward import RewardBreakdown, RewardConfig, step_reward
from .schedule import AsyncSchedule, ScheduleConfig, to_s
from .world import (DynamicsParams, EpisodeLimits, ForestWorld, LidarModel, Status, VehicleState,
                    WorldConfig, episode_status, initial_state, lidar_image, make_world, safety_ranges,
                    step_dynamics)

MODES = ("proposed", "ideal", "no_tem", "sync_baseline")


@dataclass(frozen=True)
class EnvConfig:
    world: WorldConfig = WorldConfig()
    lidar: LidarModel = LidarModel()
    dynamics: DynamicsParams = DynamicsParams()
    limits: EpisodeLimits = EpisodeLimits()
    reward: RewardConfig = RewardConfig()
    v_des_range: tuple[float, float] = (1.0, 4.0)
    safety_beams: int = 36


def schedule_for_mode(mode: str, base: ScheduleConfig) -> ScheduleConfig:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "ideal":
        return ScheduleConfig.synchronous(base.f_ctrl, base.jitter_seed)
    return base


@dataclass
class StepRecord:
    t: float
    position: np.ndarray
    velocity: np.ndarray
    action: np.ndarray
    reward: RewardBreakdown
    aoi: float


@dataclass
class Decision:
    """What the policy sees at a decision tick."""

    frame_id: int
    image: np.ndarray
    proprio: np.ndarray
    aoi: float


def _episode_seeds(seed: int) -> tuple[int, int, int, float]:
    ss = np.random.SeedSequence(seed)
    world_seed, jitter_seed, noise_seed, vdes_seed = (int(s) for s in ss.generate_state(4))
    return world_seed, jitter_seed, noise_seed, vdes_seed


class NavEnv:
    def __init__(self, cfg: EnvConfig = EnvConfig(), schedule: ScheduleConfig = ScheduleConfig(),
                 mode: str = "proposed", record: bool = False, tem: Optional[bool] = None,
                 gated: Optional[bool] = None):
        self.cfg = cfg
        self.mode = mode
        self.schedule_cfg = schedule_for_mode(mode, schedule)
        self.tem = (mode != "no_tem") if tem is None else tem
        self.gated = (mode == "sync_baseline") if gated is None else gated
        self.dt = 1.0 / self.schedule_cfg.f_ctrl
        self.record = record
        self.world: Optional[ForestWorld] = None
        self.state: Optional[VehicleState] = None
        self.status = Status.RUNNING
        self.records: list[StepRecord] = []
        self._frames = 0

    # -- lifecycle ------------------------------------------------------------------
    def reset(self, seed: int, world: Optional[ForestWorld] = None, v_des: Optional[float] = None) -> Decision:
        world_seed, jitter_seed, noise_seed, vdes_seed = _episode_seeds(seed)
        self.seed = seed
        self.world = world if world is not None else make_world(self.cfg.world, world_seed)
        if v_des is None:
            lo, hi = self.cfg.v_des_range
            v_des = float(np.random.default_rng(vdes_seed).uniform(lo, hi))
        self.v_des = v_des
        self.noise_rng = np.random.default_rng(noise_seed)
        self.state = initial_state(self.world)
        self.status = Status.RUNNING
        self.a_prev = np.zeros(3)
        self.records = []
        self.n_decisions = 0
        self.path_length = 0.0
        empty = np.full(self.cfg.lidar.spec.shape, self.cfg.lidar.spec.r_max)
        self.sched = AsyncSchedule(replace(self.schedule_cfg, jitter_seed=jitter_seed), (self._new_frame_id(), empty))
        self._reward_acc = None
        self._t_us = self.sched.advance(self._measure, self._physics)
        self._last_version = self.sched.channel.version
        return self._decision()

    def _new_frame_id(self) -> int:
        self._frames += 1
        return self._frames

    def _measure(self, t_us: int):
        img = lidar_image(self.world, self.state, self.cfg.lidar, self.noise_rng)
        return self._new_frame_id(), img

    def _physics(self, t_us: int) -> None:
        if t_us == 0:
            return
        prev = self.state.p
        self.state = step_dynamics(self.state, self.a_prev, self.dt, self.cfg.dynamics)
        self.state.t = to_s(t_us)
        self.path_length += float(np.linalg.norm(self.state.p - prev))
        self.status = episode_status(self.world, self.state, self.cfg.limits.goal_tol, self.cfg.limits)
        rb = step_reward(safety_ranges(self.world, self.state, self.cfg.safety_beams, self.cfg.lidar.spec.r_max),
                         self.state.v, self.state.p, self.world.goal, self.state.q, self.v_des,
                         self.status, self.cfg.reward)
        acc = self._reward_acc
        if acc is None:
            self._reward_acc = rb
        else:
            for k, v in rb.as_dict().items():
                setattr(acc, k, getattr(acc, k) + v)

    def _decision(self) -> Decision:
        ch = self.sched.channel
        aoi = to_s(ch.aoi_us(self._t_us))
        phi = temporal.encode(aoi) if self.tem else np.zeros(temporal.ENCODING_DIM)
        frame_id, image = ch.payload
        return Decision(frame_id, image, proprio_vector(self.state, self.world.goal, self.a_prev, self.v_des, phi), aoi)

    @property
    def t(self) -> float:
        return to_s(self._t_us)

    def step(self, action) -> tuple[Decision, float, bool, dict]:
        """Apply ``action`` (body-frame velocity command) until the next decision tick."""
        if self.status.terminal:
            raise RuntimeError("episode finished; call reset()")
        action = np.asarray(action, dtype=np.float64)
        self.a_prev = action
        self.n_decisions += 1
        aoi_at_decision = to_s(self.sched.channel.aoi_us(self._t_us))
        t_decision = self.t
        p_decision, v_decision = self.state.p.copy(), self.state.v.copy()
        self._reward_acc = None
        while True:
            self._t_us = self.sched.advance(self._measure, self._physics)
            if self.status.terminal:
                break
            if not self.gated or self.sched.channel.version != self._last_version:
                break
        self._last_version = self.sched.channel.version
        rb = self._reward_acc
        if self.record:
            self.records.append(StepRecord(t_decision, p_decision, v_decision, action.copy(), rb, aoi_at_decision))
        info = {"status": self.status, "reward": rb}
        return self._decision(), rb.total, self.status.terminal, info
