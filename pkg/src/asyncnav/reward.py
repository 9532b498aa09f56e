"""Dense shaping terms, terminal rewards and their weighted combination."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .world import Status, quat_to_euler


@dataclass(frozen=True)
class SafetyParams:
    L_s: float = 1.5
    k: float = 6.0
    c: float = 0.5
    q: float = 0.1

    def __post_init__(self):
        if not (self.L_s > 0 and self.k > 0 and 0 < self.c < 1 and 0 < self.q < 1):
            raise ValueError(f"invalid safety parameters {self}")
        if not math.tanh(-self.k * self.c) + 1 > 0:
            raise ValueError("tanh(-k*c) + 1 must be positive")


@dataclass(frozen=True)
class VelocityParams:
    k_v1: float = 0.6
    k_v2: float = 1.4
    sigma: float = 0.3

    def __post_init__(self):
        if not (0 < self.k_v1 < 1 < self.k_v2 and self.sigma > 0):
            raise ValueError(f"invalid velocity parameters {self}")


@dataclass(frozen=True)
class CorridorParams:
    z_min: float = 0.8
    z_max: float = 2.5
    alpha_max: float = 0.6

    def __post_init__(self):
        if not (self.z_min < self.z_max and 0 < self.alpha_max < math.pi / 2):
            raise ValueError(f"invalid corridor parameters {self}")


@dataclass(frozen=True)
class RewardWeights:
    w_static: float = 1.0
    w_velocity: float = 0.5
    w_height: float = 0.5
    w_attitude: float = 0.2
    r_goal: float = 20.0
    r_collision: float = -20.0
    r_limit: float = -10.0
    gamma: float = 0.99

    def __post_init__(self):
        if not (self.r_goal > 0 and self.r_collision < 0 and self.r_limit < 0 and 0 < self.gamma < 1):
            raise ValueError(f"invalid reward weights {self}")


@dataclass(frozen=True)
class RewardConfig:
    safety: SafetyParams = SafetyParams()
    velocity: VelocityParams = VelocityParams()
    corridor: CorridorParams = CorridorParams()
    weights: RewardWeights = RewardWeights()


@dataclass
class RewardBreakdown:
    r_static: float
    r_velocity: float
    r_height: float
    r_attitude: float
    r_terminal: float
    total: float

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def static_safety(beam_ranges, p: SafetyParams = SafetyParams()) -> float:
    """Lower quantile over beams of ``log(tanh(k (min(d, L_s)/L_s - c)) + 1)``."""
    d = np.asarray(beam_ranges, dtype=np.float64).ravel()
    if d.size == 0:
        raise ValueError("static_safety needs at least one beam")
    if np.any(d < 0):
        raise ValueError("beam ranges must be non-negative")
    y = p.k * (np.minimum(d, p.L_s) / p.L_s - p.c)
    # log(tanh(y) + 1) written as log 2 - log(1 + exp(-2y)), which avoids cancellation for y << 0
    log_p = np.sort(math.log(2.0) - np.logaddexp(0.0, -2.0 * y))
    return float(log_p[int(math.floor(p.q * (d.size - 1)))])


def velocity_reward(v, g_hat, v_des: float, p: VelocityParams = VelocityParams()) -> float:
    v = np.asarray(v, dtype=np.float64)
    speed = float(np.linalg.norm(v))
    lo, hi = p.k_v1 * v_des, p.k_v2 * v_des
    r = float(v @ np.asarray(g_hat, dtype=np.float64))
    r -= max(0.0, speed - hi) ** 2
    r -= max(0.0, lo - speed) ** 2
    if lo <= speed <= hi:
        r += math.exp(-((speed - v_des) ** 2) / (2 * p.sigma**2))
    return r


def height_penalty(z: float, p: CorridorParams = CorridorParams()) -> float:
    return -max(0.0, z - p.z_max) ** 2 - max(0.0, p.z_min - z) ** 2


def attitude_penalty(q, p: CorridorParams = CorridorParams()) -> float:
    roll, pitch, _ = quat_to_euler(q)
    return -max(0.0, abs(pitch) - p.alpha_max) ** 2 - max(0.0, abs(roll) - p.alpha_max) ** 2


def terminal_reward(status: Status, w: RewardWeights = RewardWeights()) -> float:
    if status == Status.REACHED_GOAL:
        return w.r_goal
    if status == Status.COLLIDED:
        return w.r_collision
    if status == Status.OUT_OF_BOUNDS:
        return w.r_limit
    return 0.0


def total_reward(r_static: float, r_velocity: float, r_height: float, r_attitude: float,
                 status: Status = Status.RUNNING, w: RewardWeights = RewardWeights()) -> RewardBreakdown:
    """Weighted dense sum plus the terminal reward. Dense terms count on terminal steps too."""
    r_t = terminal_reward(status, w)
    total = (w.w_static * r_static + w.w_velocity * r_velocity
             + w.w_height * r_height + w.w_attitude * r_attitude + r_t)
    return RewardBreakdown(r_static, r_velocity, r_height, r_attitude, r_t, total)


def step_reward(beam_ranges, v, p, goal, q, v_des: float, status: Status,
                cfg: RewardConfig = RewardConfig()) -> RewardBreakdown:
    """All reward terms for one control step from raw simulator quantities."""
    to_goal = np.asarray(goal, dtype=np.float64) - np.asarray(p, dtype=np.float64)
    dist = float(np.linalg.norm(to_goal))
    g_hat = to_goal / dist if dist > 0 else np.zeros(3)
    return total_reward(
        static_safety(beam_ranges, cfg.safety),
        velocity_reward(v, g_hat, v_des, cfg.velocity),
        height_penalty(float(p[2]), cfg.corridor),
        attitude_penalty(q, cfg.corridor),
        status,
        cfg.weights,
    )
