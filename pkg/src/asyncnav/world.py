"""Obstacle forest, vehicle kinematics and a raycast LiDAR.

Obstacles are axis-aligned rectangular prisms spanning the whole flight
height, so collision and ray intersection reduce to 2D slab tests on their
footprints. The vehicle follows velocity commands through a first-order
lag; attitude is synthesized from the commanded acceleration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .pointcloud import PillarGridSpec

GRAVITY = 9.81

try:
    from ._raykernel import cast_rays_kernel as _kernel
except ImportError:  # numba missing: fall back to the vectorized numpy path
    _kernel = None


class GenerationError(RuntimeError):
    pass


class Status(str, Enum):
    RUNNING = "running"
    REACHED_GOAL = "reached_goal"
    COLLIDED = "collided"
    OUT_OF_BOUNDS = "out_of_bounds"
    TIMED_OUT = "timed_out"

    @property
    def terminal(self) -> bool:
        return self is not Status.RUNNING


# -- rotations ------------------------------------------------------------------

def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for intrinsic Z-Y-X (yaw, pitch, roll) angles."""
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    q = np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])
    return q / np.linalg.norm(q)


def quat_to_euler(q) -> tuple[float, float, float]:
    """(roll, pitch, yaw) of a unit quaternion, Z-Y-X convention."""
    w, x, y, z = (float(c) for c in q)
    roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = math.asin(max(-1.0, min(1.0, 2 * (w * y - z * x))))
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return roll, pitch, yaw


def quat_to_matrix(q) -> np.ndarray:
    """Body-to-world rotation matrix."""
    w, x, y, z = (float(c) for c in q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


# -- world ------------------------------------------------------------------------

@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float]
    half_extents: tuple[float, float]

    def __post_init__(self):
        if min(self.half_extents) <= 0:
            raise ValueError("half extents must be positive")


@dataclass(frozen=True)
class WorldConfig:
    path_length: float = 20.0
    margin: float = 2.0  # free run-up before the start and past the goal, along x
    width: float = 10.0
    altitude: float = 1.5
    ceiling: float = 4.0
    density: float = 0.2
    side_range: tuple[float, float] = (0.4, 0.6)
    clearance: float = 0.7  # start/goal keep-out radius (vehicle radius + margin)

    @property
    def area(self) -> tuple[float, float, float, float]:
        return (0.0, self.path_length + 2 * self.margin, -self.width / 2, self.width / 2)

    @property
    def start(self) -> np.ndarray:
        return np.array([self.margin, 0.0, self.altitude])

    @property
    def goal(self) -> np.ndarray:
        return np.array([self.margin + self.path_length, 0.0, self.altitude])


@dataclass
class ForestWorld:
    centers: np.ndarray  # (M, 2)
    half_extents: np.ndarray  # (M, 2)
    area: tuple[float, float, float, float]  # x0, x1, y0, y1
    start: np.ndarray
    goal: np.ndarray
    density: float
    bounds: tuple[float, float, float, float, float, float]  # area plus z_min_world, z_max_world
    rng_seed: Optional[int] = None

    @property
    def obstacles(self) -> list[Obstacle]:
        return [Obstacle(tuple(c), tuple(h)) for c, h in zip(self.centers.tolist(), self.half_extents.tolist())]

    @property
    def lo(self) -> np.ndarray:
        return self.centers - self.half_extents

    @property
    def hi(self) -> np.ndarray:
        return self.centers + self.half_extents

    def to_dict(self) -> dict:
        return {
            "area": list(self.area),
            "bounds": list(self.bounds),
            "seed": self.rng_seed,
            "density": self.density,
            "start": self.start.tolist(),
            "goal": self.goal.tolist(),
            "obstacles": [
                {"center": c, "half_extents": h}
                for c, h in zip(self.centers.tolist(), self.half_extents.tolist())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestWorld":
        obs = d["obstacles"]
        return cls(
            centers=np.array([o["center"] for o in obs], dtype=np.float64).reshape(-1, 2),
            half_extents=np.array([o["half_extents"] for o in obs], dtype=np.float64).reshape(-1, 2),
            area=tuple(d["area"]),
            start=np.array(d["start"], dtype=np.float64),
            goal=np.array(d["goal"], dtype=np.float64),
            density=float(d["density"]),
            bounds=tuple(d["bounds"]),
            rng_seed=d.get("seed"),
        )

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ForestWorld":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _disc_box_distance(p: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Distance from 2D point(s) to axis-aligned boxes; zero inside."""
    d = np.maximum(np.maximum(lo - p, p - hi), 0.0)
    return np.sqrt(np.sum(d * d, axis=-1))


def generate_forest(seed: int, density: float, side_range=(0.4, 0.6), area=(0.0, 24.0, -5.0, 5.0),
                    start=(2.0, 0.0, 1.5), goal=(22.0, 0.0, 1.5), clearance: float = 0.7,
                    ceiling: float = 4.0, max_tries: int = 1000) -> ForestWorld:
    """Scatter ``round(density * area)`` square-ish prisms uniformly over ``area``.

    Obstacles intruding on the start or goal keep-out disc are redrawn.
    """
    lo_side, hi_side = side_range
    if density < 0 or not (0 < lo_side <= hi_side):
        raise ValueError("need density >= 0 and 0 < side_lo <= side_hi")
    x0, x1, y0, y1 = area
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    for p in (start, goal):
        if not (x0 + clearance <= p[0] <= x1 - clearance and y0 + clearance <= p[1] <= y1 - clearance):
            raise GenerationError("area too small to hold start/goal with the requested clearance")
    rng = np.random.default_rng(seed)
    n = int(round(density * (x1 - x0) * (y1 - y0)))
    centers = np.empty((n, 2))
    halves = np.empty((n, 2))
    keep_out = np.stack([start[:2], goal[:2]])
    for k in range(n):
        for _ in range(max_tries):
            c = rng.uniform([x0, y0], [x1, y1])
            h = rng.uniform(lo_side, hi_side, size=2) / 2
            if np.all(_disc_box_distance(keep_out, c - h, c + h) >= clearance):
                break
        else:
            raise GenerationError("could not place obstacle clear of start/goal")
        centers[k], halves[k] = c, h
    return ForestWorld(centers, halves, (x0, x1, y0, y1), start, goal, density,
                       (x0, x1, y0, y1, 0.0, ceiling), seed)


def make_world(cfg: WorldConfig, seed: int) -> ForestWorld:
    return generate_forest(seed, cfg.density, cfg.side_range, cfg.area, cfg.start, cfg.goal,
                           cfg.clearance, cfg.ceiling)


# -- vehicle ----------------------------------------------------------------------

@dataclass
class VehicleState:
    p: np.ndarray
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        self.omega = np.asarray(self.omega, dtype=np.float64)


@dataclass(frozen=True)
class DynamicsParams:
    tau: float = 0.2
    tau_yaw: float = 0.3
    tau_att: float = 0.05
    tilt_max: float = 0.8
    min_yaw_speed: float = 0.1


def step_dynamics(state: VehicleState, v_cmd, dt: float, params: DynamicsParams = DynamicsParams()) -> VehicleState:
    """Advance the vehicle by ``dt`` under a body-frame velocity command.

    The command is rotated by the heading (yaw) only, so tilt does not leak
    into the climb rate.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    roll, pitch, yaw = quat_to_euler(state.q)
    v_target = yaw_matrix(yaw) @ np.asarray(v_cmd, dtype=np.float64)
    err = v_target - state.v
    v = state.v + err * min(1.0, dt / params.tau)
    p = state.p + v * dt

    new_yaw = yaw
    heading = np.array([math.cos(yaw), math.sin(yaw)])
    if math.hypot(v[0], v[1]) > params.min_yaw_speed and v[:2] @ heading > 0:
        new_yaw = wrap_angle(yaw + wrap_angle(math.atan2(v[1], v[0]) - yaw) * min(1.0, dt / params.tau_yaw))

    acc = err / params.tau
    c, s = math.cos(new_yaw), math.sin(new_yaw)
    a_fwd = c * acc[0] + s * acc[1]
    a_lat = -s * acc[0] + c * acc[1]
    lim = params.tilt_max
    pitch_t = min(lim, max(-lim, math.atan2(a_fwd, GRAVITY)))
    roll_t = min(lim, max(-lim, math.atan2(-a_lat, GRAVITY)))
    k = min(1.0, dt / params.tau_att)
    new_pitch = pitch + (pitch_t - pitch) * k
    new_roll = roll + (roll_t - roll) * k
    omega = np.array([new_roll - roll, new_pitch - pitch, wrap_angle(new_yaw - yaw)]) / dt
    return VehicleState(p, quat_from_euler(new_roll, new_pitch, new_yaw), v, omega, state.t + dt)


# -- sensing ----------------------------------------------------------------------

@dataclass(frozen=True)
class LidarModel:
    spec: PillarGridSpec = PillarGridSpec()
    noise_std: float = 0.0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    def directions(self) -> np.ndarray:
        """Unit ray directions in the body frame, one per pillar centre, row-major (phi, theta)."""
        return _pillar_directions(self.spec)


_DIR_CACHE: dict = {}


def _pillar_directions(spec: PillarGridSpec) -> np.ndarray:
    if spec not in _DIR_CACHE:
        th, ph = np.meshgrid(spec.theta_centers(), spec.phi_centers())
        s = np.sin(ph)
        d = np.stack([s * np.cos(th), s * np.sin(th), np.cos(ph)], axis=-1).reshape(-1, 3)
        d.setflags(write=False)
        _DIR_CACHE[spec] = d
    return _DIR_CACHE[spec]


def ring_directions(n: int) -> np.ndarray:
    a = 2 * math.pi * np.arange(n) / n - math.pi
    return np.stack([np.cos(a), np.sin(a), np.zeros(n)], axis=1)


def cast_rays(world: ForestWorld, origin, dirs: np.ndarray, max_range: float = math.inf,
              walls: bool = True) -> np.ndarray:
    """Exact hit distance of each world-frame unit ray; ``inf`` when nothing is hit within ``max_range``.

    Obstacle footprints are intersected with the 2D slab method; the operational
    box (side walls, floor, ceiling) bounds every ray from the inside.
    """
    o = np.asarray(origin, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    if _kernel is not None:
        lo, hi = world.lo, world.hi
        if len(lo) and math.isfinite(max_range):
            reach = max_range + np.hypot(world.half_extents[:, 0], world.half_extents[:, 1])
            near = np.hypot(world.centers[:, 0] - o[0], world.centers[:, 1] - o[1]) <= reach
            lo, hi = lo[near], hi[near]
        return _kernel(o, dirs, np.ascontiguousarray(lo).reshape(-1, 2), np.ascontiguousarray(hi).reshape(-1, 2),
                       np.asarray(world.bounds, dtype=np.float64), float(max_range), walls)
    return cast_rays_numpy(world, o, dirs, max_range, walls)


def cast_rays_numpy(world: ForestWorld, origin, dirs: np.ndarray, max_range: float = math.inf,
                    walls: bool = True) -> np.ndarray:
    o = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    dx = np.where(np.abs(dirs[:, 0]) < 1e-12, 1e-12, dirs[:, 0])
    dy = np.where(np.abs(dirs[:, 1]) < 1e-12, 1e-12, dirs[:, 1])
    best = np.full(len(dirs), math.inf)

    if len(world.centers):
        reach = max_range + np.hypot(world.half_extents[:, 0], world.half_extents[:, 1])
        near = np.hypot(world.centers[:, 0] - o[0], world.centers[:, 1] - o[1]) <= reach
        if np.any(near):
            lo = world.lo[near]
            hi = world.hi[near]
            inv_x = (1.0 / dx)[:, None]
            inv_y = (1.0 / dy)[:, None]
            tx1 = (lo[None, :, 0] - o[0]) * inv_x
            tx2 = (hi[None, :, 0] - o[0]) * inv_x
            ty1 = (lo[None, :, 1] - o[1]) * inv_y
            ty2 = (hi[None, :, 1] - o[1]) * inv_y
            t_near = np.maximum(np.minimum(tx1, tx2), np.minimum(ty1, ty2))
            t_far = np.minimum(np.maximum(tx1, tx2), np.maximum(ty1, ty2))
            hit = (t_near <= t_far) & (t_far >= 0)
            t = np.where(hit, np.maximum(t_near, 0.0), math.inf)
            best = t.min(axis=1)

    if walls:
        x0, x1, y0, y1, z0, z1 = world.bounds
        with np.errstate(divide="ignore", invalid="ignore"):
            for k, (a, b) in enumerate(((x0, x1), (y0, y1), (z0, z1))):
                d = dirs[:, k]
                t = np.where(d > 0, (b - o[k]) / d, np.where(d < 0, (a - o[k]) / d, math.inf))
                best = np.minimum(best, np.maximum(t, 0.0))
    best[best > max_range] = math.inf
    return best


def raycast_lidar(world: ForestWorld, state: VehicleState, model: LidarModel = LidarModel(),
                  rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Simulated scan as an (N, 3) body-frame point cloud; misses are omitted."""
    dirs_body = model.directions()
    dirs_world = dirs_body @ quat_to_matrix(state.q).T
    ranges = cast_rays(world, state.p, dirs_world, model.spec.r_max)
    hit = np.isfinite(ranges)
    r = ranges[hit]
    if model.noise_std > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_std > 0")
        r = np.maximum(r + rng.normal(0.0, model.noise_std, size=r.shape), 0.0)
    return dirs_body[hit] * r[:, None]


def lidar_image(world: ForestWorld, state: VehicleState, model: LidarModel = LidarModel(),
                rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Pseudo-image straight from ray ranges; equal to projecting :func:`raycast_lidar`'s cloud.

    Each ray sits at its pillar centre, so the binning step is the identity
    and the image can be filled without the spherical round trip.
    """
    dirs_world = model.directions() @ quat_to_matrix(state.q).T
    ranges = cast_rays(world, state.p, dirs_world, model.spec.r_max)
    if model.noise_std > 0:
        hit = np.isfinite(ranges)
        ranges[hit] = np.maximum(ranges[hit] + rng.normal(0.0, model.noise_std, size=hit.sum()), 0.0)
    ranges = np.minimum(ranges, model.spec.r_max)
    return ranges.reshape(model.spec.shape)


def safety_ranges(world: ForestWorld, state: VehicleState, n_beams: int = 36, max_range: float = 10.0) -> np.ndarray:
    """Noise-free horizontal ranges around the vehicle used by the proximity reward."""
    _, _, yaw = quat_to_euler(state.q)
    dirs = ring_directions(n_beams) @ yaw_matrix(yaw).T
    return np.minimum(cast_rays(world, state.p, dirs, max_range, walls=False), max_range)


# -- episode checks ----------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeLimits:
    goal_tol: float = 0.5
    vehicle_radius: float = 0.2
    t_max: float = 30.0


def check_collision(world: ForestWorld, state: VehicleState, vehicle_radius: float) -> bool:
    """True iff the vehicle disc strictly overlaps an obstacle footprint inside its height band."""
    if vehicle_radius < 0:
        raise ValueError("vehicle_radius must be non-negative")
    z0, z1 = world.bounds[4], world.bounds[5]
    if not len(world.centers) or not (z0 <= state.p[2] <= z1):
        return False
    d = _disc_box_distance(state.p[:2], world.lo, world.hi)
    return bool(np.any(d < vehicle_radius))


def out_of_bounds(world: ForestWorld, state: VehicleState) -> bool:
    x0, x1, y0, y1, z0, z1 = world.bounds
    x, y, z = state.p
    return not (x0 <= x <= x1 and y0 <= y <= y1 and z0 <= z <= z1)


def episode_status(world: ForestWorld, state: VehicleState, goal_tol: float = 0.5,
                   limits: EpisodeLimits = EpisodeLimits()) -> Status:
    if check_collision(world, state, limits.vehicle_radius):
        return Status.COLLIDED
    if out_of_bounds(world, state):
        return Status.OUT_OF_BOUNDS
    if np.linalg.norm(state.p - world.goal) < goal_tol:
        return Status.REACHED_GOAL
    if state.t >= limits.t_max:
        return Status.TIMED_OUT
    return Status.RUNNING


def initial_state(world: ForestWorld) -> VehicleState:
    return VehicleState(world.start.copy())


def with_time(state: VehicleState, t: float) -> VehicleState:
    return replace(state, t=t)
