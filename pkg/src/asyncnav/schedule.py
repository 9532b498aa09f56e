"""Event-driven perception/control timeline with Age-of-Information bookkeeping.

Simulated time is kept as integer microseconds so that ages such as
0.23 - 0.20 come out exactly 0.03 rather than accumulating float error.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Union

import numpy as np

US_PER_S = 1_000_000


class CausalityError(ValueError):
    pass


def to_us(t: float) -> int:
    return int(round(t * US_PER_S))


def to_s(t_us: int) -> float:
    return t_us / US_PER_S


def compute_aoi(t_ctrl: float, t_meas: float) -> float:
    """Age upon decision ``t_ctrl - t_meas`` at microsecond resolution."""
    a, b = to_us(t_ctrl), to_us(t_meas)
    if a < b:
        raise CausalityError(f"decision at {t_ctrl} precedes measurement at {t_meas}")
    return to_s(a - b)


class EventType(IntEnum):
    # value doubles as the tie-break order at equal timestamps
    MEASUREMENT_DUE = 0
    FEATURE_READY = 1
    CONTROL_TICK = 2


@dataclass(frozen=True)
class ScheduleConfig:
    """Perception/control rates and processing latency.

    ``latency`` is either a constant in seconds or a ``(lo, hi)`` pair for a
    uniform draw per frame.
    """

    f_ctrl: float = 100.0
    f_perc: float = 10.0
    latency: Union[float, tuple[float, float]] = (0.02, 0.08)
    jitter_seed: int = 0

    def __post_init__(self):
        if not (self.f_perc > 0 and self.f_ctrl >= self.f_perc):
            raise ValueError("need f_ctrl >= f_perc > 0")
        lo, hi = self.latency_bounds
        if lo < 0 or hi < lo:
            raise ValueError("latency must be non-negative with lo <= hi")

    @property
    def latency_bounds(self) -> tuple[float, float]:
        if isinstance(self.latency, (tuple, list)):
            return float(self.latency[0]), float(self.latency[1])
        return float(self.latency), float(self.latency)

    @property
    def ctrl_period_us(self) -> int:
        return to_us(1.0 / self.f_ctrl)

    @property
    def perc_period_us(self) -> int:
        return to_us(1.0 / self.f_perc)

    @classmethod
    def synchronous(cls, f: float = 100.0, jitter_seed: int = 0) -> "ScheduleConfig":
        return cls(f_ctrl=f, f_perc=f, latency=0.0, jitter_seed=jitter_seed)


@dataclass
class PerceptionChannel:
    """One-slot latest-wins buffer between perception and control."""

    payload: Any = None
    t_meas_us: int = 0
    valid: bool = False
    version: int = 0

    @property
    def t_meas(self) -> float:
        return to_s(self.t_meas_us)

    def publish(self, payload: Any, t_meas: float, now: Optional[float] = None) -> bool:
        return self.publish_us(payload, to_us(t_meas), None if now is None else to_us(now))

    def publish_us(self, payload: Any, t_meas_us: int, now_us: Optional[int] = None) -> bool:
        """Store ``payload`` unless it is older than the current content. Returns True if stored."""
        if now_us is not None and t_meas_us > now_us:
            raise CausalityError("cannot publish a measurement from the future")
        if self.valid and t_meas_us < self.t_meas_us:
            return False
        self.payload = payload
        self.t_meas_us = t_meas_us
        self.valid = True
        self.version += 1
        return True

    def aoi_us(self, t_ctrl_us: int) -> int:
        if t_ctrl_us < self.t_meas_us:
            raise CausalityError("decision precedes measurement")
        return t_ctrl_us - self.t_meas_us


@dataclass(order=True)
class _Queued:
    t_us: int
    kind: int
    seq: int
    data: Any = field(compare=False, default=None)


class EventClock:
    """Time-ordered event queue; equal timestamps dispatch in :class:`EventType` order."""

    def __init__(self):
        self.now_us = 0
        self._queue: list[_Queued] = []
        self._seq = itertools.count()

    def schedule(self, t_us: int, kind: EventType, data: Any = None) -> None:
        if t_us < self.now_us:
            raise CausalityError("cannot schedule an event in the past")
        heapq.heappush(self._queue, _Queued(t_us, int(kind), next(self._seq), data))

    def peek(self) -> Optional[tuple[int, EventType]]:
        if not self._queue:
            return None
        head = self._queue[0]
        return head.t_us, EventType(head.kind)

    def pop(self) -> tuple[int, EventType, Any]:
        item = heapq.heappop(self._queue)
        self.now_us = item.t_us
        return item.t_us, EventType(item.kind), item.data

    def __len__(self) -> int:
        return len(self._queue)


class AsyncSchedule:
    """Drives measurement, feature-ready and control-tick events for one environment.

    The caller advances control tick by tick. Measurement callbacks receive
    the measurement time and return the perception payload, which becomes
    visible in :attr:`channel` once its processing latency has elapsed.
    """

    def __init__(self, cfg: ScheduleConfig, bootstrap: Any = None):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.jitter_seed)
        self.clock = EventClock()
        self.channel = PerceptionChannel()
        self.channel.publish_us(bootstrap, 0)
        self.tick = 0
        self._next_meas = 0
        self._lo_us, self._hi_us = (to_us(v) for v in cfg.latency_bounds)
        self.log: Optional[list[tuple[str, float]]] = None
        self._schedule_measurement()
        self.clock.schedule(0, EventType.CONTROL_TICK)

    def _schedule_measurement(self) -> None:
        t = round(self._next_meas * US_PER_S / self.cfg.f_perc)
        self.clock.schedule(t, EventType.MEASUREMENT_DUE)
        self._next_meas += 1

    def _sample_latency_us(self) -> int:
        if self._hi_us == self._lo_us:
            return self._lo_us
        return int(round(self.rng.uniform(self._lo_us, self._hi_us)))

    def tick_time_us(self, k: int) -> int:
        return round(k * US_PER_S / self.cfg.f_ctrl)

    def advance(self, measure: Callable[[int], Any], before_tick: Callable[[int], None] = None) -> int:
        """Process events up to and including the next control tick; return its time in us.

        ``before_tick(t_us)`` is called once the next tick's time is known but
        before any event at that time is processed; measurements due strictly
        earlier are handled first. Environments use it to step physics.
        """
        stepped = False
        while True:
            t_us, kind = self.clock.peek()
            if before_tick is not None and not stepped and (
                kind == EventType.CONTROL_TICK or t_us >= self.tick_time_us(self.tick)
            ):
                before_tick(self.tick_time_us(self.tick))
                stepped = True
            t_us, kind, data = self.clock.pop()
            if self.log is not None:
                self.log.append((kind.name.lower(), to_s(t_us)))
            if kind == EventType.MEASUREMENT_DUE:
                payload = measure(t_us)
                self.clock.schedule(t_us + self._sample_latency_us(), EventType.FEATURE_READY, (t_us, payload))
                self._schedule_measurement()
            elif kind == EventType.FEATURE_READY:
                t_meas, payload = data
                self.channel.publish_us(payload, t_meas, t_us)
            else:
                self.tick += 1
                self.clock.schedule(self.tick_time_us(self.tick), EventType.CONTROL_TICK)
                return t_us


@dataclass
class Timeline:
    events: list[tuple[str, float]]
    aoi: list[tuple[float, float]]  # (t_ctrl, delta_t)


def run_timeline(cfg: ScheduleConfig, horizon: float) -> Timeline:
    """Simulate the schedule alone for ``horizon`` seconds and record AoI at every control tick."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    sched = AsyncSchedule(cfg, bootstrap="bootstrap")
    sched.log = []
    horizon_us = to_us(horizon)
    aoi = []
    while sched.tick_time_us(sched.tick) < horizon_us:
        t_us = sched.advance(lambda t: ("frame", t))
        aoi.append((to_s(t_us), to_s(sched.channel.aoi_us(t_us))))
    return Timeline(sched.log, aoi)


def write_aoi_trace(path: Union[str, Path], trace: Iterable[tuple[float, float]]) -> None:
    with open(path, "w") as fh:
        for t, dt in trace:
            fh.write(f"{t!r} {dt!r}\n")


def read_aoi_trace(path: Union[str, Path]) -> list[tuple[float, float]]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                t, dt = line.split()
                out.append((float(t), float(dt)))
    return out
