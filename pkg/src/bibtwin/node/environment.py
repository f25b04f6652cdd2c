"""Deterministic stand-ins for the physical room around a node."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from ..wire import Axis
from .orientation import Orientation
from .pir import TICKS_PER_SECOND

DAY_S = 86400.0


class Environment(Protocol):
    def temperature(self, t: float) -> float: ...

    def humidity(self, t: float) -> float: ...

    def illuminance(self, t: float) -> float: ...

    def acceleration(self, t: float) -> tuple[float, float, float]: ...

    def pir_edges(self, after_tick: int, upto_tick: int) -> list[tuple[int, int]]:
        """Signal edges ``(tick, level)`` with ``after_tick < tick <= upto_tick``."""
        ...

    def orientation_changes(self, after_tick: int, upto_tick: int) -> list[int]: ...


class _KnotNoise:
    """Piecewise-linear noise through seeded standard-normal knots."""

    def __init__(self, seed: int, stream: int, spacing_s: float):
        self.seed = seed
        self.stream = stream
        self.spacing = spacing_s
        self._knots: dict[int, float] = {}

    def _knot(self, k: int) -> float:
        v = self._knots.get(k)
        if v is None:
            v = float(np.random.default_rng([self.seed, self.stream, k & 0xFFFFFFFF]).standard_normal())
            self._knots[k] = v
        return v

    def __call__(self, t: float) -> float:
        x = t / self.spacing
        k = math.floor(x)
        frac = x - k
        return self._knot(k) * (1 - frac) + self._knot(k + 1) * frac


def _edges_in(edges: Sequence[tuple[int, int]], after: int, upto: int) -> list[tuple[int, int]]:
    lo = bisect.bisect_right(edges, (after, 2))
    hi = bisect.bisect_right(edges, (upto, 2))
    return list(edges[lo:hi])


@dataclass
class VirtualEnvironment:
    """Seeded office-like room: slow thermal drift, daylight plus room lights,
    occupancy episodes with a glitchy PIR, and rare orientation flips."""

    seed: int = 0
    base_temp_c: float = 22.0
    base_rh_pct: float = 45.0
    vacant_mean_s: float = 1200.0
    occupied_mean_s: float = 900.0
    glitches: bool = True
    glitch_gap_mean_s: float = 25.0
    glitch_max_s: float = 6.0
    orientation_change_mean_s: float = 4 * 3600.0
    initial_orientation: Orientation = Orientation(Axis.Z, 1)

    _presence: list[int] = field(default_factory=list, init=False, repr=False)  # toggle ticks, first = occupied
    _edges: list[tuple[int, int]] = field(default_factory=list, init=False, repr=False)
    _horizon: int = field(default=0, init=False, repr=False)
    _orient_ticks: list[int] = field(default_factory=list, init=False, repr=False)
    _orients: list[Orientation] = field(default_factory=list, init=False, repr=False)
    _orient_horizon: int = field(default=0, init=False, repr=False)

    def __post_init__(self) -> None:
        self._temp_noise = _KnotNoise(self.seed, 1, 1800.0)
        self._rh_noise = _KnotNoise(self.seed, 2, 1800.0)
        self._lux_noise = _KnotNoise(self.seed, 3, 900.0)
        self._acc_noise = [_KnotNoise(self.seed, 4 + i, 600.0) for i in range(3)]
        self._presence_rng = np.random.default_rng([self.seed, 100])
        self._orient_rng = np.random.default_rng([self.seed, 200])
        misc = np.random.default_rng([self.seed, 300])
        self._phase = float(misc.uniform(0, 2 * math.pi))
        # zero-g offset of each accelerometer axis, kept away from 0 so the
        # reading never flips sign on noise
        self._acc_offset = [float(misc.choice([-1, 1]) * misc.uniform(0.012, 0.040)) for _ in range(3)]
        self._orients.append(self.initial_orientation)
        self._orient_ticks.append(-1)

    # occupancy timeline ---------------------------------------------------

    def _extend_presence(self, tick: int) -> None:
        rng = self._presence_rng
        while self._horizon <= tick:
            start = self._horizon + int(max(30.0, rng.exponential(self.vacant_mean_s)) * TICKS_PER_SECOND)
            end = start + int(max(30.0, rng.exponential(self.occupied_mean_s)) * TICKS_PER_SECOND)
            self._presence += [start, end]
            self._edges.append((start, 1))
            if self.glitches:
                g = start
                while True:
                    g += int(rng.exponential(self.glitch_gap_mean_s) * TICKS_PER_SECOND) + TICKS_PER_SECOND
                    width = int(rng.uniform(0.05, self.glitch_max_s) * TICKS_PER_SECOND) + 1
                    if g + width + TICKS_PER_SECOND >= end:
                        break
                    self._edges += [(g, 0), (g + width, 1)]
                    g += width
            self._edges.append((end, 0))
            self._horizon = end

    def presence(self, t: float) -> bool:
        tick = int(math.floor(t * TICKS_PER_SECOND))
        self._extend_presence(tick + 1)
        return bisect.bisect_right(self._presence, tick) % 2 == 1

    def pir_edges(self, after_tick: int, upto_tick: int) -> list[tuple[int, int]]:
        self._extend_presence(upto_tick + 1)
        return _edges_in(self._edges, after_tick, upto_tick)

    # orientation timeline -------------------------------------------------

    def _extend_orientation(self, tick: int) -> None:
        rng = self._orient_rng
        while self._orient_horizon <= tick:
            gap = int(max(600.0, rng.exponential(self.orientation_change_mean_s)) * TICKS_PER_SECOND)
            self._orient_horizon += gap
            current = self._orients[-1]
            choices = [Orientation(a, s) for a in Axis for s in (1, -1) if Orientation(a, s) != current]
            self._orients.append(choices[int(rng.integers(len(choices)))])
            self._orient_ticks.append(self._orient_horizon)

    def orientation_at(self, t: float) -> Orientation:
        tick = int(math.floor(t * TICKS_PER_SECOND))
        self._extend_orientation(tick + 1)
        return self._orients[bisect.bisect_right(self._orient_ticks, tick) - 1]

    def orientation_changes(self, after_tick: int, upto_tick: int) -> list[int]:
        self._extend_orientation(upto_tick + 1)
        lo = bisect.bisect_right(self._orient_ticks, after_tick)
        hi = bisect.bisect_right(self._orient_ticks, upto_tick)
        return [t for t in self._orient_ticks[lo:hi] if t >= 0]

    # analog signals -------------------------------------------------------

    def temperature(self, t: float) -> float:
        diurnal = 1.5 * math.sin(2 * math.pi * t / DAY_S + self._phase)
        return self.base_temp_c + diurnal + 0.25 * self._temp_noise(t)

    def humidity(self, t: float) -> float:
        diurnal = -4.0 * math.sin(2 * math.pi * t / DAY_S + self._phase)
        return min(100.0, max(0.0, self.base_rh_pct + diurnal + 0.6 * self._rh_noise(t)))

    def illuminance(self, t: float) -> float:
        daylight = max(0.0, 250.0 * math.sin(2 * math.pi * t / DAY_S + self._phase))
        lights = 320.0 if self.presence(t) else 0.0
        return max(0.0, daylight + lights + 6.0 * self._lux_noise(t))

    def acceleration(self, t: float) -> tuple[float, float, float]:
        o = self.orientation_at(t)
        g = [0.0, 0.0, 0.0]
        g[int(o.axis)] = float(o.sign)
        return tuple(g[i] + self._acc_offset[i] + 0.0008 * self._acc_noise[i](t) for i in range(3))  # type: ignore[return-value]


@dataclass
class ScriptedEnvironment:
    """Constant analog readings with explicit PIR edges and orientation flips."""

    temp_c: float = 21.5
    rh_pct: float = 40.0
    lux: float = 300.0
    edges: list[tuple[int, int]] = field(default_factory=list)
    flips: list[tuple[int, Orientation]] = field(default_factory=list)
    initial_orientation: Orientation = Orientation(Axis.Z, 1)

    def temperature(self, t: float) -> float:
        return self.temp_c

    def humidity(self, t: float) -> float:
        return self.rh_pct

    def illuminance(self, t: float) -> float:
        return self.lux

    def orientation_at(self, t: float) -> Orientation:
        tick = t * TICKS_PER_SECOND
        current = self.initial_orientation
        for flip_tick, o in self.flips:
            if flip_tick <= tick:
                current = o
        return current

    def acceleration(self, t: float) -> tuple[float, float, float]:
        o = self.orientation_at(t)
        g = [0.0, 0.0, 0.0]
        g[int(o.axis)] = float(o.sign)
        return (g[0], g[1], g[2])

    def pir_edges(self, after_tick: int, upto_tick: int) -> list[tuple[int, int]]:
        return _edges_in(sorted(self.edges), after_tick, upto_tick)

    def orientation_changes(self, after_tick: int, upto_tick: int) -> list[int]:
        return [tick for tick, _ in self.flips if after_tick < tick <= upto_tick]

    def level_at(self, tick: int) -> int:
        level = 0
        for e, lv in sorted(self.edges):
            if e > tick:
                break
            level = lv
        return level
