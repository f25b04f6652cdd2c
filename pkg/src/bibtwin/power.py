"""Average-current and battery-lifetime model for a duty-cycled node.

Charges per sample and per report are in microamp-seconds, so dividing by
the interval in seconds gives the average contribution in microamps.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

HOURS_PER_YEAR = 8766.0  # Julian year


@dataclass(frozen=True)
class PowerProfile:
    sleep_floor_uA: float = 8.0
    pir_static_uA: float = 46.0
    sensing_charge_per_sample_uAs: float = 110.0
    processing_charge_per_sample_uAs: float = 470.0
    comms_charge_per_report_uAs: float = 3360.0

    def __post_init__(self) -> None:
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")


@dataclass(frozen=True)
class BatterySpec:
    nominal_capacity_Ah: float = 9.0
    anchors: tuple[tuple[float, float], ...] = ((100.0, 8.0), (168.0, 8.03))

    def __post_init__(self) -> None:
        if not self.anchors:
            raise ValueError("at least one derating anchor is required")
        currents = [a[0] for a in self.anchors]
        if currents != sorted(currents):
            raise ValueError("anchors must be sorted by current")
        if any(cap > self.nominal_capacity_Ah for _, cap in self.anchors):
            raise ValueError("anchor capacity exceeds nominal capacity")


@dataclass(frozen=True)
class CurrentBreakdown:
    comms_uA: float
    sensing_uA: float
    processing_uA: float
    sleep_uA: float
    total_uA: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "total_uA", self.comms_uA + self.sensing_uA + self.processing_uA + self.sleep_uA
        )


def _check_intervals(sample_interval_s: float, report_interval_s: float) -> None:
    if sample_interval_s < 1 or report_interval_s < 1:
        raise ValueError("intervals must be >= 1 s")
    if report_interval_s < sample_interval_s:
        raise ValueError(
            f"report interval {report_interval_s} s shorter than sample interval {sample_interval_s} s"
        )


def avg_current(profile: PowerProfile, sample_interval_s: float, report_interval_s: float) -> CurrentBreakdown:
    _check_intervals(sample_interval_s, report_interval_s)
    return CurrentBreakdown(
        comms_uA=profile.comms_charge_per_report_uAs / report_interval_s,
        sensing_uA=profile.pir_static_uA + profile.sensing_charge_per_sample_uAs / sample_interval_s,
        processing_uA=profile.processing_charge_per_sample_uAs / sample_interval_s,
        sleep_uA=profile.sleep_floor_uA,
    )


def effective_capacity(battery: BatterySpec, avg_current_uA: float) -> float:
    """Usable capacity in Ah at a given average draw.

    Linear between anchors, flat outside them, never above nominal.
    """
    if avg_current_uA <= 0:
        raise ValueError("average current must be positive")
    xs = [a[0] for a in battery.anchors]
    ys = [a[1] for a in battery.anchors]
    cap = float(np.interp(avg_current_uA, xs, ys))
    return min(max(cap, min(ys)), battery.nominal_capacity_Ah)


@dataclass(frozen=True)
class Lifetime:
    years: float
    capacity_Ah: float
    current: CurrentBreakdown


def lifetime_years(
    profile: PowerProfile,
    battery: BatterySpec,
    sample_interval_s: float,
    report_interval_s: float,
) -> Lifetime:
    current = avg_current(profile, sample_interval_s, report_interval_s)
    cap = effective_capacity(battery, current.total_uA)
    hours = cap / (current.total_uA * 1e-6)
    return Lifetime(hours / HOURS_PER_YEAR, cap, current)


DEFAULT_SAMPLE_GRID = (1, 2, 5, 10, 15, 30, 60, 120, 300, 600)
DEFAULT_REPORT_GRID = (10, 15, 30, 60, 120, 300, 600, 900, 1800, 3600)


@dataclass
class LifetimeSurface:
    sample_grid: list[float]
    report_grid: list[float]
    years: np.ndarray  # rows = sample intervals, cols = report intervals; NaN where infeasible

    def cell(self, sample_interval_s: float, report_interval_s: float) -> float | None:
        value = self.years[self.sample_grid.index(sample_interval_s), self.report_grid.index(report_interval_s)]
        return None if np.isnan(value) else float(value)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("sample_s\\report_s," + ",".join(_fmt_interval(r) for r in self.report_grid) + "\n")
        for i, s in enumerate(self.sample_grid):
            cells = ["" if np.isnan(v) else f"{v:.3f}" for v in self.years[i]]
            buf.write(_fmt_interval(s) + "," + ",".join(cells) + "\n")
        return buf.getvalue()


def _fmt_interval(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def parse_surface_csv(text: str) -> LifetimeSurface:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    report_grid = [float(x) for x in lines[0].split(",")[1:]]
    sample_grid, rows = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        sample_grid.append(float(parts[0]))
        rows.append([float(x) if x else np.nan for x in parts[1:]])
    return LifetimeSurface(sample_grid, report_grid, np.array(rows, dtype=float))


def lifetime_surface(
    profile: PowerProfile,
    battery: BatterySpec,
    sample_grid: Sequence[float] = DEFAULT_SAMPLE_GRID,
    report_grid: Sequence[float] = DEFAULT_REPORT_GRID,
) -> LifetimeSurface:
    if not sample_grid or not report_grid:
        raise ValueError("sample and report grids must be non-empty")
    years = np.full((len(sample_grid), len(report_grid)), np.nan)
    for i, s in enumerate(sample_grid):
        for j, r in enumerate(report_grid):
            if r >= s:
                years[i, j] = lifetime_years(profile, battery, s, r).years
    return LifetimeSurface(list(sample_grid), list(report_grid), years)
