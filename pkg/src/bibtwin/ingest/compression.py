"""Per-stream deadband (exception) filter and swinging-door compression."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..flatfile import EVENT_STREAMS, SAMPLE_STREAMS

Point = tuple[float, float]

# keeps float rounding in the corridor test from nudging an error past comp_dev
_CORRIDOR_SAFETY = 1e-9


@dataclass(frozen=True)
class CompressionSettings:
    exc_dev: float = 0.0
    exc_max_s: float = 3600.0
    comp_dev: float = 0.0
    comp_max_s: float = 3600.0

    def __post_init__(self) -> None:
        for name in ("exc_dev", "exc_max_s", "comp_dev", "comp_max_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


PASS_THROUGH = CompressionSettings()

DEFAULT_SETTINGS: dict[str, CompressionSettings] = {
    "temp": CompressionSettings(0.05, 3600, 0.1, 3600),
    "rh": CompressionSettings(0.2, 3600, 0.5, 3600),
    "lux": CompressionSettings(2, 3600, 5, 3600),
    "ax": CompressionSettings(0.01, 3600, 0.02, 3600),
    "ay": CompressionSettings(0.01, 3600, 0.02, 3600),
    "az": CompressionSettings(0.01, 3600, 0.02, 3600),
    "occ_pct": CompressionSettings(0.5, 3600, 1.0, 3600),
    "occ": PASS_THROUGH,
    "ori": PASS_THROUGH,
}


def zero_settings() -> dict[str, CompressionSettings]:
    return {name: PASS_THROUGH for name in DEFAULT_SETTINGS}


def parse_settings(text: str, base: dict[str, CompressionSettings] | None = None) -> dict[str, CompressionSettings]:
    """Read per-stream overrides.

    Accepts ``[stream]`` sections with ``key = value`` lines, or bare
    ``stream.key = value`` lines; the section ``[*]`` applies to every
    sampled stream. Event streams always stay pass-through.
    """
    settings = dict(DEFAULT_SETTINGS if base is None else base)
    entries: list[tuple[str, str, str]] = []
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith(("#", ";")):
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            continue
        if "=" not in s:
            raise ValueError(f"line {no}: expected key = value")
        key, value = (x.strip() for x in s.split("=", 1))
        if section is None:
            stream, dot, attr = key.partition(".")
            if not dot:
                raise ValueError(f"line {no}: expected stream.key = value outside a section")
        else:
            stream, attr = section, key
        entries.append((stream, attr, value))
    fields_ = {"exc_dev", "exc_max_s", "comp_dev", "comp_max_s"}
    for stream, attr, value in entries:
        if attr not in fields_:
            raise ValueError(f"unknown setting {stream}.{attr}")
        targets = SAMPLE_STREAMS if stream == "*" else (stream,)
        for name in targets:
            if name not in DEFAULT_SETTINGS:
                raise ValueError(f"unknown stream {name!r}")
            if name in EVENT_STREAMS:
                raise ValueError(f"event stream {name!r} is never filtered")
            settings[name] = replace(settings[name], **{attr: float(value)})
    return settings


@dataclass
class ExceptionState:
    last: Point | None = None
    dedup: int = 0
    conflicts: int = 0
    stale: int = 0


def exception_filter(state: ExceptionState, t: float, v: float, settings: CompressionSettings) -> bool:
    """True if the point passes the deadband.

    A point at the same time as the last passed one is a duplicate (same
    value) or a conflict (different value); an earlier time is stale. All
    three are dropped. ``exc_dev == 0`` lets every new timestamp through.
    """
    last = state.last
    if last is not None:
        lt, lv = last
        if t == lt:
            if v == lv:
                state.dedup += 1
            else:
                state.conflicts += 1
            return False
        if t < lt:
            state.stale += 1
            return False
        if settings.exc_dev > 0 and abs(v - lv) <= settings.exc_dev and (t - lt) < settings.exc_max_s:
            return False
    state.last = (t, v)
    return True


@dataclass
class DoorState:
    archived: Point | None = None
    held: Point | None = None
    lo: float = float("-inf")  # corridor slopes from the archived point
    hi: float = float("inf")
    rejected: int = 0
    out: list[Point] = field(default_factory=list, repr=False)

    def _archive(self, p: Point) -> None:
        self.archived = p
        self.held = None
        self.lo, self.hi = float("-inf"), float("inf")
        self.out.append(p)

    def _hold(self, p: Point, dev: float) -> None:
        ta, va = self.archived  # type: ignore[misc]
        dt = p[0] - ta
        self.held = p
        self.lo = max(self.lo, (p[1] - dev - va) / dt)
        self.hi = min(self.hi, (p[1] + dev - va) / dt)


def swinging_door(state: DoorState, t: float, v: float, settings: CompressionSettings) -> list[Point]:
    """Feed one point; returns the points archived because of it.

    Linear interpolation between archived points stays within ``comp_dev``
    of every accepted input point.
    """
    state.out = []
    p = (t, v)
    if state.archived is None:
        state._archive(p)
        return state.out
    latest = state.held[0] if state.held is not None else state.archived[0]
    if t <= latest:
        state.rejected += 1
        return state.out
    dev = settings.comp_dev * (1 - _CORRIDOR_SAFETY)
    if settings.comp_dev == 0:
        state._archive(p)
        return state.out
    ta, va = state.archived
    if state.held is not None:
        slope = (v - va) / (t - ta)
        if t - ta > settings.comp_max_s or not state.lo <= slope <= state.hi:
            state._archive(state.held)
            ta = state.archived[0]
    if t - ta > settings.comp_max_s:
        state._archive(p)
    else:
        state._hold(p, dev)
    return state.out


def door_flush(state: DoorState) -> list[Point]:
    """Archive the held point, if any (end of an ingested file)."""
    state.out = []
    if state.held is not None:
        state._archive(state.held)
    return state.out


def compress_series(points: list[Point], settings: CompressionSettings) -> list[Point]:
    """Exception filter then swinging door over a whole series, flushed."""
    exc, door = ExceptionState(), DoorState()
    out: list[Point] = []
    for t, v in points:
        if exception_filter(exc, t, v, settings):
            out += swinging_door(door, t, v, settings)
    out += door_flush(door)
    return out
