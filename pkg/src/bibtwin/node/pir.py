"""PIR occupancy percentage and debounced occupancy-state events.

Time is counted in ticks of 1/256 s. Tick period ``k`` covers
``[k/256, (k+1)/256)`` and takes the level of the last edge at or before
``k``.
"""

from __future__ import annotations

from dataclasses import dataclass

TICKS_PER_SECOND = 256
DEBOUNCE_TICKS = 10 * TICKS_PER_SECOND


class PirOrderError(ValueError):
    pass


@dataclass(frozen=True)
class OccEvent:
    tick: int
    state: int


@dataclass
class PirState:
    high_ticks: int = 0
    reported_state: int = 0
    # start of the LOW run that can clear a reported 1; None before the first
    # HIGH, which counts as LOW for longer than the debounce window
    opposite_since: int | None = None
    level: int = 0
    counted_to: int = 0
    last_edge: int = -1

    def advance(self, tick: int) -> None:
        """Account the periods in ``[counted_to, tick)`` at the current level."""
        if tick > self.counted_to:
            if self.level:
                self.high_ticks += tick - self.counted_to
            self.counted_to = tick

    @property
    def deadline(self) -> int | None:
        """Tick at which a pending clear-to-0 event fires, if any."""
        if self.reported_state == 1 and self.level == 0 and self.opposite_since is not None:
            return self.opposite_since + DEBOUNCE_TICKS
        return None


def pir_poll(pir: PirState, tick: int) -> OccEvent | None:
    """Fire the debounce timer if it is due at or before ``tick``."""
    due = pir.deadline
    if due is not None and due <= tick:
        pir.reported_state = 0
        return OccEvent(due, 0)
    return None


def pir_process(pir: PirState, level: int, tick: int) -> list[OccEvent]:
    """Apply one signal edge.

    Any clear-to-0 that fell due at or before the edge is emitted first, so a
    rising edge exactly 10 s after the fall yields ``[0, 1]``.
    """
    if tick <= pir.last_edge or tick < pir.counted_to:
        raise PirOrderError(f"edge at tick {tick} after edge {pir.last_edge} / counted to {pir.counted_to}")
    events = []
    timer = pir_poll(pir, tick)
    if timer is not None:
        events.append(timer)
    pir.advance(tick)
    pir.last_edge = tick
    level = 1 if level else 0
    if level == pir.level:
        return events
    if level:
        low_long = pir.opposite_since is None or tick - pir.opposite_since >= DEBOUNCE_TICKS
        if pir.reported_state == 0 and low_long:
            pir.reported_state = 1
            events.append(OccEvent(tick, 1))
    else:
        pir.opposite_since = tick
    pir.level = level
    return events


def occupancy_fraction(high_ticks: int, window_ticks: int) -> int:
    """HIGH share of the window scaled to 0..255, rounded half up."""
    return (2 * 255 * high_ticks + window_ticks) // (2 * window_ticks)


def take_occupancy(pir: PirState, tick: int, window_ticks: int) -> int:
    """Close the window ending at ``tick``, return its fraction and reset the counter."""
    pir.advance(tick)
    frac = occupancy_fraction(pir.high_ticks, window_ticks)
    pir.high_ticks = 0
    return frac
