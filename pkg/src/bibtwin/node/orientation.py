from __future__ import annotations

from dataclasses import dataclass

from ..wire import Axis


@dataclass(frozen=True)
class Orientation:
    axis: Axis
    sign: int


def dominant_orientation(accel_g: tuple[float, float, float]) -> Orientation:
    """Axis with the largest magnitude; exact ties go to x, then y, then z."""
    best = 0
    for i in (1, 2):
        if abs(accel_g[i]) > abs(accel_g[best]):
            best = i
    return Orientation(Axis(best), 1 if accel_g[best] >= 0 else -1)


class OrientationTracker:
    def __init__(self, initial: Orientation | None = None):
        self.current = initial

    def check(self, accel_g: tuple[float, float, float]) -> Orientation | None:
        """New orientation if it differs from the stored one; updates the store."""
        seen = dominant_orientation(accel_g)
        if seen == self.current:
            return None
        self.current = seen
        return seen
