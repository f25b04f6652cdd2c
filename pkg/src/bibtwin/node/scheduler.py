"""One-shot task scheduler run on each SAMPLE entry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

LAST = None


@dataclass(frozen=True)
class Task:
    offset_ms: int | None
    component: str
    description: str
    action: Callable[[float], None]


@dataclass(frozen=True)
class ExecutedTask:
    offset_ms: int | None
    component: str
    description: str
    at: float


class TaskSchedule:
    """Tasks run by earliest offset; equal offsets keep insertion order and
    ``LAST`` tasks run after everything else, at the latest offset used."""

    def __init__(self) -> None:
        self._tasks: list[Task] = []

    def add(self, offset_ms: int | None, component: str, description: str, action: Callable[[float], None]) -> None:
        if offset_ms is not None and offset_ms < 0:
            raise ValueError("offset must be >= 0")
        self._tasks.append(Task(offset_ms, component, description, action))

    def ordered(self) -> list[Task]:
        timed = sorted((t for t in self._tasks if t.offset_ms is not None), key=lambda t: t.offset_ms)
        return timed + [t for t in self._tasks if t.offset_ms is None]

    def run(self, start_s: float) -> list[ExecutedTask]:
        done = []
        last_ms = 0
        for task in self.ordered():
            ms = task.offset_ms if task.offset_ms is not None else last_ms
            last_ms = ms
            at = start_s + ms / 1000.0
            task.action(at)
            done.append(ExecutedTask(task.offset_ms, task.component, task.description, at))
        return done
