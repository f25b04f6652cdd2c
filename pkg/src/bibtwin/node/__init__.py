"""Simulated sensor node: firmware state machine, sampling schedule, PIR and orientation logic."""

from .environment import Environment, ScriptedEnvironment, VirtualEnvironment
from .firmware import (
    FsmState,
    Node,
    NodeConfig,
    NodeCounters,
    NodeState,
    ReportOutcome,
    StepResult,
    TcpTransport,
    Transition,
)
from .orientation import Orientation, OrientationTracker, dominant_orientation
from .pir import DEBOUNCE_TICKS, TICKS_PER_SECOND, OccEvent, PirState, pir_poll, pir_process, take_occupancy
from .scheduler import LAST, TaskSchedule

__all__ = [
    "DEBOUNCE_TICKS",
    "Environment",
    "FsmState",
    "LAST",
    "Node",
    "NodeConfig",
    "NodeCounters",
    "NodeState",
    "OccEvent",
    "Orientation",
    "OrientationTracker",
    "PirState",
    "ReportOutcome",
    "ScriptedEnvironment",
    "StepResult",
    "TICKS_PER_SECOND",
    "TaskSchedule",
    "TcpTransport",
    "Transition",
    "VirtualEnvironment",
    "dominant_orientation",
    "pir_poll",
    "pir_process",
    "take_occupancy",
]
