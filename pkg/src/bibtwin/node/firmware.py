"""Event-driven simulation of one sensor's firmware loop.

Virtual time advances in 1/256 s ticks. At any instant asynchronous
interrupts are handled first, then a due SAMPLE, then a due REPORT, so a
report always carries the sample taken at the same instant.
"""

from __future__ import annotations

import enum
import logging
import socket
from dataclasses import dataclass, field
from typing import Protocol

from .. import wire
from ..recordstore import CapacityError, RecordStore
from .environment import Environment
from .orientation import OrientationTracker
from .pir import TICKS_PER_SECOND, PirState, pir_poll, pir_process, take_occupancy
from .scheduler import LAST, ExecutedTask, TaskSchedule

log = logging.getLogger(__name__)

DEFAULT_BUFFER_BYTES = 16384 - 2416
FORCE_REPORT_FREE_BYTES = 160


class FsmState(enum.Enum):
    SLEEP = "SLEEP"
    CHECK_ASYNCH = "CHECK_ASYNCH"
    SAMPLE = "SAMPLE"
    REPORT = "REPORT"


@dataclass(frozen=True)
class Transition:
    t: float
    state: FsmState
    detail: str = ""


@dataclass
class NodeConfig:
    device_id: int
    sample_interval: int = 10
    report_interval: int = 60
    buffer_capacity_bytes: int = DEFAULT_BUFFER_BYTES
    gateway: tuple[str, int] = ("127.0.0.1", 7400)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.device_id <= 0xFFFF:
            raise ValueError("device_id must fit in 16 bits")
        if int(self.sample_interval) != self.sample_interval or self.sample_interval < 1:
            raise ValueError("sample_interval must be a whole number of seconds >= 1")
        if int(self.report_interval) != self.report_interval or self.report_interval < self.sample_interval:
            raise ValueError("report_interval must be whole seconds and >= sample_interval")
        if self.buffer_capacity_bytes < 256:
            raise ValueError("buffer_capacity_bytes must be >= 256")


@dataclass
class NodeState:
    store: RecordStore
    state: FsmState = FsmState.SLEEP
    tick: int = 0
    last_sample_tick: int = 0
    last_report_tick: int = 0
    pir: PirState = field(default_factory=PirState)
    orientation: OrientationTracker = field(default_factory=OrientationTracker)

    @property
    def t(self) -> float:
        return self.tick / TICKS_PER_SECOND

    @property
    def last_sample(self) -> float:
        return self.last_sample_tick / TICKS_PER_SECOND

    @property
    def last_report(self) -> float:
        return self.last_report_tick / TICKS_PER_SECOND


class Connection(Protocol):
    def sendall(self, data: bytes) -> None: ...

    def shutdown(self, how: int) -> None: ...

    def recv(self, n: int) -> bytes: ...

    def close(self) -> None: ...


class Transport(Protocol):
    def open(self, t: float) -> Connection: ...


class TcpTransport:
    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.host = host
        self.port = port
        self.timeout = timeout

    def open(self, t: float) -> socket.socket:
        return socket.create_connection((self.host, self.port), timeout=self.timeout)


@dataclass
class ReportOutcome:
    t: float
    sent_messages: int
    ok: bool
    forced: bool = False
    error: str = ""


@dataclass
class NodeCounters:
    samples: int = 0
    events: int = 0
    reports_ok: int = 0
    reports_failed: int = 0
    forced_reports: int = 0
    overflow_dropped: int = 0
    frames_sent: int = 0


@dataclass
class StepResult:
    transitions: list[Transition] = field(default_factory=list)
    messages: list[wire.SensorMessage] = field(default_factory=list)
    reports: list[ReportOutcome] = field(default_factory=list)


def _clamp(value: float, lo: int, hi: int) -> int:
    return max(lo, min(hi, int(round(value))))


class Node:
    def __init__(self, config: NodeConfig, env: Environment, transport: Transport | None = None):
        self.config = config
        self.env = env
        self.transport = transport
        self.state = NodeState(store=RecordStore(capacity_bytes=config.buffer_capacity_bytes))
        initial = getattr(env, "orientation_at", None)
        if initial is not None:
            self.state.orientation.current = initial(0.0)
        self.log: list[Transition] = []
        self.counters = NodeCounters()
        self.transcript: list[bytes] = []
        self.last_tasks: list[ExecutedTask] = []
        self._processed = -1  # last tick whose interrupts have been handled
        self._pending_edges: list[tuple[int, int]] = []
        self._pending_flips: list[int] = []
        self._result = StepResult()
        self._attempted_at: int | None = None  # tick of the latest report attempt

    @property
    def sample_ticks(self) -> int:
        return self.config.sample_interval * TICKS_PER_SECOND

    @property
    def report_ticks(self) -> int:
        return self.config.report_interval * TICKS_PER_SECOND

    def next_due_tick(self) -> int:
        """Earliest tick with periodic or already-known asynchronous work."""
        s = self.state
        due = [s.last_sample_tick + self.sample_ticks, s.last_report_tick + self.report_ticks]
        deadline = s.pir.deadline
        if deadline is not None:
            due.append(deadline)
        if self._pending_edges:
            due.append(self._pending_edges[0][0])
        if self._pending_flips:
            due.append(self._pending_flips[0])
        return min(due)

    def _enter(self, state: FsmState, detail: str = "") -> None:
        self.state.state = state
        tr = Transition(self.state.t, state, detail)
        self.log.append(tr)
        self._result.transitions.append(tr)

    def step(self, until: float) -> StepResult:
        """Advance virtual time to ``until`` seconds, handling every event on the way."""
        s = self.state
        until_tick = int(round(until * TICKS_PER_SECOND))
        if until_tick < s.tick:
            raise ValueError(f"cannot step backwards from {s.t} to {until}")
        self._result = StepResult()
        if until_tick > self._processed:
            self._pending_edges += self.env.pir_edges(self._processed, until_tick)
            self._pending_flips += self.env.orientation_changes(self._processed, until_tick)
        while True:
            nxt = self.next_due_tick()
            if nxt > until_tick:
                break
            s.tick = nxt
            sample_due = s.last_sample_tick + self.sample_ticks
            report_due = s.last_report_tick + self.report_ticks
            if self._async_due(nxt):
                self._check_asynch(nxt)
            elif sample_due == nxt:
                self._sample()
            elif report_due == nxt:
                self._enter(FsmState.REPORT)
                self.report()
            s.state = FsmState.SLEEP
        s.tick = until_tick
        self._processed = max(self._processed, until_tick)
        return self._result

    def _async_due(self, tick: int) -> bool:
        deadline = self.state.pir.deadline
        return (
            (deadline is not None and deadline == tick)
            or (bool(self._pending_edges) and self._pending_edges[0][0] == tick)
            or (bool(self._pending_flips) and self._pending_flips[0] == tick)
        )

    def _check_asynch(self, tick: int) -> None:
        pir = self.state.pir
        deadline = pir.deadline
        if deadline is not None and deadline == tick and not (self._pending_edges and self._pending_edges[0][0] == tick):
            self._enter(FsmState.CHECK_ASYNCH, "pir-timer")
            event = pir_poll(pir, tick)
            if event is not None:
                self._emit_occ(event.state, event.tick)
        if self._pending_edges and self._pending_edges[0][0] == tick:
            _, level = self._pending_edges.pop(0)
            self._enter(FsmState.CHECK_ASYNCH, f"pir-edge {level}")
            for event in pir_process(pir, level, tick):
                self._emit_occ(event.state, event.tick)
        if self._pending_flips and self._pending_flips[0] == tick:
            self._pending_flips.pop(0)
            self._enter(FsmState.CHECK_ASYNCH, "orientation")
            seen = self.state.orientation.check(self.env.acceleration(self.state.t))
            if seen is not None:
                msg = wire.SensorMessage.orientation(self.config.device_id, tick // TICKS_PER_SECOND, seen.axis, seen.sign)
                self._store(msg)

    def _emit_occ(self, state: int, tick: int) -> None:
        self._store(wire.SensorMessage.occupancy(self.config.device_id, tick // TICKS_PER_SECOND, state))

    def _store(self, msg: wire.SensorMessage) -> None:
        s = self.state
        if msg.kind == wire.Kind.SAMPLE:
            self.counters.samples += 1
        else:
            self.counters.events += 1
        self._result.messages.append(msg)
        data = wire.encode_message(msg)
        try:
            s.store.append(data)
        except CapacityError:
            if self._attempted_at == s.tick:
                self.counters.overflow_dropped += 1
                log.warning("node %d: buffer full, message at t=%s dropped", self.config.device_id, s.t)
                return
            self._forced_report()
            try:
                s.store.append(data)
            except CapacityError:
                self.counters.overflow_dropped += 1
                log.warning("node %d: buffer full, message at t=%s dropped", self.config.device_id, s.t)
                return
        if s.store.free_bytes < FORCE_REPORT_FREE_BYTES and self._attempted_at != s.tick:
            self._forced_report()

    def _forced_report(self) -> None:
        prev = self.state.state
        self._enter(FsmState.REPORT, "forced")
        self.counters.forced_reports += 1
        self.report(forced=True)
        self.state.state = prev

    # SAMPLE ---------------------------------------------------------------

    def _sample(self) -> None:
        self._enter(FsmState.SAMPLE)
        self.run_sample_schedule()
        self.state.last_sample_tick = self.state.tick

    def run_sample_schedule(self) -> wire.SensorMessage:
        s = self.state
        env = self.env
        tick = s.tick
        r: dict[str, object] = {}

        def occupancy(at: float) -> None:
            r["occ"] = take_occupancy(s.pir, tick, self.sample_ticks)

        def store(at: float) -> None:
            msg = wire.SensorMessage.sample(
                self.config.device_id,
                tick // TICKS_PER_SECOND,
                _clamp(r["temp"] * 100, *wire.TEMP_RANGE),
                _clamp(r["rh"] * 100, *wire.RH_RANGE),
                _clamp(r["lux"], 0, 0xFFFF),
                tuple(_clamp(a * 1000, *wire.ACCEL_RANGE) for a in r["accel"]),
                r["occ"],
            )
            r["msg"] = msg
            self._store(msg)

        sched = TaskSchedule()
        sched.add(0, "Reporting", "Start constructing new Sensor Data Report", lambda at: r.clear())
        sched.add(1, "Temp/Humid", "Start humidity conversion", lambda at: None)
        sched.add(1, "PIR", "Calculate PIR occupancy percentage value and reset", occupancy)
        sched.add(1, "Light", "Wake light sensor to convert", lambda at: None)
        sched.add(1, "Accelerometer", "Read latest acceleration", lambda at: r.__setitem__("accel", env.acceleration(at)))
        sched.add(
            17,
            "Temp/Humid",
            "Read converted humidity and start temperature conversion",
            lambda at: r.__setitem__("rh", env.humidity(at)),
        )
        sched.add(67, "Temp/Humid", "Read converted temperature", lambda at: r.__setitem__("temp", env.temperature(at)))
        sched.add(106, "Light", "Read converted ambient light", lambda at: r.__setitem__("lux", env.illuminance(at)))
        sched.add(LAST, "Reporting", "Store Sensor Data Report into record store memory", store)
        self.last_tasks = sched.run(s.t)
        return r["msg"]  # type: ignore[return-value]

    # REPORT ---------------------------------------------------------------

    def report(self, forced: bool = False) -> ReportOutcome:
        """Push the whole buffer in one connection; clear it only once the gateway acks."""
        s = self.state
        store = s.store
        records = store.records()
        frames = [wire.frame_encode(wire.encode_hello(self.config.device_id, store.record_count))]
        frames += [wire.frame_encode(rec) for rec in records]
        frames.append(wire.frame_encode(wire.encode_end(len(records))))
        payload = b"".join(frames)
        self.transcript.append(payload)
        outcome = ReportOutcome(s.t, len(records), ok=False, forced=forced)
        s.last_report_tick = s.tick
        self._attempted_at = s.tick
        if self.transport is None:
            outcome.error = "no transport"
        else:
            try:
                conn = self.transport.open(s.t)
                try:
                    conn.sendall(payload)
                    conn.shutdown(socket.SHUT_WR)
                    ack = conn.recv(1)
                finally:
                    conn.close()
                if ack != bytes([wire.ACK]):
                    raise ConnectionError(f"gateway replied {ack!r} instead of ACK")
                outcome.ok = True
            except OSError as exc:
                outcome.error = str(exc) or type(exc).__name__
        if outcome.ok:
            store.clear()
            self.counters.reports_ok += 1
            self.counters.frames_sent += len(frames)
        else:
            self.counters.reports_failed += 1
            log.info("node %d: report at t=%s failed (%s); %d records kept",
                     self.config.device_id, s.t, outcome.error, len(records))
        self._result.reports.append(outcome)
        return outcome
