"""End-to-end runs: N simulated nodes -> gateway -> distributor -> historian.

Everything talks over real loopback TCP. In virtual-clock mode time only
moves when the orchestrator says so, which makes a run reproducible byte for
byte from its config and seed.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import logging
import os
import shutil
import socket
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .flatfile import SAMPLE_STREAMS
from .gateway import Distributor, Gateway, SpoolConfig, TcpChannel, list_spool
from .ingest import DEFAULT_SETTINGS, FileReceiver, Historian, parse_settings, zero_settings
from .node import Node, NodeConfig, VirtualEnvironment
from .node.firmware import DEFAULT_BUFFER_BYTES
from .transfer import TransferError

log = logging.getLogger(__name__)

DEFAULT_EPOCH = 1_700_000_000


class StartupError(RuntimeError):
    pass


@dataclass
class NodeOverride:
    sample_interval: int | None = None
    report_interval: int | None = None
    buffer_capacity_bytes: int | None = None


@dataclass
class ScenarioConfig:
    nodes: int = 3
    duration_s: int = 7200
    seed: int = 0
    clock: str = "virtual"  # or "wall"
    speed: float = 60.0  # virtual seconds per wall second in wall mode
    epoch: int = DEFAULT_EPOCH
    sample_interval: int = 10
    report_interval: int = 600
    buffer_capacity_bytes: int = DEFAULT_BUFFER_BYTES
    glitches: bool = True
    overrides: dict[int, NodeOverride] = field(default_factory=dict)  # keyed by device id
    gateway_down: list[tuple[float, float]] = field(default_factory=list)
    channel_failure_prob: float = 0.0
    retention_days: int = 10
    poll_interval_s: int = 60
    batch_size: int = 20
    settings: str = "default"  # "default", "zero" or a settings-file path

    def __post_init__(self) -> None:
        if self.nodes < 0:
            raise ValueError("nodes must be >= 0")
        if self.duration_s < 0:
            raise ValueError("duration_s must be >= 0")
        if self.clock not in ("virtual", "wall"):
            raise ValueError("clock must be 'virtual' or 'wall'")
        if self.speed <= 0:
            raise ValueError("speed must be > 0")
        if not 0.0 <= self.channel_failure_prob < 1.0:
            raise ValueError("channel_failure_prob must be in [0, 1)")
        for a, b in self.gateway_down:
            if b < a:
                raise ValueError(f"gateway_down window {a}-{b} ends before it starts")
        if self.poll_interval_s < 1:
            raise ValueError("poll_interval_s must be >= 1")
        for dev in range(1, self.nodes + 1):
            self.node_config(dev)  # validates intervals early

    def node_config(self, device_id: int) -> NodeConfig:
        o = self.overrides.get(device_id, NodeOverride())
        return NodeConfig(
            device_id=device_id,
            sample_interval=o.sample_interval or self.sample_interval,
            report_interval=o.report_interval or self.report_interval,
            buffer_capacity_bytes=o.buffer_capacity_bytes or self.buffer_capacity_bytes,
            rng_seed=self.seed,
        )

    def compression(self) -> dict:
        if self.settings == "default":
            return dict(DEFAULT_SETTINGS)
        if self.settings == "zero":
            return zero_settings()
        return parse_settings(Path(self.settings).read_text(encoding="utf-8"))

    # INI round trip -------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["scenario"] = {
            "nodes": str(self.nodes),
            "duration_s": str(self.duration_s),
            "seed": str(self.seed),
            "clock": self.clock,
            "speed": repr(self.speed),
            "epoch": str(self.epoch),
            "glitches": str(self.glitches).lower(),
        }
        cp["node"] = {
            "sample_interval": str(self.sample_interval),
            "report_interval": str(self.report_interval),
            "buffer_capacity_bytes": str(self.buffer_capacity_bytes),
        }
        for dev in sorted(self.overrides):
            o = self.overrides[dev]
            cp[f"node.{dev}"] = {f.name: str(getattr(o, f.name)) for f in fields(o) if getattr(o, f.name) is not None}
        cp["faults"] = {
            "gateway_down": ", ".join(f"{a:g}-{b:g}" for a, b in self.gateway_down),
            "channel_failure_prob": repr(self.channel_failure_prob),
        }
        cp["gateway"] = {
            "retention_days": str(self.retention_days),
            "poll_interval_s": str(self.poll_interval_s),
            "batch_size": str(self.batch_size),
        }
        cp["ingest"] = {"settings": self.settings}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, base_dir: Path | None = None) -> ScenarioConfig:
        cp = configparser.ConfigParser()
        cp.read_string(text)
        kw: dict = {}
        sc = cp["scenario"] if cp.has_section("scenario") else {}
        for name, conv in (("nodes", int), ("duration_s", int), ("seed", int), ("clock", str),
                           ("speed", float), ("epoch", int)):
            if name in sc:
                kw[name] = conv(sc[name])
        if "glitches" in sc:
            kw["glitches"] = cp.getboolean("scenario", "glitches")
        if cp.has_section("node"):
            for name in ("sample_interval", "report_interval", "buffer_capacity_bytes"):
                if name in cp["node"]:
                    kw[name] = int(cp["node"][name])
        overrides = {}
        for section in cp.sections():
            if section.startswith("node."):
                dev = int(section.split(".", 1)[1])
                overrides[dev] = NodeOverride(**{k: int(v) for k, v in cp[section].items()})
        kw["overrides"] = overrides
        if cp.has_section("faults"):
            f = cp["faults"]
            windows = []
            for part in f.get("gateway_down", "").split(","):
                part = part.strip()
                if part:
                    a, _, b = part.partition("-")
                    windows.append((float(a), float(b)))
            kw["gateway_down"] = windows
            if "channel_failure_prob" in f:
                kw["channel_failure_prob"] = float(f["channel_failure_prob"])
        if cp.has_section("gateway"):
            g = cp["gateway"]
            for name in ("retention_days", "poll_interval_s", "batch_size"):
                if name in g:
                    kw[name] = int(g[name])
        if cp.has_section("ingest") and "settings" in cp["ingest"]:
            s = cp["ingest"]["settings"]
            if s not in ("default", "zero") and base_dir is not None and not Path(s).is_absolute():
                s = str(base_dir / s)
            kw["settings"] = s
        return cls(**kw)


class VirtualClock:
    def __init__(self, epoch: int):
        self.epoch = epoch
        self.t = 0.0

    def __call__(self) -> float:
        return self.epoch + self.t


class ScenarioTransport:
    """Node transport that moves the shared clock and applies outage windows."""

    def __init__(self, address: tuple[str, int], clock: VirtualClock, gateway: Gateway | None,
                 windows: list[tuple[float, float]]):
        self.address = address
        self.clock = clock
        self.gateway = gateway
        self.windows = windows

    def open(self, t: float) -> socket.socket:
        self.clock.t = t
        if self.gateway is not None:
            if any(a <= t <= b for a, b in self.windows):
                self.gateway.pause()
            else:
                self.gateway.resume()
        return socket.create_connection(self.address, timeout=10.0)


class FlakyChannel:
    """Wraps a channel and refuses a seeded fraction of puts before sending."""

    def __init__(self, inner: TcpChannel, prob: float, seed: int):
        self.inner = inner
        self.prob = prob
        self.rng = np.random.default_rng([seed, 7])
        self.injected = 0

    def put(self, name: str, body: bytes) -> None:
        if self.prob and self.rng.random() < self.prob:
            self.injected += 1
            raise TransferError(f"injected channel failure on {name}")
        self.inner.put(name, body)

    def close(self) -> None:
        self.inner.close()


def _digest(chunks) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c)
    return h.hexdigest()


def _nodes(cfg: ScenarioConfig, transport_for) -> list[Node]:
    out = []
    for dev in range(1, cfg.nodes + 1):
        env = VirtualEnvironment(seed=cfg.seed * 1000 + dev, glitches=cfg.glitches)
        out.append(Node(cfg.node_config(dev), env, transport_for(dev)))
    return out


def _node_report(n: Node) -> dict:
    c = n.counters
    return {
        "samples": c.samples,
        "events": c.events,
        "reports_ok": c.reports_ok,
        "reports_failed": c.reports_failed,
        "forced_reports": c.forced_reports,
        "overflow_dropped": c.overflow_dropped,
        "frames_sent": c.frames_sent,
        "buffered_at_end": n.state.store.record_count,
        "compression_ratio": round(n.state.store.total.ratio, 4),
    }


def _pace(cfg: ScenarioConfig, start: float, t: float) -> None:
    if cfg.clock == "wall":
        delay = start + t / cfg.speed - time.monotonic()
        if delay > 0:
            time.sleep(delay)


def run_scenario(cfg: ScenarioConfig, work_dir: Path | str | None = None) -> dict:
    """Run one simulation in this process; returns the JSON-ready report."""
    owned = work_dir is None
    work = Path(tempfile.mkdtemp(prefix="bibtwin-")) if owned else Path(work_dir)
    try:
        return _run_local(cfg, work)
    finally:
        if owned:
            shutil.rmtree(work, ignore_errors=True)


def _prepare(work: Path) -> tuple[Path, Path, Path]:
    spool, archive, inbox = work / "spool", work / "archive", work / "inbox"
    for d in (spool, archive, inbox):
        try:
            d.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StartupError(f"cannot create {d}: {exc}") from exc
        if not os.access(d, os.W_OK):
            raise StartupError(f"{d} is not writable")
    if any(archive.iterdir()) or any(spool.iterdir()):
        raise StartupError(f"{work} already holds spool or archive data; use a fresh directory")
    return spool, archive, inbox


def _run_local(cfg: ScenarioConfig, work: Path) -> dict:
    spool, archive, inbox = _prepare(work)
    vclock = VirtualClock(cfg.epoch)
    clock = vclock if cfg.clock == "virtual" else time.time
    try:
        settings = cfg.compression()
    except (OSError, ValueError) as exc:
        raise StartupError(f"bad ingest settings: {exc}") from exc
    spool_cfg = SpoolConfig(
        spool, listen=("127.0.0.1", 0), retention_days=cfg.retention_days,
        poll_interval_s=cfg.poll_interval_s, batch_size=cfg.batch_size, epoch=cfg.epoch,
    )
    historian = Historian(archive, settings, inbox=inbox)
    gateway = Gateway(spool_cfg, clock=clock)
    receiver = FileReceiver(historian, ("127.0.0.1", 0))
    try:
        gw_addr = gateway.start()
        rx_addr = receiver.start()
    except OSError as exc:
        gateway.stop()
        receiver.stop()
        raise StartupError(f"cannot bind loopback ports: {exc}") from exc
    channel = FlakyChannel(TcpChannel(*rx_addr), cfg.channel_failure_prob, cfg.seed)
    distributor = Distributor(spool_cfg, channel, clock=clock)
    nodes = _nodes(cfg, lambda dev: ScenarioTransport(gw_addr, vclock, gateway, cfg.gateway_down))
    try:
        start = time.monotonic()
        for t in range(1, cfg.duration_s + 1):
            _pace(cfg, start, t)
            for node in nodes:
                node.step(t)
            if t % cfg.poll_interval_s == 0:
                vclock.t = t
                distributor.run_once()
        # ordered shutdown: nodes are done, the gateway drains, ingest flushes
        vclock.t = cfg.duration_s
        gateway.resume()
        rounds = 0
        while list_spool(spool) and rounds < 10_000:
            distributor.run_once()
            rounds += 1
    finally:
        gateway.stop()
        receiver.stop()
        historian.close()

    node_reports = {str(n.config.device_id): _node_report(n) for n in nodes}
    generated = sum(n.counters.samples + n.counters.events - n.counters.overflow_dropped for n in nodes)
    buffered = sum(n.state.store.record_count for n in nodes)
    gw = gateway.stats.as_dict()
    ing = historian.summary()
    per_stream: dict[str, int] = {}
    for key, counters in historian.stream_counters().items():
        name = key.split(".", 1)[1]
        per_stream[name] = per_stream.get(name, 0) + counters["archived"]
    checks = {
        "nodes_to_gateway": generated == gw["lines_written"] + buffered,
        "gateway_to_ingest": gw["lines_written"] == ing["lines"],
        "spool_drained": not list_spool(spool),
        "no_parse_errors": ing["parse_errors"] == 0,
    }
    if cfg.settings == "zero":
        checks["pass_through_points"] = ing["archived"] == ing["s_lines"] * len(SAMPLE_STREAMS) + ing["e_lines"]
    spool_files = sorted(str(p.relative_to(spool)) for p in spool.rglob("*.txt.sent"))
    return {
        "config": cfg.to_ini(),
        "mode": "local",
        "nodes": node_reports,
        "gateway": gw,
        "distributor": {
            **{f.name: getattr(distributor.stats, f.name) for f in fields(distributor.stats)},
            "injected_failures": channel.injected,
        },
        "spool": {"files_sent": len(spool_files), "day_dirs": sorted({f.split("/")[0] for f in spool_files})},
        "ingest": {**ing, "archived_per_stream": dict(sorted(per_stream.items()))},
        "digests": {
            "node_transcripts": _digest(p for n in nodes for p in n.transcript),
            "archive": _digest(k.encode() + v for k, v in sorted(_archive_bytes(archive).items())),
        },
        "conservation": {"ok": all(checks.values()), "checks": checks,
                         "messages_generated": generated, "buffered_at_end": buffered},
    }


def _archive_bytes(root: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(root.glob("*.pts"))}


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


# distributed mode -----------------------------------------------------------


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _wait_port(port: int, proc: subprocess.Popen, timeout: float = 20.0) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if proc.poll() is not None:
            raise StartupError(f"service exited early with code {proc.returncode}")
        try:
            with socket.create_connection(("127.0.0.1", port), timeout=0.5):
                return
        except OSError:
            time.sleep(0.1)
    raise StartupError(f"nothing listening on port {port} after {timeout} s")


def run_distributed(cfg: ScenarioConfig, work_dir: Path | str | None = None, timeout_s: float = 60.0) -> dict:
    """Same flow, but the gateway and the historian run as separate processes.

    Spool names follow the wall clock here, and outage windows are not
    available because the gateway is out of reach.
    """
    import httpx

    if cfg.gateway_down:
        raise StartupError("gateway_down windows need the in-process gateway; drop --distributed")
    owned = work_dir is None
    work = Path(tempfile.mkdtemp(prefix="bibtwin-")) if owned else Path(work_dir)
    procs: list[subprocess.Popen] = []
    try:
        spool, archive, inbox = _prepare(work)
        gw_port, rx_port, http_port = _free_port(), _free_port(), _free_port()
        exe = [sys.executable, "-m", "bibtwin.cli"]
        ingest_cmd = exe + ["serve-ingest", "--listen", f"127.0.0.1:{rx_port}", "--http", f"127.0.0.1:{http_port}",
                            "--inbox", str(inbox), "--archive-dir", str(archive)]
        if cfg.settings != "default":
            if cfg.settings == "zero":
                zero = work / "zero.settings"
                zero.write_text("[*]\nexc_dev = 0\ncomp_dev = 0\n", encoding="utf-8")
                ingest_cmd += ["--settings-file", str(zero)]
            else:
                ingest_cmd += ["--settings-file", cfg.settings]
        gateway_cmd = exe + ["serve-gateway", "--listen", f"127.0.0.1:{gw_port}", "--spool-root", str(spool),
                             "--dest", f"127.0.0.1:{rx_port}", "--poll-interval", "0.2",
                             "--batch-size", str(cfg.batch_size), "--retention-days", str(cfg.retention_days),
                             "--epoch", str(cfg.epoch)]
        procs.append(subprocess.Popen(ingest_cmd))
        _wait_port(rx_port, procs[-1])
        _wait_port(http_port, procs[-1])
        procs.append(subprocess.Popen(gateway_cmd))
        _wait_port(gw_port, procs[-1])

        vclock = VirtualClock(cfg.epoch)
        nodes = _nodes(cfg, lambda dev: ScenarioTransport(("127.0.0.1", gw_port), vclock, None, []))
        start = time.monotonic()
        for t in range(1, cfg.duration_s + 1):
            _pace(cfg, start, t)
            for node in nodes:
                node.step(t)
        generated = sum(n.counters.samples + n.counters.events - n.counters.overflow_dropped for n in nodes)
        buffered = sum(n.state.store.record_count for n in nodes)
        delivered = generated - buffered
        deadline = time.monotonic() + timeout_s
        stats: dict = {}
        with httpx.Client(base_url=f"http://127.0.0.1:{http_port}", timeout=5.0) as client:
            while time.monotonic() < deadline:
                stats = client.get("/stats").json()
                if stats["lines"] >= delivered:
                    break
                time.sleep(0.2)
        per_stream: dict[str, int] = {}
        for key, counters in stats.get("streams", {}).items():
            name = key.split(".", 1)[1]
            per_stream[name] = per_stream.get(name, 0) + counters["archived"]
        checks = {
            "nodes_to_ingest": stats.get("lines") == delivered,
            "no_parse_errors": stats.get("parse_errors") == 0,
        }
        if cfg.settings == "zero":
            checks["pass_through_points"] = (
                stats.get("archived") == stats.get("s_lines", 0) * len(SAMPLE_STREAMS) + stats.get("e_lines", 0)
            )
        return {
            "config": cfg.to_ini(),
            "mode": "distributed",
            "nodes": {str(n.config.device_id): _node_report(n) for n in nodes},
            "ingest": {k: v for k, v in stats.items() if k != "streams"} | {"archived_per_stream": dict(sorted(per_stream.items()))},
            "digests": {"node_transcripts": _digest(p for n in nodes for p in n.transcript)},
            "conservation": {"ok": all(checks.values()), "checks": checks,
                             "messages_generated": generated, "buffered_at_end": buffered},
        }
    finally:
        for p in reversed(procs):
            p.terminate()
        for p in procs:
            try:
                p.wait(timeout=10)
            except subprocess.TimeoutExpired:
                p.kill()
        if owned:
            shutil.rmtree(work, ignore_errors=True)
