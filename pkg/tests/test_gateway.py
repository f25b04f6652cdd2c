import os
import socket
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from bibtwin import wire
from bibtwin.flatfile import parse_flat_file
from bibtwin.gateway import (
    ConnectionSession,
    Distributor,
    Gateway,
    SpoolConfig,
    SpoolWriter,
    distribute,
    list_spool,
    purge,
)
from bibtwin.recordstore import RecordStore
from bibtwin.transfer import TransferError
from bibtwin.wire import SensorMessage


def utc(*args) -> float:
    return datetime(*args, tzinfo=timezone.utc).timestamp()


def samples(n, device=4, start=10):
    return [SensorMessage.sample(device, start + 10 * i, 2150 + i % 3, 4000, 300, (10, -5, 1000), 0) for i in range(n)]


def report_bytes(device, messages, hello=True):
    store = RecordStore(capacity_bytes=1 << 20)
    for m in messages:
        store.append(wire.encode_message(m))
    frames = [wire.frame_encode(wire.encode_hello(device, store.record_count))] if hello else []
    frames += [wire.frame_encode(r) for r in store.records()]
    frames.append(wire.frame_encode(wire.encode_end(store.record_count)))
    return b"".join(frames)


def send(address, payload):
    with socket.create_connection(address, timeout=5) as s:
        s.sendall(payload)
        s.shutdown(socket.SHUT_WR)
        return s.recv(1)


class ListChannel:
    def __init__(self, fail_after=None):
        self.got = []
        self.fail_after = fail_after

    def put(self, name, body):
        if self.fail_after is not None and len(self.got) >= self.fail_after:
            raise TransferError("down")
        self.got.append((name, body))

    def close(self):
        pass


def make_files(root: Path, n: int, start: float):
    w = SpoolWriter(root, clock=lambda: t[0])
    t = [start]
    paths = []
    for i in range(n):
        t[0] = start + i
        paths.append(w.write(i % 3 + 1, [f"E,{i % 3 + 1},{int(t[0])},OCC,{i % 2}"]))
    return paths


def test_session_turns_a_report_into_lines():
    msgs = samples(60) + [SensorMessage.occupancy(4, 605, 1), SensorMessage.orientation(4, 606, wire.Axis.X, -1)]
    s = ConnectionSession(epoch=1000)
    assert s.feed(report_bytes(4, msgs)) == b""
    assert s.ended and s.end_count == len(msgs)
    assert len(s.lines) == 62
    assert s.lines[0] == "S,4,1010,21.50,40.00,300,0.010,-0.005,1.000,0.0"
    assert s.lines[-2:] == ["E,4,1605,OCC,1", "E,4,1606,ORI,x,-"]


def test_session_without_hello_is_rejected():
    s = ConnectionSession()
    assert s.feed(report_bytes(4, samples(3), hello=False)) == bytes([wire.NAK])
    assert s.rejected and s.lines == []


def test_partial_stream_keeps_prefix(tmp_path):
    gw = Gateway(SpoolConfig(tmp_path, listen=("127.0.0.1", 0)), clock=lambda: utc(2024, 3, 1, 12))
    addr = gw.start()
    try:
        data = report_bytes(4, samples(20))
        cut = data[: len(data) // 2]
        assert send(addr, cut) == b""  # no ack without END
    finally:
        gw.stop()
    files = list_spool(tmp_path)
    assert len(files) == 1
    lines = files[0].path.read_text().splitlines()
    assert 0 < len(lines) < 20
    full = ConnectionSession()
    full.feed(data)
    assert lines == full.lines[: len(lines)]
    assert gw.stats.frames_dropped == 1


def test_listener_one_file_per_connection(tmp_path):
    clock = [utc(2024, 3, 1, 23, 59, 59)]
    gw = Gateway(SpoolConfig(tmp_path, listen=("127.0.0.1", 0)), clock=lambda: clock[0])
    addr = gw.start()
    try:
        assert send(addr, report_bytes(4, samples(60))) == bytes([wire.ACK])
        assert send(addr, report_bytes(4, samples(5))) == bytes([wire.ACK])
        clock[0] = utc(2024, 3, 2, 0, 0, 1)
        assert send(addr, report_bytes(9, samples(2, device=9))) == bytes([wire.ACK])
        assert send(addr, report_bytes(9, [])) == bytes([wire.ACK])  # nothing to write
        assert send(addr, report_bytes(9, samples(2), hello=False)) == bytes([wire.NAK])
    finally:
        gw.stop()
    names = sorted(str(p.relative_to(tmp_path)) for p in tmp_path.rglob("*.txt"))
    assert names == ["20240301/235959_4_0.txt", "20240301/235959_4_1.txt", "20240302/000001_9_0.txt"]
    first = (tmp_path / names[0]).read_text()
    records, issues = parse_flat_file(first)
    assert len(records) == 60 and not issues
    assert gw.stats.rejected == 1 and gw.stats.files_written == 3


def test_paused_gateway_gives_no_ack(tmp_path):
    gw = Gateway(SpoolConfig(tmp_path, listen=("127.0.0.1", 0)))
    addr = gw.start()
    gw.pause()
    try:
        try:
            reply = send(addr, report_bytes(4, samples(3)))
        except OSError:
            reply = b""
        assert reply == b""
        gw.resume()
        assert send(addr, report_bytes(4, samples(3))) == bytes([wire.ACK])
    finally:
        gw.stop()
    assert gw.stats.refused_while_paused == 1


def test_distribute_healthy_and_down(tmp_path):
    cfg = SpoolConfig(tmp_path, batch_size=10)
    make_files(tmp_path, 3, utc(2024, 3, 1))
    res = distribute(cfg, ListChannel(fail_after=0))
    assert (res.files_sent, res.files_failed, res.backlog) == (0, 1, 3)
    assert len(list_spool(tmp_path)) == 3
    ch = ListChannel()
    res = distribute(cfg, ch)
    assert (res.files_sent, res.backlog) == (3, 0)
    assert len(list(tmp_path.rglob("*.txt.sent"))) == 3
    assert distribute(cfg, ch).files_sent == 0  # never resent


def test_hundred_files_drain_oldest_first(tmp_path):
    cfg = SpoolConfig(tmp_path, batch_size=10)
    paths = make_files(tmp_path, 100, utc(2024, 3, 1, 23, 59))  # crosses midnight
    expected = [f.transfer_name for f in list_spool(tmp_path)]
    assert len(expected) == 100
    ch = ListChannel()
    rounds = 0
    while list_spool(tmp_path):
        distribute(cfg, ch)
        rounds += 1
        assert [n for n, _ in ch.got] == expected[: 10 * rounds]
    assert rounds == 10
    assert all(not p.exists() and Path(str(p) + ".sent").exists() for p in paths)


def test_failure_mid_batch_defers_the_rest(tmp_path):
    cfg = SpoolConfig(tmp_path, batch_size=10)
    make_files(tmp_path, 6, utc(2024, 3, 1))
    res = distribute(cfg, ListChannel(fail_after=2))
    assert (res.files_sent, res.files_failed, res.deferred, res.backlog) == (2, 1, 3, 4)


class Crash(BaseException):
    pass


class CrashingChannel(ListChannel):
    """Dies on the k-th put, either before or after delivering it."""

    def __init__(self, sink, k, after):
        super().__init__()
        self.got = sink
        self.k, self.after, self.calls = k, after, 0

    def put(self, name, body):
        self.calls += 1
        if self.calls == self.k and not self.after:
            raise Crash()
        self.got.append((name, body))
        if self.calls == self.k:
            raise Crash()


@pytest.mark.parametrize("after", [False, True])
def test_killed_distributor_loses_nothing(tmp_path, after):
    near = lambda: utc(2024, 3, 1, 1)  # noqa: E731
    for k in range(1, 8):
        root = tmp_path / f"{after}_{k}"
        cfg = SpoolConfig(root, batch_size=4)
        make_files(root, 7, utc(2024, 3, 1))
        everything = {f.transfer_name for f in list_spool(root)}
        first = []
        with pytest.raises(Crash):
            Distributor(cfg, CrashingChannel(first, k, after), clock=near).drain()
        second = ListChannel()
        Distributor(cfg, second, clock=near).drain()  # restart with a fresh worker
        names = [n for n, _ in first] + [n for n, _ in second.got]
        assert set(names) == everything
        assert not list_spool(root)
        # only a file delivered right before the crash can arrive twice
        assert len(names) - len(set(names)) == (1 if after else 0)


def test_purge_twelve_day_fixture(tmp_path):
    now = utc(2024, 3, 20, 8)
    today = datetime.fromtimestamp(now, tz=timezone.utc)
    for age in range(12):
        day = (today - timedelta(days=age)).strftime("%Y%m%d")
        (tmp_path / day).mkdir()
        (tmp_path / day / "120000_1_0.txt.sent").write_text("x\n")
    (tmp_path / (today - timedelta(days=11)).strftime("%Y%m%d") / "120001_1_0.txt").write_text("y\n")
    (tmp_path / "notaday").mkdir()
    res = purge(SpoolConfig(tmp_path, retention_days=10), now)
    expected = sorted((today - timedelta(days=a)).strftime("%Y%m%d") for a in (10, 11))
    assert sorted(res.removed) == expected
    assert res.unsent_dropped == 1
    left = sorted(p.name for p in tmp_path.iterdir())
    assert len(left) == 11 and "notaday" in left
    assert (today - timedelta(days=9)).strftime("%Y%m%d") in left


def test_purge_keeps_young_spool(tmp_path):
    now = utc(2024, 3, 20)
    for age in range(5):
        (tmp_path / (datetime(2024, 3, 20) - timedelta(days=age)).strftime("%Y%m%d")).mkdir()
    assert purge(SpoolConfig(tmp_path, retention_days=10), now).removed == []


def test_saturation_counter_on_throttled_channel(tmp_path):
    cfg = SpoolConfig(tmp_path, batch_size=1)  # one put per round: a slow uplink
    dist = Distributor(cfg, ListChannel(), clock=lambda: utc(2024, 3, 1))
    w = SpoolWriter(tmp_path, clock=lambda: utc(2024, 3, 1))
    for r in range(10):
        for _ in range(2):  # reports arrive faster than the channel drains
            w.write(1, ["E,1,1,OCC,1"])
        dist.run_once()
    assert dist.stats.saturation == 9
    calm = Distributor(SpoolConfig(tmp_path, batch_size=50), ListChannel(), clock=lambda: utc(2024, 3, 1))
    calm.run_once()
    calm.run_once()
    assert calm.stats.saturation == 0


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        SpoolConfig(tmp_path, retention_days=0)
    with pytest.raises(ValueError):
        SpoolConfig(tmp_path, batch_size=0)


def test_temp_files_are_not_listed(tmp_path):
    (tmp_path / "20240301").mkdir()
    (tmp_path / "20240301" / ".120000_1_0.txt.tmp").write_text("partial")
    assert list_spool(tmp_path) == []
    assert os.listdir(tmp_path / "20240301") == [".120000_1_0.txt.tmp"]
