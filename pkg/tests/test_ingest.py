import random
import socket

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import max_reconstruction_error

from bibtwin.flatfile import SAMPLE_STREAMS, parse_flat_file, parse_line
from bibtwin.ingest import (
    DEFAULT_SETTINGS,
    ArchiveOrderError,
    CompressionSettings,
    DoorState,
    ExceptionState,
    FileReceiver,
    Historian,
    StreamArchive,
    StreamKey,
    UnknownStreamError,
    compress_series,
    exception_filter,
    parse_settings,
    swinging_door,
    zero_settings,
)
from bibtwin.transfer import ACK, NAK, encode_push

S_LINE = "S,5,1000,21.50,40.00,300,0.010,-0.005,1.000,12.5"


def walk(rng, n, step, start=0.0, dt=10.0):
    t, v, out = 0.0, start, []
    for _ in range(n):
        out.append((t, v))
        t += dt
        v += rng.gauss(0, step)
    return out


def post_exception(points, cfg):
    state = ExceptionState()
    return [(t, v) for t, v in points if exception_filter(state, t, v, cfg)]


def flat_file(device, t0, n, rng, dt=10):
    lines = []
    temp, rh = 21.0, 40.0
    for i in range(n):
        temp += rng.gauss(0, 0.05)
        rh += rng.gauss(0, 0.2)
        lines.append(f"S,{device},{t0 + dt * i},{temp:.2f},{rh:.2f},{300 + rng.randint(-4, 4)},0.000,0.000,1.000,{rng.choice([0.0, 0.0, 12.5, 100.0])}")
        if rng.random() < 0.1:
            lines.append(f"E,{device},{t0 + dt * i},OCC,{rng.randint(0, 1)}")
    return "\n".join(lines) + "\n"


# parsing


def test_parse_examples():
    rec = parse_line("E,5,1000,OCC,1")
    assert (rec.kind, rec.device_id, rec.timestamp, rec.points()) == ("E-OCC", 5, 1000, [("occ", 1.0)])
    s = parse_line(S_LINE)
    assert [name for name, _ in s.points()] == list(SAMPLE_STREAMS) and len(s.points()) == 7
    records, issues = parse_flat_file(f"{S_LINE}\nthis is noise\nE,5,1001,ORI,y,-\n")
    assert len(records) == 2 and len(issues) == 1 and issues[0].line_no == 2


@pytest.mark.parametrize(
    "line",
    [S_LINE, "E,5,1000,OCC,0", "E,7,12,ORI,z,+", "E,7,12,ORI,x,-", "S,1,2,-3.25,0.00,0,-1.500,2.000,0.000,100.0"],
)
def test_lines_round_trip(line):
    assert parse_line(line).to_line() == line


@pytest.mark.parametrize(
    "line", ["S,5,1000,1,2", "E,5,1000,OCC,2", "E,5,x,OCC,1", "E,5,1,ORI,w,+", "E,5,1,DOOR,1", "", "Q"]
)
def test_bad_lines_are_collected(line):
    records, issues = parse_flat_file(f"{S_LINE}\n{line}\n")
    assert len(records) == 1
    assert len(issues) == (1 if line else 0)


# exception filter


def test_zero_deadband_passes_new_timestamps():
    state = ExceptionState()
    cfg = CompressionSettings()
    assert all(exception_filter(state, t, 1.0, cfg) for t in range(100))


def test_constant_series_keeps_heartbeats():
    state = ExceptionState()
    cfg = CompressionSettings(exc_dev=0.5, exc_max_s=3600)
    kept = [t for t in range(0, 4 * 3600 + 1, 10) if exception_filter(state, t, 20.0, cfg)]
    assert kept == [0, 3600, 7200, 10800, 14400]


def test_deadband_edge_and_duplicates():
    state = ExceptionState()
    cfg = CompressionSettings(exc_dev=0.5)
    assert exception_filter(state, 0, 1.0, cfg)
    assert not exception_filter(state, 1, 1.5, cfg)  # not strictly beyond
    assert not exception_filter(state, 2, 0.6, cfg)
    assert exception_filter(state, 3, 1.6, cfg)
    assert not exception_filter(state, 3, 1.6, cfg)
    assert not exception_filter(state, 3, 9.0, cfg)
    assert not exception_filter(state, 1, 9.0, cfg)
    assert (state.dedup, state.conflicts, state.stale) == (1, 1, 1)


# swinging door


def test_comp_dev_zero_keeps_every_point():
    pts = walk(random.Random(1), 300, 1.0)
    assert compress_series(pts, CompressionSettings()) == pts


def test_ramp_compresses_to_endpoints():
    pts = [(10.0 * i, 3.0 + 0.25 * i) for i in range(100)]
    out = compress_series(pts, CompressionSettings(comp_dev=0.1, comp_max_s=1e9))
    assert out == [pts[0], pts[-1]]


def test_comp_max_forces_archive():
    pts = [(10.0 * i, 5.0) for i in range(1000)]
    out = compress_series(pts, CompressionSettings(comp_dev=1, comp_max_s=3600))
    gaps = np.diff([t for t, _ in out])
    assert np.all(gaps <= 3600) and out[-1] == pts[-1]


def test_non_monotonic_points_are_rejected():
    state = DoorState()
    cfg = CompressionSettings(comp_dev=1)
    swinging_door(state, 10, 0, cfg)
    swinging_door(state, 20, 0, cfg)
    assert swinging_door(state, 15, 9, cfg) == [] and state.rejected == 1


@pytest.mark.parametrize("stream", SAMPLE_STREAMS)
def test_reconstruction_bound_per_stream(stream):
    cfg = DEFAULT_SETTINGS[stream]
    rng = random.Random(hash(stream) & 0xFFFF)
    for trial in range(20):
        step = cfg.comp_dev * rng.choice([0.1, 0.5, 1.0, 3.0])
        pts = walk(rng, 1000, step, dt=rng.choice([1.0, 10.0, 60.0]))
        original = post_exception(pts, cfg)
        archived = compress_series(pts, cfg)
        assert archived[0] == original[0] and archived[-1] == original[-1]
        assert set(archived) <= set(original)
        assert max_reconstruction_error(original, archived) <= cfg.comp_dev


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.tuples(st.integers(1, 50), st.floats(-100, 100, allow_nan=False)), min_size=1, max_size=80),
    st.floats(0.001, 20),
)
def test_reconstruction_bound_property(steps, comp_dev):
    t, pts = 0.0, []
    for dt, v in steps:
        t += dt
        pts.append((t, v))
    archived = compress_series(pts, CompressionSettings(comp_dev=comp_dev, comp_max_s=400))
    assert max_reconstruction_error(pts, archived) <= comp_dev


def test_compression_dominance():
    rng = random.Random(8)
    for _ in range(100):
        pts = walk(rng, 600, rng.choice([0.05, 0.3, 1.0]))
        for exc in (0.0, 0.1, 0.5):
            counts = [len(compress_series(pts, CompressionSettings(exc, 3600, c, 3600))) for c in (0, 0.05, 0.1, 0.3, 1, 3)]
            assert counts == sorted(counts, reverse=True)
        passed = [len(post_exception(pts, CompressionSettings(e))) for e in (0, 0.05, 0.1, 0.5, 2)]
        assert passed == sorted(passed, reverse=True)


def test_wider_deadband_can_cost_a_door_vertex():
    # the deadband drops (20, 2.0); the door then needs a vertex it could skip before
    pts = [(0.0, 0.2), (10.0, 1.9), (20.0, 2.0), (30.0, 1.3), (40.0, -1.1)]
    narrow = compress_series(pts, CompressionSettings(0.0, 3600, 1.0, 3600))
    wide = compress_series(pts, CompressionSettings(0.5, 3600, 1.0, 3600))
    assert (len(narrow), len(wide)) == (3, 4)


# settings file


def test_settings_parser():
    text = "# site overrides\nlux.exc_dev = 9\n[temp]\ncomp_dev = 0.3\n\n[*]\nexc_max_s = 600\n"
    cfg = parse_settings(text)
    assert cfg["temp"] == CompressionSettings(0.05, 600, 0.3, 3600)
    assert cfg["lux"] == CompressionSettings(9, 600, 5, 3600)
    assert cfg["occ"] == CompressionSettings()
    cfg = parse_settings("lux.exc_dev = 9\nrh.comp_max_s=10\n")
    assert cfg["lux"].exc_dev == 9 and cfg["rh"].comp_max_s == 10
    assert parse_settings("", zero_settings())["temp"] == CompressionSettings()
    for bad in ("[occ]\ncomp_dev=1", "temp.speed=1", "nope.exc_dev=1", "just words", "[temp]\ncomp_dev=-1", "[*]\nlux.exc_dev=1"):
        with pytest.raises(ValueError):
            parse_settings(bad)


# archive


def test_append_grows_by_record_size(tmp_path):
    a = StreamArchive(tmp_path)
    key = StreamKey(1, "temp")
    a.append(key, 1.0, 20.0)
    a.flush()
    size = (tmp_path / key.filename).stat().st_size
    a.append(key, 2.0, 20.5)
    a.append(key, 3.0, 21.0)
    a.flush()
    assert (tmp_path / key.filename).stat().st_size - size == 32
    assert a.query_raw(key, 0, 10) == [(1.0, 20.0), (2.0, 20.5), (3.0, 21.0)]
    assert a.query_raw(key, 1.5, 1.9) == []
    with pytest.raises(ArchiveOrderError):
        a.append(key, 3.0, 0.0)


def test_unflushed_points_are_invisible(tmp_path):
    a = StreamArchive(tmp_path)
    key = StreamKey(1, "temp")
    a.append(key, 1.0, 20.0)
    assert a.streams() == []
    a.flush()
    assert a.streams() == [key]


def test_crash_at_every_byte_offset(tmp_path):
    key = StreamKey(3, "rh")
    a = StreamArchive(tmp_path / "src")
    pts = [(float(i), float(i * i)) for i in range(1, 7)]
    for t, v in pts:
        a.append(key, t, v)
    a.close()
    full = (tmp_path / "src" / key.filename).read_bytes()
    for cut in range(len(full) + 1):
        d = tmp_path / f"c{cut}"
        d.mkdir()
        (d / key.filename).write_bytes(full[:cut])
        b = StreamArchive(d)
        whole = cut // 16
        assert (d / key.filename).stat().st_size == whole * 16
        got = b.query_raw(key, 0, 100)
        assert got == pts[:whole]
        b.append(key, 50.0, 1.0)  # still writable after recovery
        b.close()
        assert b.query_raw(key, 0, 100) == pts[:whole] + [(50.0, 1.0)]


def test_interpolation_examples(tmp_path):
    a = StreamArchive(tmp_path)
    key = StreamKey(1, "lux")
    a.append(key, 0.0, 10.0)
    a.append(key, 10.0, 20.0)
    a.flush()
    assert a.query_interpolated(key, 5, 5, 1) == [(5.0, 15.0)]
    assert a.query_interpolated(key, 10, 10, 1) == [(10.0, 20.0)]
    assert a.query_interpolated(key, -5, 15, 5) == [(-5.0, None), (0.0, 10.0), (5.0, 15.0), (10.0, 20.0), (15.0, None)]
    with pytest.raises(ValueError):
        a.query_interpolated(key, 0, 10, 0)
    with pytest.raises(ValueError):
        a.query_raw(key, 5, 1)


def test_unknown_stream_lists_known(tmp_path):
    a = StreamArchive(tmp_path)
    a.append(StreamKey(1, "temp"), 0, 1)
    a.flush()
    with pytest.raises(UnknownStreamError) as err:
        a.query_raw(StreamKey(1, "tmp"), 0, 1)
    assert err.value.known == ["1.temp"] and "did you mean 1.temp" in str(err.value)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 100), st.floats(-1e3, 1e3, allow_nan=False)), min_size=2, max_size=40))
def test_interpolation_properties(tmp_path_factory, steps):
    d = tmp_path_factory.mktemp("arch")
    a = StreamArchive(d)
    key = StreamKey(2, "temp")
    t, pts = 0.0, []
    for dt, v in steps:
        t += dt
        pts.append((t, v))
        a.append(key, t, v)
    a.flush()
    for t, v in pts:
        assert a.query_interpolated(key, t, t, 1) == [(t, v)]
    grid = a.query_interpolated(key, pts[0][0], pts[-1][0], 0.7)
    for tq, vq in grid:
        assert vq is not None
        i = max(k for k, (tk, _) in enumerate(pts) if tk <= tq)
        j = min(i + 1, len(pts) - 1)
        lo, hi = sorted((pts[i][1], pts[j][1]))
        assert lo - 1e-9 <= vq <= hi + 1e-9


# historian


def test_full_range_equals_pass_through_count(tmp_path):
    text = flat_file(1, 1000, 200, random.Random(2))
    zero = Historian(tmp_path / "z", zero_settings())
    zero.ingest_text("a", text)
    dflt = Historian(tmp_path / "d")
    dflt.ingest_text("a", text)
    records, _ = parse_flat_file(text)
    total = sum(len(r.points()) for r in records)
    n_zero = sum(len(zero.archive.query_raw(k, 0, 1e12)) for k in zero.archive.streams())
    n_dflt = sum(len(dflt.archive.query_raw(k, 0, 1e12)) for k in dflt.archive.streams())
    assert zero.stats.points_in == total
    assert n_zero == total
    assert n_dflt < n_zero


def test_reingest_is_byte_identical(tmp_path):
    rng = random.Random(4)
    files = [(f"f{i}.txt", flat_file(dev, 1000 + 600 * i, 60, rng)) for i in range(4) for dev in (1, 2)]
    h = Historian(tmp_path)
    for name, text in files:
        h.ingest_text(name, text)
    before = h.archive.snapshot()
    for name, text in files[2:5] + files:
        h.ingest_text(name, text)
    assert h.archive.snapshot() == before


def test_restart_matches_single_run(tmp_path):
    rng = random.Random(5)
    files = [(f"f{i}.txt", flat_file(3, 1000 + 600 * i, 60, rng)) for i in range(6)]
    one = Historian(tmp_path / "one")
    for name, text in files:
        one.ingest_text(name, text)
    one.close()
    two = Historian(tmp_path / "two")
    for name, text in files[:3]:
        two.ingest_text(name, text)
    two.close()
    three = Historian(tmp_path / "two")
    for name, text in files[3:]:
        three.ingest_text(name, text)
    three.close()
    assert one.archive.snapshot() == three.archive.snapshot()
    assert (tmp_path / "one" / "manifest.txt").read_text() == (tmp_path / "two" / "manifest.txt").read_text()


def test_receive_rejects_odd_names(tmp_path):
    h = Historian(tmp_path / "a", inbox=tmp_path / "in")
    for bad in ("../x.txt", ".hidden", "a/b.txt", ""):
        with pytest.raises(ValueError):
            h.receive(bad, b"")


def push(address, frames):
    with socket.create_connection(address, timeout=5) as s:
        replies = []
        for frame in frames:
            s.sendall(frame)
            replies.append(s.recv(1))
        return replies


def test_receiver_acks_nak_and_dedupes(tmp_path):
    h = Historian(tmp_path / "arch", inbox=tmp_path / "inbox")
    rx = FileReceiver(h, ("127.0.0.1", 0))
    addr = rx.start()
    body = flat_file(1, 5000, 30, random.Random(6)).encode()
    try:
        bad = bytearray(encode_push("20240301_120000_1_0.txt", body))
        bad[40] ^= 0xFF
        assert push(addr, [bytes(bad)]) == [NAK]
        assert list((tmp_path / "inbox").iterdir()) == []
        assert h.archive.streams() == []
        good = encode_push("20240301_120000_1_0.txt", body)
        assert push(addr, [good]) == [ACK]
        before = h.archive.snapshot()
        assert push(addr, [good, good]) == [ACK, ACK]
        assert h.archive.snapshot() == before
        assert push(addr, [encode_push("../evil.txt", body)]) == [NAK]
    finally:
        rx.stop()
    assert sorted(p.name for p in (tmp_path / "inbox").iterdir()) == ["20240301_120000_1_0.txt"]
    assert (rx.received, rx.refused) == (3, 2)
