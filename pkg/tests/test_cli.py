import json

import httpx
import numpy as np
import pytest
from fastapi.testclient import TestClient

from bibtwin import power
from bibtwin.api import create_app
from bibtwin.cli import build_parser, format_points, main, parse_points
from bibtwin.ingest import Historian, StreamArchive, StreamKey
from bibtwin.scenario import NodeOverride, ScenarioConfig, run_scenario


def simulate(tmp_path, name, *extra):
    out = tmp_path / f"{name}.json"
    code = main(["--seed", "3", "simulate", "--nodes", "2", "--duration", "1800", "--report", str(out), *extra])
    return code, out


def test_simulate_is_byte_identical(tmp_path):
    code_a, a = simulate(tmp_path, "a")
    code_b, b = simulate(tmp_path, "b")
    assert code_a == code_b == 0
    assert a.read_bytes() == b.read_bytes()
    report = json.loads(a.read_text())
    assert report["conservation"]["ok"]
    assert {n["samples"] for n in report["nodes"].values()} == {180}
    assert {n["reports_ok"] for n in report["nodes"].values()} == {3}
    code_c, c = simulate(tmp_path, "c", "--sample-interval", "5")
    assert json.loads(c.read_text())["digests"] != report["digests"]


def test_seed_changes_the_run(tmp_path):
    a = run_scenario(ScenarioConfig(nodes=1, duration_s=1200, seed=1))
    b = run_scenario(ScenarioConfig(nodes=1, duration_s=1200, seed=2))
    assert a["digests"]["node_transcripts"] != b["digests"]["node_transcripts"]


def test_zero_nodes(tmp_path, capsys):
    assert main(["simulate", "--nodes", "0", "--duration", "600", "--work-dir", str(tmp_path / "w")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["nodes"] == {} and report["spool"]["files_sent"] == 0
    assert report["ingest"]["archived"] == 0


def test_startup_errors(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["simulate", "--duration", "10", "--work-dir", str(blocker / "w")]) == 1
    assert main(["simulate", "--nodes", "-1"]) == 1
    assert main(["simulate", "--settings", str(tmp_path / "missing.cfg"), "--duration", "10"]) == 1
    w = tmp_path / "used"
    assert main(["simulate", "--nodes", "1", "--duration", "600", "--work-dir", str(w), "--report", str(tmp_path / "r")]) == 0
    assert main(["simulate", "--nodes", "1", "--duration", "600", "--work-dir", str(w)]) == 1
    assert "already holds" in capsys.readouterr().err


def test_config_file_and_ini_round_trip(tmp_path):
    cfg = ScenarioConfig(
        nodes=2, duration_s=900, seed=9, sample_interval=15, report_interval=300,
        overrides={2: NodeOverride(sample_interval=30)}, gateway_down=[(290.0, 310.0)],
        channel_failure_prob=0.25, settings="zero",
    )
    again = ScenarioConfig.from_ini(cfg.to_ini())
    assert again == cfg
    assert again.to_ini() == cfg.to_ini()
    path = tmp_path / "s.ini"
    path.write_text(cfg.to_ini())
    out = tmp_path / "r.json"
    assert main(["--config", str(path), "simulate", "--report", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["config"] == cfg.to_ini()
    assert report["nodes"]["2"]["samples"] == 30 and report["nodes"]["1"]["samples"] == 60
    assert report["gateway"]["refused_while_paused"] == 2
    assert report["conservation"]["checks"]["pass_through_points"]


def test_settings_file_in_config_is_relative(tmp_path):
    (tmp_path / "site.settings").write_text("[temp]\ncomp_dev = 0.2\n")
    text = ScenarioConfig(settings="site.settings").to_ini()
    cfg = ScenarioConfig.from_ini(text, base_dir=tmp_path)
    assert cfg.compression()["temp"].comp_dev == 0.2


def test_power_surface_command(tmp_path):
    out = tmp_path / "surface.csv"
    assert main(["power-surface", "--out", str(out)]) == 0
    s = power.parse_surface_csv(out.read_text())
    assert s.cell(10, 60) == pytest.approx(5.45, abs=0.01)
    y = s.years
    for row in y:
        r = row[~np.isnan(row)]
        assert np.all(np.diff(r) >= 0)
    for col in y.T:
        c = col[~np.isnan(col)]
        assert np.all(np.diff(c) >= 0)
    one = tmp_path / "one.csv"
    assert main(["power-surface", "--sample-grid", "15", "--report-grid", "300", "--out", str(one)]) == 0
    cell = power.parse_surface_csv(one.read_text()).cell(15, 300)
    assert cell == pytest.approx(power.lifetime_years(power.PowerProfile(), power.BatterySpec(), 15, 300).years, abs=5e-4)
    with pytest.raises(SystemExit):
        build_parser().parse_args(["power-surface", "--sample-grid", "-1"])


@pytest.fixture
def archive_dir(tmp_path):
    d = tmp_path / "archive"
    a = StreamArchive(d)
    key = StreamKey(1, "temp")
    for t, v in [(0.0, 10.0), (10.0, 20.0), (25.0, 17.5), (40.0, 17.5 + 1e-9)]:
        a.append(key, t, v)
    a.close()
    return d


def test_query_and_export_round_trip(archive_dir, tmp_path, capsys):
    key = StreamKey(1, "temp")
    archive = StreamArchive(archive_dir)
    assert main(["query", "1.temp", "--archive-dir", str(archive_dir)]) == 0
    assert parse_points(capsys.readouterr().out) == archive.query_raw(key, 0, 100)
    assert main(["query", "1.temp", "--archive-dir", str(archive_dir), "--t0", "5", "--t1", "5", "--interval", "1"]) == 0
    assert parse_points(capsys.readouterr().out) == [(5.0, 15.0)]
    out = tmp_path / "grid.csv"
    args = ["export", "1.temp", "--archive-dir", str(archive_dir), "--t0", "-3", "--t1", "44", "--interval", "0.7", "--out", str(out)]
    assert main(args) == 0
    assert parse_points(out.read_text()) == archive.query_interpolated(key, -3, 44, 0.7)


def test_unknown_stream_suggests(archive_dir, capsys):
    assert main(["query", "1.tmp", "--archive-dir", str(archive_dir)]) == 1
    err = capsys.readouterr().err
    assert "did you mean 1.temp" in err
    assert main(["query", "1.temp", "--archive-dir", str(archive_dir / "nope")]) == 1
    assert main(["query", "1.temp", "--archive-dir", str(archive_dir), "--interval", "5"]) == 1


def test_query_through_the_api(archive_dir, monkeypatch, capsys):
    client = TestClient(create_app(Historian(archive_dir)))

    def fake_get(url, params=None, timeout=None):
        return client.get(url.removeprefix("http://svc"), params=params)

    monkeypatch.setattr(httpx, "get", fake_get)
    assert main(["query", "1.temp", "--api", "http://svc/"]) == 0
    via_api = parse_points(capsys.readouterr().out)
    assert main(["query", "1.temp", "--archive-dir", str(archive_dir)]) == 0
    assert via_api == parse_points(capsys.readouterr().out)
    assert main(["query", "1.tmp", "--api", "http://svc"]) == 1
    assert "1.temp" in capsys.readouterr().err


def test_points_format_keeps_precision():
    pts = [(0.1, 1 / 3), (2.0, None), (1e10, -0.0)]
    assert parse_points(format_points(pts)) == pts


def test_distributed_mode(tmp_path):
    out = tmp_path / "d.json"
    args = ["simulate", "--nodes", "2", "--duration", "1200", "--settings", "zero", "--distributed", "--report", str(out)]
    assert main(args) == 0
    report = json.loads(out.read_text())
    assert report["mode"] == "distributed" and report["conservation"]["ok"]
    lines = report["ingest"]["lines"]
    assert lines == sum(n["samples"] + n["events"] for n in report["nodes"].values())
    assert main(["simulate", "--distributed", "--gateway-down", "1-2", "--duration", "10"]) == 1
