"""Command line entry point: ``bibtwin <command> ...``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
import threading
from pathlib import Path

from . import power

log = logging.getLogger("bibtwin")

EXIT_OK = 0
EXIT_STARTUP = 1
EXIT_CONSERVATION = 2


def _hostport(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def _grid(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("grid values must be positive")
    return values


def _window(text: str) -> tuple[float, float]:
    a, sep, b = text.partition("-")
    try:
        return float(a), float(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START-END seconds, got {text!r}") from None


def format_points(points: list[tuple[float, float | None]]) -> str:
    """``t,value`` per line; an empty value means no data at that time."""
    return "".join(f"{t!r},{'' if v is None else repr(v)}\n" for t, v in points)


def parse_points(text: str) -> list[tuple[float, float | None]]:
    out = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        t, _, v = line.partition(",")
        out.append((float(t), float(v) if v else None))
    return out


# simulate -------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    from .scenario import ScenarioConfig, StartupError, report_json, run_distributed, run_scenario

    try:
        if args.config:
            path = Path(args.config)
            cfg = ScenarioConfig.from_ini(path.read_text(encoding="utf-8"), base_dir=path.parent)
        else:
            cfg = ScenarioConfig()
        overrides = {
            "nodes": args.nodes,
            "duration_s": args.duration,
            "sample_interval": args.sample_interval,
            "report_interval": args.report_interval,
            "settings": args.settings,
            "channel_failure_prob": args.channel_failure_prob,
            "clock": args.clock,
            "seed": args.seed,
        }
        kw = {k: v for k, v in overrides.items() if v is not None}
        if args.gateway_down:
            kw["gateway_down"] = args.gateway_down
        if kw:
            cfg = ScenarioConfig(**{**vars(cfg), **kw})
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: bad scenario config: {exc}", file=sys.stderr)
        return EXIT_STARTUP
    runner = run_distributed if args.distributed else run_scenario
    try:
        report = runner(cfg, args.work_dir)
    except StartupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STARTUP
    text = report_json(report)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    ok = report["conservation"]["ok"]
    if not ok:
        print("conservation check FAILED: " + ", ".join(
            k for k, v in report["conservation"]["checks"].items() if not v), file=sys.stderr)
    return EXIT_OK if ok else EXIT_CONSERVATION


# power ----------------------------------------------------------------------


def cmd_power_surface(args: argparse.Namespace) -> int:
    try:
        surface = power.lifetime_surface(power.PowerProfile(), power.BatterySpec(), args.sample_grid, args.report_grid)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STARTUP
    text = surface.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# services -------------------------------------------------------------------


def cmd_serve_gateway(args: argparse.Namespace) -> int:
    from .gateway import Distributor, Gateway, SpoolConfig, TcpChannel

    try:
        cfg = SpoolConfig(
            args.spool_root, listen=args.listen, retention_days=args.retention_days,
            poll_interval_s=args.poll_interval, batch_size=args.batch_size, epoch=args.epoch,
        )
        gateway = Gateway(cfg)
        gateway.start()
    except (OSError, ValueError) as exc:
        print(f"error: cannot start gateway: {exc}", file=sys.stderr)
        return EXIT_STARTUP
    log.info("gateway listening on %s:%d, spooling to %s", *gateway.address, cfg.spool_root)
    distributor = None
    if args.dest:
        distributor = Distributor(cfg, TcpChannel(*args.dest))
        threading.Thread(target=distributor.run_forever, name="distributor", daemon=True).start()
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        if distributor is not None:
            distributor.stop()
        gateway.stop()
    return EXIT_OK


def cmd_serve_ingest(args: argparse.Namespace) -> int:
    from .ingest import FileReceiver, Historian, parse_settings

    try:
        settings = None
        if args.settings_file:
            settings = parse_settings(Path(args.settings_file).read_text(encoding="utf-8"))
        historian = Historian(args.archive_dir, settings, inbox=args.inbox)
        receiver = FileReceiver(historian, args.listen)
        receiver.start()
    except (OSError, ValueError) as exc:
        print(f"error: cannot start ingest: {exc}", file=sys.stderr)
        return EXIT_STARTUP
    log.info("receiving files on %s:%d", *receiver.address)
    try:
        if args.http:
            import uvicorn

            from .api import create_app

            host, port = args.http
            uvicorn.run(create_app(historian), host=host, port=port, log_level=args.log_level.lower())
        else:
            threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        receiver.stop()
        historian.close()
    return EXIT_OK


# query / export -------------------------------------------------------------


def _query(args: argparse.Namespace) -> list[tuple[float, float | None]]:
    """Raises LookupError for unknown streams, ValueError for bad ranges."""
    interpolated = args.interval is not None
    if args.api:
        import httpx

        params: dict[str, float] = {}
        if args.t0 is not None:
            params["t0"] = args.t0
        if args.t1 is not None:
            params["t1"] = args.t1
        if interpolated:
            params["interval_s"] = args.interval
        mode = "interpolated" if interpolated else "raw"
        resp = httpx.get(f"{args.api.rstrip('/')}/streams/{args.stream}/{mode}", params=params, timeout=30.0)
        if resp.status_code == 404:
            raise LookupError(resp.json()["detail"]["error"])
        if resp.status_code != 200:
            raise ValueError(resp.text)
        return [(p["t"], p["value"]) for p in resp.json()["points"]]

    from .ingest import StreamArchive, StreamKey, UnknownStreamError

    if not Path(args.archive_dir).is_dir():
        raise LookupError(f"no archive at {args.archive_dir}")
    archive = StreamArchive(args.archive_dir)
    key = StreamKey.parse(args.stream)
    try:
        if interpolated:
            if args.t0 is None or args.t1 is None:
                raise ValueError("interpolated queries need --t0 and --t1")
            return archive.query_interpolated(key, args.t0, args.t1, args.interval)
        return archive.query_raw(
            key, -math.inf if args.t0 is None else args.t0, math.inf if args.t1 is None else args.t1
        )
    except UnknownStreamError as exc:
        raise LookupError(str(exc)) from None


def cmd_query(args: argparse.Namespace) -> int:
    try:
        points = _query(args)
    except LookupError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_STARTUP
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STARTUP
    text = format_points(points)
    out = getattr(args, "out", None)
    if out:
        Path(out).write_text(text, encoding="utf-8")
        print(f"wrote {len(points)} rows to {out}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="scenario seed")
    common.add_argument("--config", default=argparse.SUPPRESS, help="scenario INI file")
    common.add_argument("--log-level", default=argparse.SUPPRESS,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    p = argparse.ArgumentParser(prog="bibtwin", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run nodes -> gateway -> ingest end to end")
    s.add_argument("--nodes", type=int)
    s.add_argument("--duration", type=int, help="virtual seconds")
    s.add_argument("--sample-interval", type=int)
    s.add_argument("--report-interval", type=int)
    s.add_argument("--settings", help="default, zero, or a settings file")
    s.add_argument("--gateway-down", type=_window, action="append", metavar="START-END")
    s.add_argument("--channel-failure-prob", type=float)
    s.add_argument("--clock", choices=["virtual", "wall"])
    s.add_argument("--work-dir", help="keep spool and archive here instead of a temp dir")
    s.add_argument("--report", help="write the JSON report here instead of stdout")
    s.add_argument("--distributed", action="store_true", help="run gateway and ingest as subprocesses")
    s.set_defaults(func=cmd_simulate)

    ps = sub.add_parser("power-surface", parents=[common], help="battery lifetime over interval grids")
    ps.add_argument("--sample-grid", type=_grid, default=list(power.DEFAULT_SAMPLE_GRID))
    ps.add_argument("--report-grid", type=_grid, default=list(power.DEFAULT_REPORT_GRID))
    ps.add_argument("--out")
    ps.set_defaults(func=cmd_power_surface)

    g = sub.add_parser("serve-gateway", parents=[common], help="report listener plus distributor")
    g.add_argument("--listen", type=_hostport, default=("127.0.0.1", 7400))
    g.add_argument("--spool-root", default="spool")
    g.add_argument("--retention-days", type=int, default=10)
    g.add_argument("--poll-interval", type=float, default=30.0)
    g.add_argument("--batch-size", type=int, default=20)
    g.add_argument("--dest", type=_hostport, help="ingest receiver host:port")
    g.add_argument("--epoch", type=int, default=0, help="unix time of node timestamp 0")
    g.set_defaults(func=cmd_serve_gateway)

    i = sub.add_parser("serve-ingest", parents=[common], help="file receiver plus HTTP query service")
    i.add_argument("--listen", type=_hostport, default=("127.0.0.1", 7500))
    i.add_argument("--inbox", default="inbox")
    i.add_argument("--archive-dir", default="archive")
    i.add_argument("--settings-file")
    i.add_argument("--http", type=_hostport, help="serve the query API on host:port")
    i.set_defaults(func=cmd_serve_ingest)

    for name, helptext in (("query", "print a stream as t,value lines"), ("export", "write a stream to a file")):
        q = sub.add_parser(name, parents=[common], help=helptext)
        q.add_argument("stream", help="<device>.<stream>, e.g. 1.temp")
        q.add_argument("--archive-dir", default="archive")
        q.add_argument("--api", help="query a running service instead, e.g. http://127.0.0.1:8000")
        q.add_argument("--t0", type=float)
        q.add_argument("--t1", type=float)
        q.add_argument("--interval", type=float, help="interpolate on this grid step (seconds)")
        if name == "export":
            q.add_argument("--out", required=True)
        q.set_defaults(func=cmd_query)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("seed", None), ("config", None), ("log_level", "WARNING")):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
