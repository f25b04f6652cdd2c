"""Spool-file line format shared by the gateway (writer) and ingest (parser).

::

    S,<device>,<unix_ts>,<temp_c:.2f>,<rh_pct:.2f>,<lux:int>,<ax_g:.3f>,<ay_g:.3f>,<az_g:.3f>,<occ_pct:.1f>
    E,<device>,<unix_ts>,OCC,<0|1>
    E,<device>,<unix_ts>,ORI,<x|y|z>,<+|->
"""

from __future__ import annotations

from dataclasses import dataclass

from .wire import Axis, Kind, SensorMessage

SAMPLE_STREAMS = ("temp", "rh", "lux", "ax", "ay", "az", "occ_pct")
EVENT_STREAMS = ("occ", "ori")
STREAM_UNITS = {
    "temp": "degC",
    "rh": "%RH",
    "lux": "lux",
    "ax": "g",
    "ay": "g",
    "az": "g",
    "occ_pct": "%",
    "occ": "state",
    "ori": "axis code (+-1 x, +-2 y, +-3 z)",
}
_AXES = "xyz"


class LineError(ValueError):
    pass


@dataclass(frozen=True)
class LineRecord:
    kind: str  # "S", "E-OCC" or "E-ORI"
    device_id: int
    timestamp: int
    values: tuple[float, ...]

    def points(self) -> list[tuple[str, float]]:
        """(stream, value) pairs this line contributes at ``timestamp``."""
        if self.kind == "S":
            return list(zip(SAMPLE_STREAMS, self.values))
        if self.kind == "E-OCC":
            return [("occ", self.values[0])]
        return [("ori", self.values[0])]

    def to_line(self) -> str:
        head = f"{self.device_id},{self.timestamp}"
        if self.kind == "S":
            t, rh, lux, ax, ay, az, occ = self.values
            return f"S,{head},{t:.2f},{rh:.2f},{int(lux)},{ax:.3f},{ay:.3f},{az:.3f},{occ:.1f}"
        if self.kind == "E-OCC":
            return f"E,{head},OCC,{int(self.values[0])}"
        code = int(self.values[0])
        return f"E,{head},ORI,{_AXES[abs(code) - 1]},{'+' if code > 0 else '-'}"


def record_from_message(msg: SensorMessage, epoch: int = 0) -> LineRecord:
    ts = epoch + msg.timestamp
    if msg.kind == Kind.SAMPLE:
        values = (
            msg.temperature / 100,
            msg.relative_humidity / 100,
            float(msg.illuminance),
            msg.accel_x / 1000,
            msg.accel_y / 1000,
            msg.accel_z / 1000,
            round(msg.occupancy_fraction * 100 / 255, 1),
        )
        return LineRecord("S", msg.device_id, ts, values)
    if msg.kind == Kind.OCC_EVENT:
        return LineRecord("E-OCC", msg.device_id, ts, (float(msg.state),))
    return LineRecord("E-ORI", msg.device_id, ts, (float((int(msg.dominant_axis) + 1) * msg.sign),))


def format_line(msg: SensorMessage, epoch: int = 0) -> str:
    return record_from_message(msg, epoch).to_line()


def _num(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise LineError(f"bad {what} {text!r}") from None


def _int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise LineError(f"bad {what} {text!r}") from None


def parse_line(line: str) -> LineRecord:
    parts = line.strip().split(",")
    tag = parts[0]
    if tag == "S":
        if len(parts) != 10:
            raise LineError(f"S line needs 10 fields, got {len(parts)}")
        values = tuple(_num(p, name) for p, name in zip(parts[3:], SAMPLE_STREAMS))
        return LineRecord("S", _int(parts[1], "device"), _int(parts[2], "timestamp"), values)
    if tag == "E" and len(parts) >= 4:
        device, ts = _int(parts[1], "device"), _int(parts[2], "timestamp")
        if parts[3] == "OCC":
            if len(parts) != 5 or parts[4] not in ("0", "1"):
                raise LineError("OCC event needs a 0/1 state")
            return LineRecord("E-OCC", device, ts, (float(parts[4]),))
        if parts[3] == "ORI":
            if len(parts) != 6 or parts[4] not in _AXES or parts[5] not in "+-" or not parts[5]:
                raise LineError("ORI event needs axis x|y|z and sign +|-")
            code = (_AXES.index(parts[4]) + 1) * (1 if parts[5] == "+" else -1)
            return LineRecord("E-ORI", device, ts, (float(code),))
        raise LineError(f"unknown event type {parts[3]!r}")
    raise LineError(f"unknown line tag {tag!r}")


@dataclass(frozen=True)
class ParseIssue:
    line_no: int
    text: str
    error: str


def parse_flat_file(text: str) -> tuple[list[LineRecord], list[ParseIssue]]:
    """Parse every line independently; bad lines are reported, never fatal."""
    records, issues = [], []
    for no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(parse_line(line))
        except LineError as exc:
            issues.append(ParseIssue(no, line, str(exc)))
    return records, issues


def orientation_code(axis: Axis, sign: int) -> int:
    return (int(axis) + 1) * sign
