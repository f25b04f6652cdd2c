"""Request and response models for the historian HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field, model_validator


class Health(BaseModel):
    status: str = "ok"
    streams: int


class StreamInfo(BaseModel):
    key: str
    device_id: int
    stream: str
    units: str
    points: int


class Point(BaseModel):
    t: float
    value: Optional[float]


class RawQuery(BaseModel):
    key: str
    t0: Optional[float]
    t1: Optional[float]
    points: list[Point]


class InterpolatedQuery(RawQuery):
    t0: float
    t1: float
    interval_s: float


class StreamCounters(BaseModel):
    points_in: int
    passed: int
    archived: int
    dedup: int
    conflicts: int
    stale: int
    rejected: int


class IngestStats(BaseModel):
    files: int
    lines: int
    s_lines: int
    e_lines: int
    parse_errors: int
    points_in: int
    archived: int
    streams: dict[str, StreamCounters]


class LifetimeRequest(BaseModel):
    sample_interval_s: float = Field(gt=0)
    report_interval_s: float = Field(gt=0)

    @model_validator(mode="after")
    def _order(self) -> "LifetimeRequest":
        if self.report_interval_s < self.sample_interval_s:
            raise ValueError("report_interval_s must be >= sample_interval_s")
        return self


class CurrentOut(BaseModel):
    comms_uA: float
    sensing_uA: float
    processing_uA: float
    sleep_uA: float
    total_uA: float


class LifetimeResponse(BaseModel):
    years: float
    capacity_Ah: float
    current: CurrentOut


class SurfaceRequest(BaseModel):
    sample_grid: list[float] = Field(min_length=1)
    report_grid: list[float] = Field(min_length=1)


class SurfaceResponse(BaseModel):
    sample_grid: list[float]
    report_grid: list[float]
    years: list[list[Optional[float]]]
