"""HTTP front end over a running historian and the power model."""

from __future__ import annotations

import math

from fastapi import FastAPI, HTTPException, Query

from .. import power
from ..flatfile import STREAM_UNITS
from ..ingest import Historian, StreamKey, UnknownStreamError
from . import schemas


def _key(text: str) -> StreamKey:
    try:
        return StreamKey.parse(text)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None


def create_app(historian: Historian) -> FastAPI:
    app = FastAPI(title="bibtwin historian", version="0.1.0")
    archive = historian.archive

    @app.get("/health", response_model=schemas.Health)
    def health() -> schemas.Health:
        return schemas.Health(streams=len(archive.streams()))

    @app.get("/streams", response_model=list[schemas.StreamInfo])
    def streams() -> list[schemas.StreamInfo]:
        out = []
        for k in archive.streams():
            out.append(
                schemas.StreamInfo(
                    key=str(k),
                    device_id=k.device_id,
                    stream=k.stream,
                    units=STREAM_UNITS.get(k.stream, "?"),
                    points=len(archive.read(k)),
                )
            )
        return out

    @app.get("/streams/{key}/raw", response_model=schemas.RawQuery)
    def raw(key: str, t0: float | None = None, t1: float | None = None) -> schemas.RawQuery:
        k = _key(key)
        try:
            pts = archive.query_raw(k, -math.inf if t0 is None else t0, math.inf if t1 is None else t1)
        except UnknownStreamError as exc:
            raise HTTPException(status_code=404, detail={"error": str(exc), "known": exc.known}) from None
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return schemas.RawQuery(key=key, t0=t0, t1=t1, points=[schemas.Point(t=t, value=v) for t, v in pts])

    @app.get("/streams/{key}/interpolated", response_model=schemas.InterpolatedQuery)
    def interpolated(
        key: str,
        t0: float,
        t1: float,
        interval_s: float = Query(gt=0),
    ) -> schemas.InterpolatedQuery:
        k = _key(key)
        try:
            pts = archive.query_interpolated(k, t0, t1, interval_s)
        except UnknownStreamError as exc:
            raise HTTPException(status_code=404, detail={"error": str(exc), "known": exc.known}) from None
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return schemas.InterpolatedQuery(
            key=key, t0=t0, t1=t1, interval_s=interval_s,
            points=[schemas.Point(t=t, value=v) for t, v in pts],
        )

    @app.get("/stats", response_model=schemas.IngestStats)
    def stats() -> schemas.IngestStats:
        return schemas.IngestStats(**historian.summary(), streams=historian.stream_counters())

    @app.post("/power/lifetime", response_model=schemas.LifetimeResponse)
    def lifetime(req: schemas.LifetimeRequest) -> schemas.LifetimeResponse:
        try:
            lt = power.lifetime_years(
                power.PowerProfile(), power.BatterySpec(), req.sample_interval_s, req.report_interval_s
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        c = lt.current
        return schemas.LifetimeResponse(
            years=lt.years,
            capacity_Ah=lt.capacity_Ah,
            current=schemas.CurrentOut(
                comms_uA=c.comms_uA, sensing_uA=c.sensing_uA, processing_uA=c.processing_uA,
                sleep_uA=c.sleep_uA, total_uA=c.total_uA,
            ),
        )

    @app.post("/power/surface", response_model=schemas.SurfaceResponse)
    def surface(req: schemas.SurfaceRequest) -> schemas.SurfaceResponse:
        try:
            s = power.lifetime_surface(power.PowerProfile(), power.BatterySpec(), req.sample_grid, req.report_grid)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        years = [[None if math.isnan(v) else float(v) for v in row] for row in s.years]
        return schemas.SurfaceResponse(sample_grid=s.sample_grid, report_grid=s.report_grid, years=years)

    return app
