"""HTTP surface of the aggregator.

Endpoint map:
  /timegate/{uri}      datetime negotiation, 302 to the closest memento
  /timemap/link/{uri}  link-format timemap
  /timetravel/{uri}    timemap, labeled as the TimeTravel service
  /extension/{uri}     timemap, labeled as the browser-extension service
  /admin/stats         counters since start

The four request endpoints differ only in the service label stamped on
their events, which is what lets simulations reproduce per-service cache
behavior without the production front-ends.
"""

from __future__ import annotations

from datetime import datetime, timezone
from typing import Callable, Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse

from memagg.engine import AggregationEngine
from memagg.errors import MalformedDatetime, MalformedUri
from memagg.memento import (
    closest_memento,
    format_http_datetime,
    parse_http_datetime,
    serialize_timemap_link,
)


def create_app(
    engine: AggregationEngine,
    clock: Optional[Callable[[], datetime]] = None,
) -> FastAPI:
    app = FastAPI(title="memagg", docs_url=None, redoc_url=None)
    clock = clock or (lambda: datetime.now(timezone.utc))
    started_at = clock()

    def full_uri(uri: str, request: Request) -> str:
        # The query string of the target URI lands on the request itself;
        # reattach it so "?q=1" survives the path-parameter split.
        query = request.url.query
        return f"{uri}?{query}" if query else uri

    def accept_datetime_of(request: Request, now: datetime) -> datetime:
        header = request.headers.get("accept-datetime")
        if header is None:
            return now
        return parse_http_datetime(header)

    def handle(service: str, uri: str, request: Request):
        now = clock()
        try:
            accept_dt = accept_datetime_of(request, now)
            tm, event = engine.handle_request(
                service, full_uri(uri, request), accept_dt, now=now
            )
        except (MalformedUri, MalformedDatetime) as exc:
            return None, None, PlainTextResponse(str(exc), status_code=400)
        return tm, accept_dt, None

    @app.get("/timegate/{uri:path}")
    def timegate(uri: str, request: Request):
        tm, accept_dt, error = handle("Redirect", uri, request)
        if error is not None:
            return error
        chosen = closest_memento(tm, accept_dt)
        if chosen is None:
            return PlainTextResponse(
                f"no archived copies known for {tm.original.normalized}",
                status_code=404,
                headers={"Link": f'<{tm.original.normalized}>; rel="original"'},
            )
        links = (
            f'<{tm.original.normalized}>; rel="original", '
            f'<{chosen.uri_m}>; rel="memento"; '
            f'datetime="{format_http_datetime(chosen.datetime)}"'
        )
        return Response(
            status_code=302,
            headers={
                "Location": chosen.uri_m,
                "Link": links,
                "Memento-Datetime": format_http_datetime(chosen.datetime),
                "Vary": "accept-datetime",
            },
        )

    def timemap_response(service: str, uri: str, request: Request):
        tm, _accept_dt, error = handle(service, uri, request)
        if error is not None:
            return error
        return Response(
            content=serialize_timemap_link(tm),
            media_type="application/link-format",
        )

    @app.get("/timemap/link/{uri:path}")
    def timemap(uri: str, request: Request):
        return timemap_response("Api", uri, request)

    @app.get("/timetravel/{uri:path}")
    def timetravel(uri: str, request: Request):
        return timemap_response("TimeTravel", uri, request)

    @app.get("/extension/{uri:path}")
    def extension(uri: str, request: Request):
        return timemap_response("Extension", uri, request)

    @app.get("/admin/stats")
    def stats():
        payload = {
            "started_at": started_at.isoformat(),
            "counters": engine.snapshot_stats(),
            "cache_records": len(engine.cache),
            "models": {
                archive_id: model.trained_at.isoformat()
                for archive_id, model in sorted(engine.registry.models.items())
            },
        }
        return JSONResponse(payload)

    return app
