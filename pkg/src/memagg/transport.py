"""Upstream timegate transports.

A transport issues one datetime-negotiated request and reports what came
back without ever raising: timeouts, connection failures, and upstream
errors are all data. The `blocking` attribute tells the engine whether
calls actually wait on I/O (and so are worth fanning out onto threads).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from datetime import datetime
from typing import Optional

import httpx

from memagg.memento import ArchiveDescriptor, Memento, format_http_datetime, parse_timemap_link


@dataclass(frozen=True, slots=True)
class TimegateReply:
    """Raw transport result: kind is holds | empty | timeout | error."""

    kind: str
    mementos: tuple[Memento, ...]
    latency: float
    status: Optional[int]


class HttpTransport:
    """Real HTTP client against configured timegate endpoint templates."""

    blocking = True

    def __init__(self) -> None:
        self._client = httpx.Client(follow_redirects=False)

    def close(self) -> None:
        self._client.close()

    def timegate(
        self,
        descriptor: ArchiveDescriptor,
        uri_r: str,
        accept_datetime: datetime,
        timeout: float,
    ) -> TimegateReply:
        url = descriptor.timegate_endpoint.replace("{uri}", uri_r)
        headers = {"Accept-Datetime": format_http_datetime(accept_datetime)}
        start = time.perf_counter()
        try:
            resp = self._client.get(url, headers=headers, timeout=timeout)
        except httpx.TimeoutException:
            return TimegateReply("timeout", (), timeout, None)
        except httpx.HTTPError:
            return TimegateReply("error", (), time.perf_counter() - start, None)
        latency = time.perf_counter() - start
        if resp.status_code == 200:
            try:
                tm = parse_timemap_link(resp.text, accept_datetime)
            except ValueError:  # malformed upstream body
                return TimegateReply("error", (), latency, resp.status_code)
            if tm.mementos:
                return TimegateReply("holds", tm.mementos, latency, resp.status_code)
            return TimegateReply("empty", (), latency, resp.status_code)
        if resp.status_code == 404:
            return TimegateReply("empty", (), latency, resp.status_code)
        return TimegateReply("error", (), latency, resp.status_code)
