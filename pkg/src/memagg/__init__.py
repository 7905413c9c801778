"""memagg: cache-first Memento aggregation with predictive archive routing."""

__version__ = "0.1.0"

from memagg.memento import (  # noqa: F401
    ArchiveDescriptor,
    Memento,
    OriginalUri,
    TimeMap,
    closest_memento,
    format_http_datetime,
    normalize_uri,
    parse_http_datetime,
    parse_timemap_link,
    serialize_timemap_link,
)
