"""Service configuration: one human-editable YAML file.

The default registry ships the thirteen modeled archives the aggregator
evaluates plus the Internet Archive, which carries no prediction model
and is queried unconditionally on every miss.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from datetime import timedelta
from pathlib import Path
from typing import Optional

import yaml

from memagg.cache import CachePolicy
from memagg.engine import EngineConfig
from memagg.features import DEFAULT_TLD_VOCABULARY
from memagg.memento import ArchiveDescriptor
from memagg.simarchive import SimArchiveSpec, WorkloadSpec

CONFIG_FORMAT = "memagg-config"
CONFIG_VERSION = 1

_PLACEHOLDER_ENDPOINT = "http://{aid}.timegate.invalid/timegate/{{uri}}"

_DEFAULT_ARCHIVE_TABLE = (
    ("archive.is", "Archive.is"),
    ("archive-it", "Archive-It"),
    ("ba", "Bibliotheca Alexandrina Web Archive"),
    ("blarchive", "UK Web Archive"),
    ("bsb", "Bayerische Staatsbibliothek"),
    ("gcwa", "Canadian Archive"),
    ("loc", "Library of Congress"),
    ("nli", "National Library of Ireland"),
    ("perma", "Perma.cc"),
    ("proni", "The Public Record Office of Northern Ireland"),
    ("pt", "Arquivo.pt"),
    ("swa", "Stanford Web Archive"),
    ("uknatarch", "UK National Archives Web Archive"),
)


def default_archives() -> list[ArchiveDescriptor]:
    """Thirteen modeled archives plus the model-less Internet Archive."""
    archives = [
        ArchiveDescriptor(
            archive_id=aid,
            name=name,
            timegate_endpoint=_PLACEHOLDER_ENDPOINT.format(aid=aid),
            has_model=True,
            always_query=False,
        )
        for aid, name in _DEFAULT_ARCHIVE_TABLE
    ]
    archives.append(
        ArchiveDescriptor(
            archive_id="ia",
            name="Internet Archive",
            timegate_endpoint=_PLACEHOLDER_ENDPOINT.format(aid="ia"),
            has_model=False,
            always_query=True,
        )
    )
    return archives


@dataclass(slots=True)
class ServiceConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8080
    archives: list[ArchiveDescriptor] = field(default_factory=default_archives)
    cache_policy: CachePolicy = field(default_factory=CachePolicy)
    first_phase_timeout: float = 3.0
    backfill_timeout: float = 30.0
    backfill_batch_delay: float = 0.0
    model_dir: str = "models"
    event_log: str = "events.jsonl"
    cache_file: Optional[str] = "cache.jsonl"
    tld_vocabulary: tuple[str, ...] = DEFAULT_TLD_VOCABULARY
    simulators: list[SimArchiveSpec] = field(default_factory=list)
    sim_transport: str = "inprocess"  # inprocess | http
    workload: Optional[WorkloadSpec] = None

    def __post_init__(self) -> None:
        ids = [a.archive_id for a in self.archives]
        if len(set(ids)) != len(ids):
            raise ValueError("archive_ids must be unique")
        if self.sim_transport not in ("inprocess", "http"):
            raise ValueError(f"unknown sim_transport {self.sim_transport!r}")

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            first_phase_timeout=self.first_phase_timeout,
            backfill_timeout=self.backfill_timeout,
            backfill_batch_delay=self.backfill_batch_delay,
            cache_policy=self.cache_policy,
        )

    def to_dict(self) -> dict:
        return {
            "format": CONFIG_FORMAT,
            "version": CONFIG_VERSION,
            "listen_host": self.listen_host,
            "listen_port": self.listen_port,
            "archives": [
                {
                    "archive_id": a.archive_id,
                    "name": a.name,
                    "timegate_endpoint": a.timegate_endpoint,
                    "has_model": a.has_model,
                    "always_query": a.always_query,
                }
                for a in self.archives
            ],
            "cache_policy": {
                "fresh_days": self.cache_policy.fresh_duration.total_seconds() / 86400,
                "stale_days": self.cache_policy.stale_duration.total_seconds() / 86400,
            },
            "first_phase_timeout": self.first_phase_timeout,
            "backfill_timeout": self.backfill_timeout,
            "backfill_batch_delay": self.backfill_batch_delay,
            "model_dir": self.model_dir,
            "event_log": self.event_log,
            "cache_file": self.cache_file,
            "tld_vocabulary": list(self.tld_vocabulary),
            "simulators": [s.to_dict() for s in self.simulators],
            "sim_transport": self.sim_transport,
            "workload": self.workload.to_dict() if self.workload else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceConfig":
        if d.get("format", CONFIG_FORMAT) != CONFIG_FORMAT:
            raise ValueError("not a memagg config document")
        if d.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {d.get('version')!r}")
        policy = d.get("cache_policy", {})
        workload = d.get("workload")
        return cls(
            listen_host=d.get("listen_host", "127.0.0.1"),
            listen_port=int(d.get("listen_port", 8080)),
            archives=[
                ArchiveDescriptor(
                    archive_id=a["archive_id"],
                    name=a.get("name", a["archive_id"]),
                    timegate_endpoint=a["timegate_endpoint"],
                    has_model=bool(a.get("has_model", True)),
                    always_query=bool(a.get("always_query", False)),
                )
                for a in d.get("archives", [])
            ]
            or default_archives(),
            cache_policy=CachePolicy(
                fresh_duration=timedelta(days=float(policy.get("fresh_days", 30))),
                stale_duration=timedelta(days=float(policy.get("stale_days", 30))),
            ),
            first_phase_timeout=float(d.get("first_phase_timeout", 3.0)),
            backfill_timeout=float(d.get("backfill_timeout", 30.0)),
            backfill_batch_delay=float(d.get("backfill_batch_delay", 0.0)),
            model_dir=d.get("model_dir", "models"),
            event_log=d.get("event_log", "events.jsonl"),
            cache_file=d.get("cache_file"),
            tld_vocabulary=tuple(d.get("tld_vocabulary", DEFAULT_TLD_VOCABULARY)),
            simulators=[SimArchiveSpec.from_dict(s) for s in d.get("simulators", [])],
            sim_transport=d.get("sim_transport", "inprocess"),
            workload=WorkloadSpec.from_dict(workload) if workload else None,
        )


def apply_env_overrides(config: ServiceConfig, env: Optional[dict] = None) -> ServiceConfig:
    """Apply MEMAGG_LISTEN (host:port) and MEMAGG_EVENT_LOG overrides."""
    env = env if env is not None else dict(os.environ)
    listen = env.get("MEMAGG_LISTEN")
    if listen:
        host, _, port = listen.rpartition(":")
        config = replace(
            config,
            listen_host=host or config.listen_host,
            listen_port=int(port) if port else config.listen_port,
        )
    event_log = env.get("MEMAGG_EVENT_LOG")
    if event_log:
        config = replace(config, event_log=event_log)
    return config


def load_config(path: str | Path) -> ServiceConfig:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return ServiceConfig.from_dict(data)


def save_config(config: ServiceConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
