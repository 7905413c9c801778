"""Command-line entry points: serve, simulate, train, analyze, purge-cache."""

from __future__ import annotations

import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import click

from memagg import analytics
from memagg.cache import MementoCache
from memagg.config import ServiceConfig, apply_env_overrides, load_config
from memagg.errors import AggregatorError
from memagg.events import read_events, write_events
from memagg.features import feature_schema
from memagg.predictor import (
    ModelRegistry,
    TrainConfig,
    load_model,
    save_model,
    train_from_events,
)
from memagg.simulate import run_simulation


def _load_config(path: str | None) -> ServiceConfig:
    if path is None:
        return apply_env_overrides(ServiceConfig())
    try:
        return apply_env_overrides(load_config(path))
    except (OSError, ValueError) as exc:
        raise click.ClickException(f"cannot load config {path}: {exc}")


def _load_models(config: ServiceConfig, schema) -> dict:
    models = {}
    model_dir = Path(config.model_dir)
    if not model_dir.is_dir():
        return models
    for path in sorted(model_dir.glob("*.model.json")):
        try:
            model = load_model(path.read_bytes(), expected_schema_hash=schema.schema_hash)
        except AggregatorError as exc:
            click.echo(f"warning: skipping {path.name}: {exc}", err=True)
            continue
        models[model.archive_id] = model
    return models


@click.group()
def main():
    """Memento aggregation service, simulator, and analytics toolkit."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--host", default=None, help="Override listen host.")
@click.option("--port", type=int, default=None, help="Override listen port.")
def serve(config_path, host, port):
    """Run the aggregator HTTP service."""
    import uvicorn

    from dataclasses import replace as dc_replace

    from memagg.engine import AggregationEngine
    from memagg.events import EventLogWriter
    from memagg.service import create_app
    from memagg.simarchive import (
        InProcessTransport,
        SimArchive,
        SimArchiveHttpServer,
        SimClock,
    )
    from memagg.transport import HttpTransport

    config = _load_config(config_path)
    schema = feature_schema(config.tld_vocabulary)
    models = _load_models(config, schema)
    archives = config.archives
    sim_server = None
    if config.simulators and config.sim_transport == "inprocess":
        clock = SimClock()
        transport = InProcessTransport(
            [SimArchive(s) for s in config.simulators], clock, real_sleep=True
        )
    elif config.simulators and config.sim_transport == "http":
        clock = SimClock()
        sim_server = SimArchiveHttpServer([SimArchive(s) for s in config.simulators], clock)
        sim_server.start()
        archives = [
            dc_replace(a, timegate_endpoint=sim_server.endpoint_for(a.archive_id))
            for a in archives
        ]
        transport = HttpTransport()
        click.echo(f"simulated archives listening on 127.0.0.1:{sim_server.port}")
    else:
        transport = HttpTransport()

    registry = ModelRegistry.degrade_missing(archives, models)
    cache = MementoCache(policy=config.cache_policy, path=config.cache_file)
    engine = AggregationEngine(
        registry=registry,
        cache=cache,
        transport=transport,
        event_sink=EventLogWriter(config.event_log),
        config=config.engine_config(),
        schema=schema,
        backfill_mode="thread",
    )
    app = create_app(engine)
    try:
        uvicorn.run(app, host=host or config.listen_host, port=port or config.listen_port)
    finally:
        engine.shutdown()
        if sim_server is not None:
            sim_server.stop()


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=None, help="Override workload seed.")
@click.option("--events", "events_path", type=click.Path(), required=True,
              help="Where to write the event log.")
@click.option("--models", "model_dir", type=click.Path(), default=None,
              help="Model directory to load before simulating.")
@click.option("--transport", type=click.Choice(["inprocess", "http"]), default=None)
def simulate(config_path, seed, events_path, model_dir, transport):
    """Run the configured workload against simulated archives."""
    config = _load_config(config_path)
    if config.workload is None:
        raise click.ClickException("config has no workload section")
    if not config.simulators:
        raise click.ClickException("config has no simulators section")
    workload = config.workload
    if seed is not None:
        workload = replace(workload, seed=seed)
    if model_dir is not None:
        config = replace(config, model_dir=model_dir)
    schema = feature_schema(config.tld_vocabulary)
    models = _load_models(config, schema)
    result = run_simulation(
        archives=config.archives,
        sim_specs=config.simulators,
        workload=workload,
        engine_config=config.engine_config(),
        models=models,
        schema=schema,
        transport_kind=transport or config.sim_transport,
    )
    count = write_events(events_path, result.events)
    click.echo(f"wrote {count} events to {events_path}")
    click.echo(
        "cache: {cache_hits} hits, {stale_misses} stale, {cold_misses} cold".format(
            **result.stats
        )
    )


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--events", "events_path", type=click.Path(exists=True), required=True)
@click.option("--models", "model_dir", type=click.Path(), default=None,
              help="Output directory (defaults to the config's model_dir).")
@click.option("--window", type=int, default=None,
              help="Train on only the most recent N eligible events.")
@click.option("--seed", type=int, default=0)
@click.option("--epochs", type=int, default=400)
@click.option("--learning-rate", type=float, default=0.5)
@click.option("--l2", type=float, default=1e-4)
def train(config_path, events_path, model_dir, window, seed, epochs, learning_rate, l2):
    """Fit per-archive models from an event log window."""
    config = _load_config(config_path)
    schema = feature_schema(config.tld_vocabulary)
    events = list(read_events(events_path))
    try:
        models = train_from_events(
            events,
            config.archives,
            schema,
            TrainConfig(learning_rate=learning_rate, epochs=epochs, l2=l2, seed=seed),
            window=window,
        )
    except AggregatorError as exc:
        raise click.ClickException(str(exc))
    out_dir = Path(model_dir or config.model_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for archive_id, model in sorted(models.items()):
        (out_dir / f"{archive_id}.model.json").write_bytes(save_model(model, schema))
        click.echo(
            f"{archive_id}: trained on {model.training_sample_count} samples "
            f"at {model.trained_at.isoformat()}"
        )
    click.echo(f"wrote {len(models)} models to {out_dir}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--events", "events_path", type=click.Path(exists=True), required=True)
@click.option("--report", type=click.Choice(["cache", "recall", "fp", "churn"]),
              default="cache")
@click.option("--format", "fmt", type=click.Choice(["csv", "text"]), default="text")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the report to a file instead of stdout.")
def analyze(config_path, events_path, report, fmt, out_path):
    """Compute a report from an event log."""
    config = _load_config(config_path)
    events = list(read_events(events_path))
    try:
        if report == "cache":
            result = analytics.compute_cache_ratios(events)
        elif report == "recall":
            result = analytics.compute_recall_fp(events, config.archives)
        elif report == "fp":
            result = analytics.compute_fp_comparison(events, config.archives)
        else:
            result = analytics.compute_churn(events)
    except AggregatorError as exc:
        raise click.ClickException(str(exc))
    payload = analytics.emit_report(result, fmt)
    if out_path:
        Path(out_path).write_bytes(payload)
        click.echo(f"wrote report to {out_path}")
    else:
        sys.stdout.write(payload.decode("utf-8"))


@main.command("purge-cache")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
def purge_cache(config_path):
    """Drop expired cache records and compact the snapshot file."""
    config = _load_config(config_path)
    if not config.cache_file:
        raise click.ClickException("config has no cache_file")
    try:
        cache = MementoCache(policy=config.cache_policy, path=config.cache_file)
    except AggregatorError as exc:
        raise click.ClickException(str(exc))
    removed = cache.compact(datetime.now(timezone.utc))
    cache.close()
    click.echo(f"removed {removed} expired records; {len(cache)} remain")


if __name__ == "__main__":
    main()
