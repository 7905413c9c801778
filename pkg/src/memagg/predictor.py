"""Per-archive binary holdings classifiers.

One independent L2-regularized logistic regression per archive, trained by
full-batch gradient descent. Training is deterministic: samples are sorted
by a stable key, shuffled with the configured seed, and fitted with fixed
float64 arithmetic, so identical inputs produce bitwise-identical weights.

The prediction path does no I/O and is O(schema length) per archive.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Mapping, Optional, Sequence

import numpy as np

from memagg.errors import (
    CorruptModel,
    EmptyTrainingSet,
    SchemaMismatch,
    VersionMismatch,
)
from memagg.features import FeatureSchema, FeatureVector, extract_features
from memagg.memento import ArchiveDescriptor, OriginalUri

logger = logging.getLogger(__name__)

MODEL_FORMAT = "memagg-model"
MODEL_VERSION = 1


@dataclass(frozen=True, slots=True)
class ArchiveModel:
    """Weights, bias, and decision threshold for one archive."""

    archive_id: str
    weights: tuple[float, ...]
    bias: float
    schema_hash: str
    trained_at: datetime
    training_sample_count: int
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie strictly in (0,1): {self.threshold}")


@dataclass(frozen=True, slots=True)
class TrainingSample:
    """One labeled observation: did the archive hold this URI-R."""

    features: FeatureVector
    label: int
    observed_at: datetime

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True, slots=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 400
    l2: float = 1e-4
    seed: int = 0


def logistic(z: float) -> float:
    """Numerically stable sigmoid."""
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def predict(model: ArchiveModel, f: FeatureVector) -> tuple[bool, float]:
    """Score one feature vector: (score >= threshold, logistic(w.x + b))."""
    if f.schema_hash != model.schema_hash:
        raise SchemaMismatch(
            f"feature schema {f.schema_hash[:12]} does not match model "
            f"{model.archive_id!r} schema {model.schema_hash[:12]}"
        )
    z = model.bias
    for w, x in zip(model.weights, f.numeric):
        z += w * x
    score = logistic(z)
    return score >= model.threshold, score


class ModelRegistry:
    """Archive descriptors plus the trained model for each modeled archive.

    Always-query archives (no model) are never part of the predicted set;
    they are queried unconditionally and excluded from recall accounting.
    """

    def __init__(
        self,
        descriptors: Sequence[ArchiveDescriptor],
        models: Mapping[str, ArchiveModel],
    ) -> None:
        ids = [d.archive_id for d in descriptors]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate archive_id in registry")
        self.descriptors: tuple[ArchiveDescriptor, ...] = tuple(descriptors)
        self.models: dict[str, ArchiveModel] = dict(models)
        for d in self.descriptors:
            if d.has_model and d.archive_id not in self.models:
                raise ValueError(f"archive {d.archive_id!r} declared has_model but no model given")
        hashes = {m.schema_hash for m in self.models.values()}
        if len(hashes) > 1:
            raise SchemaMismatch("registry models were trained under different schemas")

    @property
    def archive_ids(self) -> tuple[str, ...]:
        return tuple(d.archive_id for d in self.descriptors)

    @property
    def modeled_ids(self) -> tuple[str, ...]:
        return tuple(d.archive_id for d in self.descriptors if d.has_model)

    @property
    def always_query_ids(self) -> tuple[str, ...]:
        return tuple(d.archive_id for d in self.descriptors if d.always_query)

    def descriptor(self, archive_id: str) -> ArchiveDescriptor:
        for d in self.descriptors:
            if d.archive_id == archive_id:
                return d
        raise KeyError(archive_id)

    @classmethod
    def degrade_missing(
        cls,
        descriptors: Sequence[ArchiveDescriptor],
        models: Mapping[str, ArchiveModel],
    ) -> "ModelRegistry":
        """Build a registry, demoting model-less archives to always-query.

        Matches the service contract: a has_model archive whose model file
        is absent or unreadable degrades to unconditional querying with a
        logged warning instead of failing startup.
        """
        adjusted = []
        for d in descriptors:
            if d.has_model and d.archive_id not in models:
                logger.warning(
                    "archive %s has no loadable model; degrading to always_query",
                    d.archive_id,
                )
                d = replace(d, has_model=False, always_query=True)
            adjusted.append(d)
        return cls(adjusted, models)


def predict_set(registry: ModelRegistry, f: FeatureVector) -> set[str]:
    """Archive ids whose model predicts a holding for these features.

    Always-query archives are deliberately absent; callers obtain them from
    registry.always_query_ids and query them unconditionally.
    """
    predicted: set[str] = set()
    for d in registry.descriptors:
        if not d.has_model:
            continue
        hit, _score = predict(registry.models[d.archive_id], f)
        if hit:
            predicted.add(d.archive_id)
    return predicted


def loss_and_grad(
    weights: np.ndarray,
    bias: float,
    X: np.ndarray,
    y: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, float]:
    """Mean cross-entropy with L2 penalty on the weights (bias excluded).

    Returns (loss, grad_weights, grad_bias). Kept standalone so the
    analytic gradient can be checked against finite differences.
    """
    n = X.shape[0]
    z = X @ weights + bias
    # log(1 + exp(z)) computed stably for both signs of z.
    log1pexp = np.where(z > 0, z + np.log1p(np.exp(-np.abs(z))), np.log1p(np.exp(z)))
    loss = float(np.mean(log1pexp - y * z) + 0.5 * l2 * np.dot(weights, weights))
    p = 1.0 / (1.0 + np.exp(-z))
    residual = p - y
    grad_w = X.T @ residual / n + l2 * weights
    grad_b = float(np.mean(residual))
    return loss, grad_w, grad_b


def _sample_sort_key(s: TrainingSample) -> tuple:
    return (s.features.numeric, s.label, s.observed_at.isoformat())


def train(
    samples: Sequence[TrainingSample],
    config: TrainConfig = TrainConfig(),
    archive_id: str = "",
    threshold: float = 0.5,
    trained_at: Optional[datetime] = None,
) -> ArchiveModel:
    """Fit a logistic regression by full-batch gradient descent.

    Features are standardized internally for conditioning; the scaler is
    folded back into the returned weights and bias, so prediction remains
    a plain dot product against raw feature vectors.
    """
    if not samples:
        raise EmptyTrainingSet("cannot train on zero samples")
    schema_hashes = {s.features.schema_hash for s in samples}
    if len(schema_hashes) != 1:
        raise SchemaMismatch("training samples span multiple feature schemas")
    labels = {s.label for s in samples}
    if len(labels) == 1:
        logger.warning(
            "archive %s: training set has a single class (%d); model will be degenerate",
            archive_id or "<unnamed>",
            labels.pop(),
        )

    ordered = sorted(samples, key=_sample_sort_key)
    random.Random(config.seed).shuffle(ordered)

    X = np.array([s.features.numeric for s in ordered], dtype=np.float64)
    y = np.array([s.label for s in ordered], dtype=np.float64)

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    Xs = (X - mean) / std

    w = np.zeros(X.shape[1], dtype=np.float64)
    b = 0.0
    for _ in range(config.epochs):
        _, grad_w, grad_b = loss_and_grad(w, b, Xs, y, config.l2)
        w -= config.learning_rate * grad_w
        b -= config.learning_rate * grad_b

    # Fold the scaler back: logistic(w.(x-mean)/std + b) == logistic(w'.x + b').
    w_raw = w / std
    b_raw = float(b - np.dot(w, mean / std))

    return ArchiveModel(
        archive_id=archive_id,
        weights=tuple(float(v) for v in w_raw),
        bias=b_raw,
        schema_hash=next(iter(schema_hashes)),
        trained_at=trained_at or datetime.now(timezone.utc),
        training_sample_count=len(samples),
        threshold=threshold,
    )


def train_from_events(
    events: Sequence,
    descriptors: Sequence[ArchiveDescriptor],
    schema: FeatureSchema,
    config: TrainConfig = TrainConfig(),
    window: Optional[int] = None,
    trained_at: Optional[datetime] = None,
) -> dict[str, ArchiveModel]:
    """Fit one model per modeled archive from backfilled event ground truth.

    Eligible events are those with completed backfill and a non-Hit cache
    outcome: the archive label is 1 iff it appears in the event's final
    holder set. `window` keeps only the most recent N eligible events,
    which is how retraining tracks a drifting archive index.
    """
    from memagg.features import extract_features
    from memagg.memento import OriginalUri

    eligible = [
        e for e in events if e.completed_backfill and e.cache_outcome != "Hit"
    ]
    if window is not None:
        eligible = eligible[-window:]
    if not eligible:
        raise EmptyTrainingSet("no completed-backfill events to train from")

    feature_cache: dict[str, FeatureVector] = {}
    models: dict[str, ArchiveModel] = {}
    for d in descriptors:
        if not d.has_model:
            continue
        samples = []
        for e in eligible:
            f = feature_cache.get(e.uri_r)
            if f is None:
                f = extract_features(OriginalUri(e.uri_r, e.uri_r), schema)
                feature_cache[e.uri_r] = f
            samples.append(
                TrainingSample(
                    features=f,
                    label=int(d.archive_id in e.final_holders),
                    observed_at=e.timestamp,
                )
            )
        models[d.archive_id] = train(
            samples, config, archive_id=d.archive_id, trained_at=trained_at
        )
    return models


def save_model(model: ArchiveModel, schema: Optional[FeatureSchema] = None) -> bytes:
    """Serialize a model to a versioned, round-trip-stable container."""
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "archive_id": model.archive_id,
        "schema_hash": model.schema_hash,
        "schema": schema.to_dict() if schema is not None else None,
        "weights": list(model.weights),
        "bias": model.bias,
        "threshold": model.threshold,
        "trained_at": model.trained_at.isoformat(),
        "training_sample_count": model.training_sample_count,
    }
    return json.dumps(payload, separators=(",", ":")).encode("utf-8")


def load_model(data: bytes, expected_schema_hash: Optional[str] = None) -> ArchiveModel:
    """Decode model bytes; raises CorruptModel / VersionMismatch / SchemaMismatch."""
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptModel("model bytes are not a complete JSON document") from None
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise CorruptModel("not a model container")
    if payload.get("version") != MODEL_VERSION:
        raise VersionMismatch(
            f"model version {payload.get('version')!r}, expected {MODEL_VERSION}"
        )
    try:
        model = ArchiveModel(
            archive_id=payload["archive_id"],
            weights=tuple(float(v) for v in payload["weights"]),
            bias=float(payload["bias"]),
            schema_hash=payload["schema_hash"],
            trained_at=datetime.fromisoformat(payload["trained_at"]),
            training_sample_count=int(payload["training_sample_count"]),
            threshold=float(payload["threshold"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"model container missing or mangled fields: {exc}") from None
    if expected_schema_hash is not None and model.schema_hash != expected_schema_hash:
        raise SchemaMismatch(
            f"model {model.archive_id!r} was trained under schema "
            f"{model.schema_hash[:12]}, registry expects {expected_schema_hash[:12]}"
        )
    return model
