"""Classifier features derived from a normalized URI.

Extraction is a pure function of the normalized URI string: simple lexical
counts plus a one-hot top-level-domain block over a fixed vocabulary with
an "other" bucket, so model dimensionality never grows with unseen TLDs.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from urllib.parse import urlsplit

from memagg.errors import DuplicateVocabularyEntry
from memagg.memento import OriginalUri

# Token delimiters for the token_count feature.
_TOKEN_SPLIT_RE = re.compile(r"[/.\-_?&=]")

SCALAR_FIELDS = (
    "uri_length",
    "token_count",
    "path_depth",
    "has_query",
    "query_param_count",
    "domain_token_count",
)

DEFAULT_TLD_VOCABULARY = (
    "com", "org", "net", "edu", "gov", "uk", "de", "fr", "jp", "io",
)


@dataclass(frozen=True, slots=True)
class FeatureSchema:
    """Fixed layout of the numeric feature vector.

    The layout is the scalar fields in declared order followed by one slot
    per vocabulary TLD plus the trailing "other" bucket. The schema hash is
    persisted with every trained model; predict refuses mismatched hashes.
    """

    tld_vocabulary: tuple[str, ...]

    @property
    def length(self) -> int:
        return len(SCALAR_FIELDS) + len(self.tld_vocabulary) + 1

    @property
    def field_names(self) -> tuple[str, ...]:
        return SCALAR_FIELDS + tuple(
            f"tld_{t}" for t in self.tld_vocabulary
        ) + ("tld_other",)

    @property
    def schema_hash(self) -> str:
        blob = json.dumps(
            {"fields": list(SCALAR_FIELDS), "tld_vocabulary": list(self.tld_vocabulary)},
            separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        return {"tld_vocabulary": list(self.tld_vocabulary)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return feature_schema(d["tld_vocabulary"])


def feature_schema(tld_vocabulary) -> FeatureSchema:
    """Build a schema for an ordered TLD vocabulary; rejects duplicates."""
    vocab = tuple(tld_vocabulary)
    if not vocab:
        raise ValueError("tld_vocabulary must be non-empty")
    if len(set(vocab)) != len(vocab):
        raise DuplicateVocabularyEntry(f"duplicate entries in {vocab!r}")
    return FeatureSchema(tld_vocabulary=vocab)


DEFAULT_SCHEMA = feature_schema(DEFAULT_TLD_VOCABULARY)


@dataclass(frozen=True, slots=True)
class FeatureVector:
    """Lexical URI features plus their fixed-order numeric encoding."""

    uri_length: int
    token_count: int
    path_depth: int
    has_query: int
    query_param_count: int
    tld: str
    domain_token_count: int
    numeric: tuple[float, ...]
    schema_hash: str


def extract_features(
    uri: OriginalUri, schema: FeatureSchema = DEFAULT_SCHEMA
) -> FeatureVector:
    """Extract the feature vector from a normalized URI. Deterministic."""
    s = uri.normalized
    parts = urlsplit(s)
    host = parts.hostname or ""
    labels = host.split(".") if host else []

    uri_length = len(s)
    token_count = sum(1 for tok in _TOKEN_SPLIT_RE.split(s) if tok)
    path_depth = sum(1 for seg in parts.path.split("/") if seg)
    has_query = 1 if parts.query else 0
    query_param_count = (
        sum(1 for p in parts.query.split("&") if p) if parts.query else 0
    )
    tld = labels[-1] if labels else ""
    domain_token_count = len(labels)

    one_hot = [0.0] * (len(schema.tld_vocabulary) + 1)
    try:
        one_hot[schema.tld_vocabulary.index(tld)] = 1.0
    except ValueError:
        one_hot[-1] = 1.0

    numeric = (
        float(uri_length),
        float(token_count),
        float(path_depth),
        float(has_query),
        float(query_param_count),
        float(domain_token_count),
        *one_hot,
    )
    return FeatureVector(
        uri_length=uri_length,
        token_count=token_count,
        path_depth=path_depth,
        has_query=has_query,
        query_param_count=query_param_count,
        tld=tld,
        domain_token_count=domain_token_count,
        numeric=numeric,
        schema_hash=schema.schema_hash,
    )
