"""Exception types shared across the aggregator."""


class AggregatorError(Exception):
    """Base class for all memagg errors."""


class MalformedUri(AggregatorError, ValueError):
    """Input is not an absolute http/https URI."""


class MalformedDatetime(AggregatorError, ValueError):
    """Input is not an RFC 1123 HTTP datetime."""


class ClockSkew(AggregatorError):
    """Observed `now` precedes a record's insertion time."""


class DuplicateVocabularyEntry(AggregatorError, ValueError):
    """Feature schema vocabulary contains a repeated entry."""


class SchemaMismatch(AggregatorError):
    """Feature vector, sample, or model was built against a different schema."""


class EmptyTrainingSet(AggregatorError, ValueError):
    """Training was requested with zero samples."""


class VersionMismatch(AggregatorError):
    """Persisted artifact was written by an incompatible format version."""


class CorruptModel(AggregatorError):
    """Model bytes are truncated or otherwise undecodable."""


class EmptyLog(AggregatorError, ValueError):
    """Analytics was asked to summarize an event log with no events."""


class UnknownArchiveInEvent(AggregatorError):
    """An event references an archive_id absent from the registry."""
