"""Exception hierarchy.

Three families map onto the CLI exit statuses: configuration problems (2),
data/artifact problems (3), and numeric failures (4).
"""


class ReportPrmError(Exception):
    """Base class for all package errors."""


class ConfigError(ReportPrmError):
    """Invalid configuration, option value, or command usage."""


class DataError(ReportPrmError):
    """Malformed, missing, or inconsistent input data."""


class NumericError(ReportPrmError):
    """Non-finite values or degenerate numeric conditions."""


# -- data family ------------------------------------------------------------

class PromptParseError(DataError):
    """Field markers out of order or duplicated in a prompt."""


class SchemaError(DataError):
    """A record violates the line-delimited file schema."""


class JoinError(DataError):
    """A record references a study id that does not exist."""


class LabelingError(DataError):
    """The entailment oracle failed while labeling a sentence pair."""


class OracleTransportError(LabelingError):
    """Remote oracle unreachable: timeout or connection failure."""


class OracleStatusError(LabelingError):
    """Remote oracle answered with a non-2xx HTTP status."""


class OracleProtocolError(LabelingError):
    """Remote oracle answered 2xx but the body violates the wire schema."""


class BalancingError(DataError):
    """Class balancing impossible (single-class input)."""


class FeatureError(DataError):
    """Token statistics required for feature extraction are missing."""


class EncodingError(DataError):
    """A report cannot be encoded into a verifier sequence."""


class CheckpointError(DataError):
    """Base class for checkpoint container problems."""


class CheckpointVersionError(CheckpointError):
    """Unknown checkpoint format version."""


class CheckpointShapeError(CheckpointError):
    """Stored tensor shape disagrees with the declared architecture."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint file ends before all declared tensors are read."""


class ArtifactMissingError(DataError):
    """An upstream artifact required by a command does not exist."""


# -- numeric family ----------------------------------------------------------

class TrainingDivergedError(NumericError):
    """Loss became non-finite during optimization."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class RankingError(NumericError):
    """Ranking metric undefined: only one class present."""


class BootstrapError(NumericError):
    """Too many degenerate resamples to form an interval."""


class AggregationError(ConfigError):
    """A report-score aggregation method is missing a required input."""

    def __init__(self, method: str, message: str):
        self.method = method
        super().__init__(f"{method}: {message}")


class SelectionError(DataError):
    """Candidate selection on an empty candidate set."""
