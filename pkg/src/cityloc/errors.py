"""Exception taxonomy shared across the package.

The CLI maps these onto exit-code categories (config=2, data=3,
numeric=4), so new error types should subclass one of the three roots.
"""


class ContractViolation(ValueError):
    """A caller broke a documented precondition (shape, range, emptiness)."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class DataError(ValueError):
    """Corpus, checkpoint, or dump files are missing, malformed, or stale."""


class CorruptCorpusError(DataError):
    """Corpus files do not match the manifest checksum."""


class SchemaVersionError(DataError):
    """Corpus was written with an unsupported schema version."""


class VocabularyError(DataError):
    """A sentence contains a token outside the closed vocabulary."""


class NumericError(ArithmeticError):
    """A numeric failure (NaN/Inf loss, divergence) that aborts the run."""
