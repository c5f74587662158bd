"""Exception hierarchy.

The CLI maps the three families to exit codes: ``DataError`` and
``ConfigError`` exit with 2, ``NumericError`` exits with 3.
"""


class LabError(Exception):
    """Base class for all laboratory errors."""

    pass


class DataError(LabError):
    """Input data does not satisfy an operation's preconditions."""

    pass


class ConfigError(LabError):
    """Configuration is invalid or cannot be loaded."""

    pass


class NumericError(LabError):
    """A numeric computation produced a non-finite value."""

    pass


# ---------------------------------------------------------------------------
# Audio / features
# ---------------------------------------------------------------------------

class UnsupportedFormat(DataError):
    pass


class CorruptFile(DataError):
    pass


class TooShort(DataError):
    pass


class EmptyInput(DataError):
    pass


# ---------------------------------------------------------------------------
# Shapes
# ---------------------------------------------------------------------------

class DimensionMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


# ---------------------------------------------------------------------------
# Training / evaluation
# ---------------------------------------------------------------------------

class EmptyMask(DataError):
    """No masked position in a batch; the trainer skips such batches."""

    pass


class EmptyManifest(DataError):
    pass


class InvalidRange(DataError):
    pass


class DegenerateLabels(DataError):
    pass


class EmptyEval(DataError):
    pass


class InvalidGrid(DataError):
    pass


class InvalidConfig(ConfigError):
    pass


class InvalidEpsilon(ConfigError):
    pass


class NonFiniteGradient(NumericError):
    pass
