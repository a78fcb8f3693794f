"""Shared exception types."""


class ParameterError(ValueError):
    """A precondition on an argument was violated (bad k, dimension mismatch, ...)."""


class NumericInputError(ValueError):
    """An input contained NaN or Inf where finite values are required."""


class FormatError(ValueError):
    """A file did not match its declared on-disk format."""


class EmptyDeviceError(Exception):
    """Skip-device signal: a sampled device holds no data; the caller resamples."""


class AttackInfeasibleError(Exception):
    """The attack cannot act this round (e.g. a zero learning rate makes the
    replacement equation unsolvable)."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. OIF with no attackers)."""


class ConfigError(ValueError):
    """Experiment configuration could not be parsed or validated."""
