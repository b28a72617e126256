"""Exception taxonomy shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration: bad field values, unknown keys, shape mismatches."""


class InputError(ValueError):
    """A function received arguments outside its contract."""


class StateError(RuntimeError):
    """Stateful invariant violated: duplicate/missing checkpoints, non-finite values."""


class IngestionError(ValueError):
    """External file failed validation; message names the offending lines/ids."""
