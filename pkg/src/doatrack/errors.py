"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or unusable input: bad audio, bad file format, bad config."""


class NumericalError(RuntimeError):
    """Unrecoverable numerical failure inside a processing stage."""
