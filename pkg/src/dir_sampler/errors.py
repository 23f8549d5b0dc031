"""Exception types shared across the sampler."""


class DirSamplerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DirSamplerError):
    """Malformed configuration (bad sampler settings, unknown config keys)."""


class DataError(DirSamplerError):
    """Structurally inconsistent dataset (ragged index mismatch, bad values)."""


class ValidationError(DirSamplerError):
    """Dataset failed the posterior-propriety gate; carries the report."""

    def __init__(self, report):
        self.report = report
        super().__init__(f"dataset failed validation: {report.summary()}")


class NumericError(DirSamplerError):
    """Non-finite or degenerate quantity in the sampler, with location context."""
