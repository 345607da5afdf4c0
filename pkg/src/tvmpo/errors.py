"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class TvmpoError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(TvmpoError, ValueError):
    """Arguments are malformed or mutually inconsistent."""


class CapacityError(TvmpoError):
    """A dense operation was requested for a system that is too large."""


class DegenerateAmplitudeError(TvmpoError, ZeroDivisionError):
    """A sampled amplitude underflowed; the caller has to resample."""


class DegenerateTraceError(TvmpoError, ZeroDivisionError):
    """The trace of the density matrix vanished and cannot be renormalized."""


class DegenerateDistributionError(TvmpoError):
    """The Markov chain is stuck on configurations with zero weight."""


class EmptyBatchError(TvmpoError):
    """Moments were assembled before any sample was accumulated."""


class NumericalError(TvmpoError, ArithmeticError):
    """A linear-algebra kernel failed."""


class StalledIntegrationError(TvmpoError):
    """The adaptive integrator shrank its step below the allowed floor."""


class NonPhysicalStateError(TvmpoError):
    """A diagnostic found a value that no density matrix can produce."""


class ConfigError(TvmpoError, ValueError):
    """A run configuration could not be parsed or validated."""
