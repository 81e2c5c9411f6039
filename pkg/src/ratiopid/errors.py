"""Exception types shared across the toolkit."""


class RatioPidError(Exception):
    """Base class for all toolkit errors."""


class NonPositiveTimeConstant(RatioPidError):
    """A first-order time constant was zero or negative."""


class NonIntegerDelay(RatioPidError):
    """A dead time is not an integer multiple of the sample time."""


class SingularSystem(RatioPidError):
    """The regularized normal-equation matrix is numerically singular."""


class DelayMismatch(RatioPidError):
    """A reference lookup ran past the provider horizon with clamping disabled."""


class EigenvalueFailure(RatioPidError):
    """The companion-matrix eigenvalue computation did not converge."""


class NoCrossover(RatioPidError):
    """The loop has no -180 degree phase crossing below the Nyquist frequency."""


class NoFeasibleEpsilon(RatioPidError):
    """No control weight on the search grid satisfied the tuning constraints."""


class EmptySeries(RatioPidError):
    """A metrics computation was asked for an empty signal window."""


class ConfigError(RatioPidError):
    """A run configuration file is missing keys or holds invalid values."""
