"""Exception hierarchy shared by every gausscool module."""


class GaussCoolError(Exception):
    """Base class for all errors raised by gausscool."""


class NonPositive(GaussCoolError, ValueError):
    """A variance that must be strictly positive is not."""


class HeisenbergViolation(GaussCoolError, ValueError):
    """Covariance matrix with det < 1/4; usually an integration blow-up."""


class NoConvergence(GaussCoolError, RuntimeError):
    """Steady-state solver gave up. ``residual`` holds the last residual norm."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class NotHurwitz(GaussCoolError, ValueError):
    """Drift has an eigenvalue with non-negative real part; no steady state."""

    def __init__(self, message, eigenvalues=()):
        super().__init__(message)
        self.eigenvalues = tuple(eigenvalues)


class NotSteady(GaussCoolError, ValueError):
    """Operating point residual too large for steady-state identities."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class EfficiencyZero(GaussCoolError, ValueError):
    """Direct feedback needs k * eta > 0; the fed-back noise diverges otherwise."""


class UnsupportedScheme(GaussCoolError, ValueError):
    pass


class UnsupportedEstimator(GaussCoolError, ValueError):
    pass


class StiffnessGuard(GaussCoolError, ValueError):
    """Time step too large for the fastest rate of the moment flow."""


class EmptySample(GaussCoolError, ValueError):
    """No post-burn-in samples are left to average."""


class ConfigError(GaussCoolError, ValueError):
    """Invalid run configuration. ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class UnknownKey(ConfigError):
    pass


class MissingKey(ConfigError):
    pass


class RangeError(ConfigError):
    pass
