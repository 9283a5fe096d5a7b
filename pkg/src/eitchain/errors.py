"""Exception and warning types shared by the solvers."""


class EitChainError(Exception):
    """Base class for all package errors."""


class ConfigError(EitChainError, ValueError):
    """Invalid scenario, medium or run configuration."""


class DegenerateDenominator(EitChainError, ZeroDivisionError):
    """Undressed exact resonance with no linewidth: the susceptibility diverges."""


class PulseOverlapsMedium(ConfigError):
    """A vacuum launch was requested for a pulse that already overlaps a layer."""


class CflViolation(EitChainError):
    """The requested time step exceeds the stability bound of the scheme."""


class NumericalFailure(EitChainError):
    """Non-finite values appeared during time stepping.

    ``snapshot`` holds the last finite state so callers can dump it.
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


class NegativeIntensity(NumericalFailure):
    """The effective solver produced a significantly negative intensity."""


class NonConverged(EitChainError):
    """Steady state was not reached within the allotted time."""


class RootNotBracketed(EitChainError, ValueError):
    """A characteristic time could not be bracketed for the requested point."""


class UnknownPreset(ConfigError, KeyError):
    """No preset is registered under the requested name."""

    def __str__(self):
        return Exception.__str__(self)


class ZeroControlFieldWarning(RuntimeWarning):
    """Control field is zero; the returned value is the limiting one."""


class EvanescentBranchWarning(RuntimeWarning):
    """The medium wave vector is evanescent; the decaying root was chosen."""


class NumericalDegeneracyWarning(RuntimeWarning):
    """Two polariton eigenvalues coincide within tolerance."""


class PeakAmbiguousWarning(RuntimeWarning):
    """Several peaks lie within 10% of the maximum."""


class ScenarioWarning(UserWarning):
    """A scenario violates a soft assumption (e.g. pulse wider than the EIT window)."""
