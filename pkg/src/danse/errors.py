"""Exception hierarchy."""


class DanseError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(DanseError, ValueError):
    pass


class GeometryError(DanseError, ValueError):
    """Sizes or positions that do not fit the lattice."""


class StepError(DanseError, RuntimeError):
    """The nonlinear fixed-point iteration of a time step did not converge."""

    def __init__(self, message, t=None, residual=None, dt=None):
        super().__init__(message)
        self.t = t
        self.residual = residual
        self.dt = dt


class RealizationError(DanseError, RuntimeError):
    """A single ensemble member failed; carries what is needed to replay it."""

    def __init__(self, message, index, disorder_seed, phase_seed):
        super().__init__(message)
        self.index = index
        self.disorder_seed = disorder_seed
        self.phase_seed = phase_seed


class MergeError(DanseError, ValueError):
    pass


class FitError(DanseError, RuntimeError):
    pass


class WindowError(FitError):
    """Too few usable points to fit a survival trace."""


class NoStatesError(DanseError, ValueError):
    """An energy window selected no eigenstates."""
