"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class LobsimError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(LobsimError, ValueError):
    """Invalid parameters, configuration or inputs."""


class GridMismatchError(ValidationError):
    """Two grid functions live on incompatible grids."""


class DomainOverflowError(LobsimError):
    """Support of a density left the preallocated domain."""


class InvalidEventError(ValidationError):
    """An event is malformed for the model it is applied to."""


class ModelFaultError(LobsimError):
    """A model produced probabilities or states outside their admissible range."""


class UndefinedJumpError(LobsimError):
    """A large-jump size cannot be evaluated at the given state."""


class AssumptionViolationError(LobsimError):
    """A structural condition required by the scaling limit failed."""


class OutOfRangeError(LobsimError, IndexError):
    """Query outside the recorded horizon."""


class ConstructionError(ValidationError):
    """A kernel family cannot be built for the requested parameters."""


class DegenerateStatisticError(LobsimError):
    """A test statistic has a vanishing normaliser."""


class InsufficientRecordError(LobsimError):
    """A trajectory does not retain what a diagnostic needs."""
