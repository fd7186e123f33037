"""Exception types shared across the curation toolkit."""


class CuratorError(Exception):
    """Base class for all toolkit errors."""


class ScenarioError(CuratorError, ValueError):
    """A scenario document could not be turned into a valid Scenario."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class ParseError(ScenarioError):
    """The document is not well-formed."""


class SchemaError(ScenarioError):
    """A required field is missing or an array has the wrong arity."""


class ValidationError(ScenarioError):
    """A field is present but violates a domain invariant."""


class CuratorIOError(CuratorError, OSError):
    """Reading or writing an artifact failed."""


class BoundsError(CuratorError, ValueError):
    """An action lies outside the vehicle action space."""


class InsufficientHistory(CuratorError, ValueError):
    """A track is too short for third-order finite differences."""


class InvalidTimestep(CuratorError, ValueError):
    """The SDC is not valid at the requested timestep."""


class NoLaneError(CuratorError, ValueError):
    """The scene contains no lane centerline."""


class EmptyInput(CuratorError, ValueError):
    """An aggregate was requested over no values."""


class SpecError(CuratorError, ValueError):
    """A corpus specification is inconsistent."""


class CorpusTooSmall(CuratorError, ValueError):
    """Fewer scenarios than ensemble folds."""


class DimensionMismatch(CuratorError, ValueError):
    """A feature vector does not match the model input size."""


class TooFewModels(CuratorError, ValueError):
    """Disagreement needs at least two predictions."""


class MissingScores(CuratorError, KeyError):
    """A scenario has no score table for the requested strategy."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class PolicyError(CuratorError, RuntimeError):
    """A policy produced a non-finite action."""


class ConfigError(CuratorError, ValueError):
    """The pipeline configuration is invalid."""


class DependencyError(CuratorError, RuntimeError):
    """An upstream pipeline artifact is missing."""
