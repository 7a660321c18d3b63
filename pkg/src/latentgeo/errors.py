"""Exception hierarchy shared by all modules."""


class LatentGeoError(Exception):
    """Base class for library errors."""


class ConfigurationError(LatentGeoError, ValueError):
    """Inputs are inconsistent (dimensions, missing keys, bad options)."""


class NumericalDomainError(LatentGeoError, ArithmeticError):
    """A computation produced a non-finite or singular quantity."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class DomainEscapeError(NumericalDomainError):
    """An integrated trajectory left the admissible region."""


class UnreachableError(LatentGeoError):
    """No path exists between two graph components."""

    def __init__(self, message, source_component=None, target_component=None):
        super().__init__(message)
        self.source_component = source_component
        self.target_component = target_component


class TrainingError(LatentGeoError):
    """Optimisation diverged."""

    def __init__(self, message, last_finite_loss=None):
        super().__init__(message)
        self.last_finite_loss = last_finite_loss


class SchemaError(LatentGeoError, ValueError):
    """A serialized object does not follow its JSON schema."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path
