"""Exception types shared across the package."""


class DomainError(ValueError):
    """A numeric argument is outside the domain of a formula."""


class ValidationError(ValueError):
    """Input data does not satisfy a documented contract."""


class ConfigError(ValidationError):
    """A configuration object failed validation.

    ``field`` names the offending field so callers (the CLI in particular)
    can report it.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class SeparationError(RuntimeError):
    """Logistic fit diverged because a covariate separates the classes."""

    def __init__(self, covariate, message=None):
        self.covariate = covariate
        super().__init__(message or f"complete or quasi-complete separation on covariate {covariate!r}")


class RankDeficientError(RuntimeError):
    """Design matrix does not have full column rank."""


class IdentificationError(RuntimeError):
    """No (g, t) cell of the requested design can be estimated."""

    def __init__(self, cell, message):
        self.cell = cell
        super().__init__(message)
