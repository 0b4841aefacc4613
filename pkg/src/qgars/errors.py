"""Exception types shared across the package."""


class QgarsError(Exception):
    """Base class for all package-specific errors."""


class ScenarioError(QgarsError):
    """Raised when a scenario or experiment configuration is invalid."""


class ContractViolation(QgarsError):
    """Raised when a caller or component breaks a documented interface contract."""
