class XvaError(Exception):
    """Base exception for the regime-switching XVA engine."""
    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def __str__(self) -> str:
        if self.details:
            details_str = ", ".join([f"{k}={v}" for k, v in self.details.items()])
            return f"{self.message} (details: {details_str})"
        return self.message


class ConfigurationError(XvaError):
    """Raised when the environment or a run configuration is invalid."""
    pass


class ValidationError(XvaError):
    """Raised when input validation fails."""
    pass


class DataError(XvaError):
    """Raised when an input file cannot be parsed."""
    pass


class FormulaError(XvaError):
    """Raised when a closed-form expression is singular at the given parameters."""
    pass


class AssumptionError(XvaError):
    """Raised when a necessary no-arbitrage condition is violated."""
    pass


class SolverError(XvaError):
    """Raised when a BSDE backend cannot produce a finite solution."""
    pass
