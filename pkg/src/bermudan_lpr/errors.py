class InvalidInput(ValueError):
    """Raised when arguments violate a documented precondition."""


class Unsupported(NotImplementedError):
    """Raised for parameter combinations the engine deliberately does not handle."""
