"""Exception types shared across the simulator."""


class InvalidArgument(ValueError):
    pass


class InvalidGeometry(ValueError):
    pass


class NumericalFailure(ArithmeticError):
    pass


class ConfigError(ValueError):
    """Malformed or inconsistent configuration input."""
