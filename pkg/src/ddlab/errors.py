"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class UnsupportedConfigurationError(ValueError):
    pass


class IntegrationError(RuntimeError):
    """A non-finite state appeared while stepping a trajectory."""

    def __init__(self, message: str, node: int):
        super().__init__(f"{message} (node {node})")
        self.node = node


class SingularModeError(RuntimeError):
    """The mode-tracking linear system became numerically singular."""

    def __init__(self, s: float, y, condition: float):
        super().__init__(f"mode-tracking matrix singular at s={s:.6g}, cond={condition:.3g}")
        self.s = s
        self.y = y
        self.condition = condition


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
