"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class SingularMotionError(DomainError):
    """A motion map or its Jacobian is not invertible."""


class DegenerateInputError(ValueError):
    """Input carries no information (e.g. an all-zero recording)."""


class DivergenceError(RuntimeError):
    """The iterative solver produced a non-finite objective."""


class ConfigError(ValueError):
    """Configuration failed validation.

    ``problems`` lists ``(field_path, message)`` pairs.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"{path}: {msg}" for path, msg in self.problems]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
