"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the set where the operation is defined."""


class SingularWeightError(DomainError):
    """A Carleman weight was requested at t = 0 or t = T, where l(t) = 0."""


class ShapeError(ValueError):
    """Array shapes do not match the mesh or time grid."""


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


class PreconditionError(ValueError):
    """Input field violates a structural precondition (e.g. boundary vanishing)."""


class PicardDivergenceError(RuntimeError):
    """Trajectory fixed-point iteration failed to contract.

    The residual history is kept on ``self.history``.
    """

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)
