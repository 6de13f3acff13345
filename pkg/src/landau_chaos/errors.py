"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An input violates an operation's precondition."""


class NotPSDError(ValueError):
    """A matrix expected to be positive semidefinite has a negative eigenvalue."""


class NumericalBlowup(FloatingPointError):
    """A time step produced a non-finite velocity."""

    def __init__(self, index, step=None):
        self.index = int(index)
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite update for particle {self.index}{where}")


class AnchorSelectionFailed(RuntimeError):
    """The greedy anchor search ran out of admissible candidate centers."""

    def __init__(self, stage, reason=""):
        self.stage = stage
        super().__init__(f"anchor selection failed at stage {stage}" + (f": {reason}" if reason else ""))


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""
