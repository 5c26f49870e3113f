"""Exception types shared across the package."""


class PhysnetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PhysnetError):
    """Input or parameter dimensions do not match a declared contract."""


class UnsupportedPrimitiveError(PhysnetError):
    """A tape node has no derivative rule for the requested operation."""


class TrainingDivergedError(PhysnetError):
    """Training loss became non-finite."""

    def __init__(self, epoch, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class IntegrationError(PhysnetError):
    """Base class for ODE integration failures."""


class BlowUpError(IntegrationError):
    """State or derivative became non-finite; carries the last good time."""

    def __init__(self, t_last):
        super().__init__(f"non-finite state during integration; last good t={t_last!r}")
        self.t_last = t_last


class StepUnderflowError(IntegrationError):
    """Adaptive step size collapsed below the resolvable scale (stiffness)."""

    def __init__(self, t, h):
        super().__init__(f"step size underflow at t={t!r} (h={h!r}); system too stiff")
        self.t = t
        self.h = h


class EmptyModelError(PhysnetError):
    """Sparse regression eliminated every feature for some target column."""

    def __init__(self, column, threshold):
        super().__init__(
            f"all features eliminated for column {column!r} at threshold {threshold!r}"
        )
        self.column = column
        self.threshold = threshold
