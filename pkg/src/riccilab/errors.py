"""Exception hierarchy shared by every module of the lab."""


class LabError(Exception):
    """Base class for all lab failures."""


class SingularMetric(LabError):
    """A metric lost positive definiteness (or fell below the rejection threshold)."""


class ValenceMismatch(LabError, ValueError):
    """Two tensors that must share a valence do not."""


class ToleranceExceeded(LabError):
    """An exact identity failed its discretization tolerance."""

    def __init__(self, identity, residual, tolerance):
        self.identity = identity
        self.residual = residual
        self.tolerance = tolerance
        super().__init__(
            f"{identity}: residual {residual:.3e} exceeds tolerance {tolerance:.3e}"
        )


class NonpositiveTime(LabError, ValueError):
    pass


class ExtinctionReached(LabError):
    """Integration stopped because the solution approached extinction."""

    def __init__(self, last_time, message=""):
        self.last_time = last_time
        super().__init__(message or f"extinction reached after t = {last_time:.6g}")


class StepRejected(LabError):
    pass


class UnstableConstant(LabError):
    """A fitted existential constant drifted between independent batches."""


class InvariantViolation(LabError):
    """A pointwise bound of a cutoff/weight construction failed."""

    def __init__(self, bound, worst):
        self.bound = bound
        self.worst = worst
        super().__init__(f"invariant '{bound}' violated (worst excess {worst:.3e})")


class OutsideValidityWindow(LabError, ValueError):
    pass


class WindowEmpty(LabError):
    pass


class ConfigError(LabError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ScenarioFailure(LabError):
    def __init__(self, check, message=""):
        self.check = check
        super().__init__(f"check '{check}' failed" + (f": {message}" if message else ""))


class IoError(LabError, OSError):
    """An output artifact could not be written."""
