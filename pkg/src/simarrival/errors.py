"""Exception types shared across the package."""


class SimArrivalError(Exception):
    """Base class for all package errors."""


class BoundsViolation(SimArrivalError):
    """An integrated state left its box bounds by more than the tolerance."""


class EmptyTrajectory(SimArrivalError):
    """An operation that needs samples received a trajectory without any."""


class OutOfWorkspace(SimArrivalError):
    """A swept cell left the workspace or overlapped a static obstacle."""


class NoPath(SimArrivalError):
    """The single-agent search exhausted its open list without reaching the goal."""


class Infeasible(SimArrivalError):
    """The high-level search proved the joint problem unsolvable."""


class Timeout(SimArrivalError):
    """A solve exceeded its wall-clock budget."""


class PreconditionViolation(SimArrivalError):
    """An algorithm precondition (e.g. agents initially at rest) does not hold."""


class GenerationFailed(SimArrivalError):
    """A single primitive boundary-value problem did not converge."""

    def __init__(self, label: str, detail: str = ""):
        self.label = label
        self.detail = detail
        super().__init__(f"primitive generation failed for {label}: {detail}")


class EmptySet(SimArrivalError):
    """Primitive generation produced no forward motion primitive at all."""


class SpecError(SimArrivalError):
    """A transcription request is internally inconsistent."""


class DimensionMismatch(SimArrivalError):
    """Vectors that must share a layout have different lengths."""


class WindowFailed(SimArrivalError):
    """A consensus window solve ended with an infeasible local problem."""


class SpliceMismatch(SimArrivalError):
    """Window boundary states deviate from the current plan beyond tolerance."""


class ParseError(SimArrivalError):
    """A scenario or plan file could not be parsed."""


class ValidationError(SimArrivalError):
    """A parsed scenario violates its invariants; lists every violation found."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class GenerationTimeout(SimArrivalError):
    """Rejection sampling of scenario poses exceeded its attempt cap."""


class IoError(SimArrivalError):
    """An output artifact could not be written."""
