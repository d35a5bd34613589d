"""Exception hierarchy shared by every estimator component."""

from __future__ import annotations


class LegMheError(Exception):
    """Base class for all errors raised by :mod:`legmhe`.

    Keyword arguments are kept as ``context`` and rendered into the message,
    which lets the CLI print e.g. the offending line of a log.
    """

    def __init__(self, message: str = "", **context):
        super().__init__(message)
        self.context = context

    @property
    def kind(self) -> str:
        return type(self).__name__

    def __str__(self) -> str:
        base = super().__str__()
        if not self.context:
            return base
        extra = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{base} ({extra})" if base else extra


# math core


class FewerThanFourControlPoints(LegMheError):
    """Bezier path is not a whole number of cubic segments."""


class SampleTimeOutOfRange(LegMheError):
    """Interpolation time lies outside the knot span."""


# orientation filter


class NonPositiveDt(LegMheError):
    """Propagation interval must be positive."""


class AccelGateRejected(LegMheError):
    """Accelerometer sample outside the gravity-measurement gate."""


class FreeFallSample(AccelGateRejected):
    """Specific force too small to observe gravity."""


class HighDynamicsSample(AccelGateRejected):
    """Specific force too large (impact transient)."""


class VoTimestampTooOld(LegMheError):
    """Delayed measurement precedes the history buffer."""


# QP / KKT


class DimensionMismatch(LegMheError):
    """Inconsistent matrix/vector shapes."""


class RankDeficientConstraints(LegMheError):
    """Constraint matrix does not have full row rank."""


class IndefiniteReducedHessian(LegMheError):
    """Cost is not positive definite on the constraint null space."""


class Group0NotClosed(LegMheError):
    """Oldest variable group couples beyond its successor."""


class SingularK00(LegMheError):
    """Leading KKT block of the oldest group is singular."""


class NonSpdPrior(LegMheError):
    """Prior covariance is not symmetric positive definite."""


# moving horizon


class NonConsecutiveNodes(LegMheError):
    """Nodes are not adjacent estimator ticks."""


class NoSampleForFoot(LegMheError):
    """Node has no leg-odometry sample for this foot."""


class VelocityFormWithoutContact(LegMheError):
    """Velocity leg odometry requires the foot in contact."""


class NotInContact(LegMheError):
    """Foot is not in contact at both nodes."""


class UnsortedVoFrames(LegMheError):
    """Visual odometry frames are not time ordered."""


class VoGapExceedsWindow(LegMheError):
    """Visual odometry span lies entirely before the window."""


class RankDeficientG(RankDeficientConstraints):
    """Assembled window constraints are rank deficient."""


class SolverFailure(LegMheError):
    """Quadratic program could not be solved."""


class ClockRegression(LegMheError):
    """Estimator tick is not later than the previous one."""


# I/O


class ConfigParse(LegMheError):
    """Configuration file is invalid."""


class LogParse(LegMheError):
    """Sensor log is malformed."""


class IoFailure(LegMheError):
    """File could not be read or written."""
