"""Exception and warning types raised across the package."""


class TwoThinError(Exception):
    pass


class ParamOutOfAsymptoticRange(TwoThinError):
    """A schedule formula was evaluated outside the range where it is defined."""


class ScheduleInvalid(TwoThinError):
    """Derived stage boundaries are not strictly increasing (or otherwise unusable)."""


class BandViolation(TwoThinError, ValueError):
    pass


class ThetaOutOfRange(TwoThinError, ValueError):
    pass


class IntensityInvalid(TwoThinError, ValueError):
    pass


class PreconditionUnmet(TwoThinError, ValueError):
    pass


class StateBudgetExceeded(TwoThinError):
    pass


class UnsupportedPolicy(TwoThinError):
    pass


class TraceBudgetExceeded(TwoThinError, MemoryError):
    pass


class PolicyExhausted(TwoThinError):
    """The policy ran out of segments before the requested number of balls."""


class Phase3Watchdog(TwoThinError):
    pass


class RegimeAmbiguous(UserWarning):
    pass


class SubsampledIntervalInexact(UserWarning):
    pass


class SmallNFeasibility(UserWarning):
    pass


class RegimeAmbiguousError(TwoThinError):
    """Raised instead of the RegimeAmbiguous warning when selection is strict."""
