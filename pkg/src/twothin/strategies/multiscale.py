"""Q-multi-scale strategy and the long-term combined strategy built on it."""

from __future__ import annotations

import itertools
import math
from typing import Iterator

import numpy as np

from ..engine import LoadState
from ..errors import Phase3Watchdog
from .base import Policy, Segment, limited
from .basic import RelativeThreshold
from .multistage import multi_stage_segments
from .schedule import (ParameterSchedule, longterm_schedule, multi_stage_schedule,
                       q_multi_scale_schedule)


def scale_segments(state: LoadState, sched: ParameterSchedule, scale: int, Q: float,
                   top: bool = False) -> Iterator[Segment]:
    """Segments of scale ``scale`` (1-based) with base threshold ``Q``.

    Scale 1 is the ``Q``-relative threshold for ``n D_1`` balls.  Scale
    ``i + 1`` repeats ``N_i`` times: scale ``i`` with ``Q`` raised by
    ``Q^{i,j}``, then a regulating multi-stage segment.  The top scale
    keeps iterating past ``N_i`` so the policy never runs dry.
    """
    n = state.n
    if scale == 1:
        length = None if top else n * sched["D_i"][0]
        yield Segment(RelativeThreshold(Q, sched.log_base), length, label="scale1")
        return
    i = scale - 1  # parameters of the lower scale, 1-based
    k = sched["k"]
    ell = sched["ell_i"][i - 1]
    t_reg = sched["D_prime_i"][i - 1]
    count = itertools.count(1) if top else range(1, sched["N_i"][i - 1] + 1)
    for j in count:
        q_ij = (2 * k + 1) * (j - 1) * ell
        yield from scale_segments(state, sched, i, Q + q_ij)
        reg = multi_stage_schedule(n, t_reg, Q + q_ij + ell, ell, 0.0, {"k": k},
                                   sched.log_base)
        yield from multi_stage_segments(state, reg)


class QMultiScalePolicy(Policy):
    def __init__(self, sched: ParameterSchedule):
        self.schedule = sched
        self.name = f"q_multi_scale({sched['Q']:g})"
        super().__init__()

    def segments(self, state, stream):
        s = self.schedule
        yield from scale_segments(state, s, s["i_max"] + 1, s["Q"], top=True)


def q_multi_scale_policy(Q: float | None = None, n: int | None = None,
                         overrides: dict | None = None,
                         log_base: float = math.e) -> QMultiScalePolicy:
    if n is None:
        raise ValueError("n is required to build the schedule")
    return QMultiScalePolicy(q_multi_scale_schedule(n, Q, overrides, log_base))


class LongTermPolicy(Policy):
    """Iterations of (multi-stage, Q-multi-scale, 1/5-drift) with a stopping rule on phase 3."""

    theta = 0.2

    def __init__(self, sched: ParameterSchedule, drift_buffer: int | None = None):
        self.schedule = sched
        self.name = f"d_multiscale_longterm({sched['d']:g})"
        self.drift_buffer = drift_buffer
        self.iterations: list[dict] = []
        super().__init__()

    def reset(self):
        super().reset()
        self.iterations = []

    def phase3_done(self, state: LoadState) -> bool:
        s = self.schedule
        n = state.n
        scaled = state.scaled_loads()
        if int(np.abs(scaled).max()) > n * s["max_abs_load"]:
            return False
        return int(np.count_nonzero(scaled > n * s["L0"])) < s["heavy_count_limit"]

    def segments(self, state, stream):
        from ..point_process import CANDIDATE_BUFFER, DriftRule

        s = self.schedule
        n = state.n
        L0 = s["L0"]
        phase1 = multi_stage_schedule(n, s["m0"] / n, L0, L0, 0.0, {"k": s["k"]}, s.log_base)
        for it in itertools.count():
            log = {"iteration": it, "start": state.k}
            self.iterations.append(log)
            if it > 0:
                log["phase1"] = state.k
                yield from limited(multi_stage_segments(state, phase1), s["m0"])
            log["phase2"] = state.k
            yield from limited(scale_segments(state, s, s["i_max"] + 1, s["Q"], top=True),
                               s["m1"])
            log["phase3"] = state.k
            drift = DriftRule(self.theta, self.drift_buffer or CANDIDATE_BUFFER)
            yield Segment(drift, s["m2"], label="phase3")
            extra = 0
            while not self.phase3_done(state):
                extra += 1
                if s["m2"] + extra > s["phase3_budget"]:
                    raise Phase3Watchdog(
                        f"phase 3 did not stop within {s['phase3_budget']} balls")
                yield Segment(drift, 1, fresh=False, label="phase3")
            log["phase3_balls"] = s["m2"] + extra


def d_multiscale_longterm_policy(d: float = 1.0, n: int | None = None,
                                 overrides: dict | None = None, log_base: float = math.e,
                                 phase3_budget: int = 10 ** 9) -> LongTermPolicy:
    if n is None:
        raise ValueError("n is required to build the schedule")
    return LongTermPolicy(longterm_schedule(d, n, overrides, log_base, phase3_budget))
