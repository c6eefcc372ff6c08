"""Multi-stage threshold and its drift-prefixed variant."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .. import _kernels as K
from ..engine import LoadState
from .base import Policy, Segment, ThinningRule, low_load_cut, strict_cut
from .schedule import ParameterSchedule, multi_stage_schedule


class MultiStageRule(ThinningRule):
    """One stage: reject heavy bins and bins over the stage cap, unless very light."""

    name = "multi_stage"
    kind = K.MULTISTAGE

    def __init__(self, cap: float, blocked: np.ndarray, log_base: float = math.e, stage: int = 1):
        super().__init__()
        self.cap = float(cap)
        self.cut = strict_cut(cap)
        self.blocked = np.ascontiguousarray(blocked, dtype=np.bool_)
        self.log_base = log_base
        self.stage = stage

    def start(self, state, stream):
        super().start(state, stream)
        self.low_cut = low_load_cut(state.n, self.log_base)

    def decide(self, ctx):
        if ctx.scaled_load <= self.low_cut:
            return True
        return not (self.blocked[ctx.primary] or ctx.stage_accepted > self.cut)


class HeavySets:
    """Heavy-bin sets ``H_0, H_1, ...`` of one multi-stage run; pairwise disjoint."""

    def __init__(self, n: int):
        self.sets: list[np.ndarray] = []
        self.boundaries: list[int] = []
        self._member = np.zeros(n, np.bool_)

    def add(self, mask: np.ndarray, k: int) -> np.ndarray:
        mask = mask & ~self._member
        self._member |= mask
        self.sets.append(np.flatnonzero(mask))
        self.boundaries.append(k)
        return mask

    def union(self, first: int, stop: int, n: int) -> np.ndarray:
        out = np.zeros(n, np.bool_)
        for idx in self.sets[first:stop]:
            out[idx] = True
        return out


def multi_stage_segments(state: LoadState, sched: ParameterSchedule,
                         heavy: HeavySets | None = None) -> Iterator[Segment]:
    """Segments of a multi-stage ``(t, L0, ell)`` run starting at the current step.

    The caller must be at an integer step; stage ``i`` covers balls in
    ``(t_{i-1} n, t_i n]`` counted from the start.
    """
    n = state.n
    t_i, ell, L0, k = sched["t_i"], sched["ell"], sched["L0"], sched["k"]
    heavy = heavy if heavy is not None else HeavySets(n)
    # H_0: load > L0 at initiation
    heavy.add(state.scaled_loads() > n * L0, state.k)
    for i in range(1, k + 1):
        blocked = heavy.union(0, 1, n) if i == 1 else heavy.union(1, i, n)
        rule = MultiStageRule(t_i[i] - t_i[i - 1] + ell, blocked, sched.log_base, i)
        length = math.floor(t_i[i] * n) - math.floor(t_i[i - 1] * n)
        yield Segment(rule, length, label=f"multi_stage[{i}/{k}]")
        if i < k:
            level = math.ceil(n * (L0 + 2 * i * ell))
            heavy.add(state.scaled_loads() >= level, state.k)


class MultiStagePolicy(Policy):
    def __init__(self, sched: ParameterSchedule):
        self.schedule = sched
        self.name = f"multi_stage({sched['t']:g},{sched['L0']:g},{sched['ell']:g})"
        self.heavy: HeavySets | None = None
        super().__init__()

    def segments(self, state, stream):
        self.heavy = HeavySets(state.n)
        yield from multi_stage_segments(state, self.schedule, self.heavy)


def multi_stage_policy(t: float, L0: float = 0.0, ell: float | None = None, eta: float = 0.0,
                       n: int | None = None, overrides: dict | None = None,
                       log_base: float = math.e) -> MultiStagePolicy:
    if n is None:
        raise ValueError("n is required to build the schedule")
    return MultiStagePolicy(multi_stage_schedule(n, t, L0, ell, eta, overrides, log_base))


class DriftMultiStagePolicy(Policy):
    """theta-drift for ``t' n`` balls, then multi-stage ``(t, L0, ell)`` from the current loads."""

    def __init__(self, theta: float, t_prime: float, sched: ParameterSchedule | None,
                 drift_kwargs: dict | None = None):
        from ..point_process import DriftRule, check_theta

        check_theta(theta)
        if t_prime < 0:
            raise ValueError("t_prime must be >= 0")
        self.theta = theta
        self.t_prime = float(t_prime)
        self.schedule = sched
        self._make_drift = lambda: DriftRule(theta, **(drift_kwargs or {}))
        t = sched["t"] if sched is not None else 0.0
        self.name = f"drift_multi_stage({theta:g},{t_prime:g},{t:g})"
        self.heavy: HeavySets | None = None
        super().__init__()

    def segments(self, state, stream):
        first = math.floor(self.t_prime * state.n)
        if first > 0:
            yield Segment(self._make_drift(), first, label="drift")
        if self.schedule is None:
            return
        self.heavy = HeavySets(state.n)
        yield from multi_stage_segments(state, self.schedule, self.heavy)


def drift_multi_stage_policy(theta: float, t_prime: float, t: float, L0: float = 0.0,
                             ell: float | None = None, n: int | None = None,
                             overrides: dict | None = None,
                             log_base: float = math.e) -> DriftMultiStagePolicy:
    if n is None:
        raise ValueError("n is required to build the schedule")
    sched = multi_stage_schedule(n, t, L0, ell, 0.0, overrides, log_base) if t > 0 else None
    return DriftMultiStagePolicy(theta, t_prime, sched)

