"""Single-rule strategies: thresholds, realizing a target law, baselines."""

from __future__ import annotations

import math

import numpy as np

from .. import _kernels as K
from ..errors import BandViolation
from .base import SingleRulePolicy, ThinningRule, low_load_cut, strict_cut


class AcceptAll(ThinningRule):
    name = "accept_all"
    kind = K.ACCEPT_ALL

    def decide(self, ctx):
        return True


class RejectAll(ThinningRule):
    name = "reject_all"
    kind = K.REJECT_ALL

    def decide(self, ctx):
        return False


class Threshold(ThinningRule):
    """Accept while the primary has accepted fewer than ``ell`` primaries."""

    name = "threshold"
    kind = K.THRESHOLD

    def __init__(self, ell: float):
        super().__init__()
        if not ell >= 0:
            raise ValueError("ell must be >= 0")
        self.ell = float(ell)
        self.cut = strict_cut(ell)

    def decide(self, ctx):
        return ctx.stage_accepted <= self.cut


class RelativeThreshold(ThinningRule):
    """Threshold ``ell + (k-1)/n`` with an escape for bins below ``-log n``.

    ``k`` counts balls since the rule was initiated.
    """

    name = "relative_threshold"
    kind = K.RELATIVE

    def __init__(self, ell: float, log_base: float = math.e):
        super().__init__()
        if not ell > 0:
            raise ValueError("ell must be > 0")
        self.ell = float(ell)
        self.log_base = log_base

    def start(self, state, stream):
        super().start(state, stream)
        self.cut = strict_cut(state.n * self.ell)
        self.low_cut = low_load_cut(state.n, self.log_base)

    def decide(self, ctx):
        if ctx.n * ctx.stage_accepted - (ctx.segment_k - 1) <= self.cut:
            return True
        return ctx.scaled_load <= self.low_cut


class Realize(ThinningRule):
    """Accept primary ``i`` with probability ``n p_i - c``."""

    name = "realize"
    kind = K.REALIZE

    def __init__(self, accept_prob: np.ndarray):
        super().__init__()
        self.accept_prob = np.ascontiguousarray(accept_prob, dtype=np.float64)

    def decide(self, ctx):
        return ctx.u < self.accept_prob[ctx.primary]


class _Baseline(ThinningRule):
    """Comparator allocators; they see both bins, so they are not thinning rules."""

    mode = "baseline"

    def __init__(self, beta: float = 0.0):
        super().__init__()
        self.fp = np.array([float(beta)])

    def place(self, state, stream, p, u, s):
        final, dec = K.decide(self.kind, self._ip(), self.fp, state.n, state.k,
                              state.initial_loads, state.counts, state.stage_accepted,
                              np.zeros(0, np.bool_), np.zeros(0), p, u, s)
        return int(final), int(dec), p


class TwoChoice(_Baseline):
    """Both bins are inspected; the ball goes to the less loaded one."""

    name = "two_choice"
    kind = K.TWO_CHOICE


class OnePlusBeta(_Baseline):
    name = "one_plus_beta"
    kind = K.ONE_PLUS_BETA

    def __init__(self, beta: float):
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        super().__init__(beta)
        self.name = f"one_plus_beta({beta:g})"


def accept_all_policy() -> SingleRulePolicy:
    return SingleRulePolicy(AcceptAll(), "one_choice")


def reject_all_policy() -> SingleRulePolicy:
    return SingleRulePolicy(RejectAll())


def threshold_policy(ell: float) -> SingleRulePolicy:
    return SingleRulePolicy(Threshold(ell), f"threshold({ell:g})")


def relative_threshold_policy(ell: float, log_base: float = math.e) -> SingleRulePolicy:
    return SingleRulePolicy(RelativeThreshold(ell, log_base), f"relative_threshold({ell:g})")


def baseline_policies(beta: float = 0.5) -> dict[str, SingleRulePolicy]:
    """Fresh comparator allocators keyed by name."""
    return {
        "one_choice": accept_all_policy(),
        "two_choice_greedy": SingleRulePolicy(TwoChoice(), "two_choice_greedy"),
        "one_plus_beta": SingleRulePolicy(OnePlusBeta(beta)),
    }


class RealizedDistribution:
    """A one-shot thinning decision whose output bin has law ``p``.

    Accepting primary ``i`` with probability ``n p_i - c`` gives
    ``P(Z = i) = p_i - c/n + c/n = p_i``.
    """

    def __init__(self, p, c: float):
        p = np.asarray(p, dtype=np.float64)
        n = len(p)
        if n == 0 or not c > 0:
            raise ValueError("need a non-empty p and c > 0")
        if not math.isclose(float(p.sum()), 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError("p must sum to 1")
        tol = 1e-12
        bad = np.flatnonzero((p < c / n - tol) | (p > (1 + c) / n + tol))
        if len(bad):
            i = int(bad[0])
            raise BandViolation(
                f"p[{i}] = {p[i]:g} outside [{c / n:g}, {(1 + c) / n:g}]")
        self.p = p
        self.c = float(c)
        self.n = n
        self.accept_prob = np.clip(n * p - c, 0.0, 1.0)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        prim = rng.integers(0, self.n, size)
        u = rng.random(size)
        sec = rng.integers(0, self.n, size)
        return np.where(u < self.accept_prob[prim], prim, sec)

    def as_policy(self) -> SingleRulePolicy:
        return SingleRulePolicy(Realize(self.accept_prob), "realize")


def realize_distribution(p, c: float) -> RealizedDistribution:
    return RealizedDistribution(p, c)
