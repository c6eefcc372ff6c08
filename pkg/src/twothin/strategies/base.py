"""Rules, segments and policies.

A *rule* is one decision law (threshold, relative threshold, drift, ...)
together with whatever private state it keeps since it was initiated.  A
*policy* is a generator of segments ``(rule, length)``; composite
strategies are written as generators that look at the live load state at
segment boundaries and decide what to run next.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .. import _kernels as K
from ..engine import DecisionContext, LoadState, RandomStream
from ..errors import PolicyExhausted

_EMPTY_BOOL = np.zeros(0, np.bool_)
_EMPTY_F = np.zeros(0, np.float64)


def low_load_cut(n: int, log_base: float = math.e) -> int:
    """Largest scaled load counted as ``L < -log n``.

    ``n*L < -x`` for integer ``n*L`` is ``n*L <= ceil(-x) - 1``.
    """
    x = n * math.log(n) / math.log(log_base)
    return math.ceil(-x) - 1


def strict_cut(x: float) -> int:
    """Largest integer strictly below ``x``."""
    return math.ceil(x) - 1


class Rule:
    name = "rule"
    mode = "thinning"  # thinning | baseline | coupled

    def __init__(self):
        self.seg_k0 = 0

    def start(self, state: LoadState, stream: RandomStream) -> None:
        self.seg_k0 = state.k

    def place(self, state, stream, p, u, s):
        raise NotImplementedError

    def advance(self, state, stream, prim, us, secs):
        raise NotImplementedError


class ThinningRule(Rule):
    """A rule that sees only the primary bin and one uniform before deciding."""

    kind = -1

    def __init__(self):
        super().__init__()
        self.cut = 0
        self.low_cut = 0
        self.blocked = _EMPTY_BOOL
        self.accept_prob = _EMPTY_F
        self.fp = np.zeros(1)

    def decide(self, ctx: DecisionContext) -> bool:
        raise NotImplementedError

    def context(self, state: LoadState, p: int, u: float) -> DecisionContext:
        return DecisionContext(
            k=state.k + 1, n=state.n, primary=p,
            scaled_load=state.n * int(state.initial_loads[p] + state.counts[p]) - state.k,
            accepted=int(state.accepted_primaries[p]),
            stage_accepted=int(state.stage_accepted[p]),
            segment_k=state.k - self.seg_k0 + 1, u=u)

    def place(self, state, stream, p, u, s):
        if self.decide(self.context(state, p, u)):
            return p, K.ACCEPT, p
        return s, K.REJECT, p

    def _ip(self) -> np.ndarray:
        return np.array([self.cut, self.low_cut, self.seg_k0], np.int64)

    def advance(self, state, stream, prim, us, secs):
        length = len(prim)
        fin = np.empty(length, np.int64)
        dec = np.empty(length, np.int64)
        mx = np.empty(length, np.int64)
        blocked = self.blocked if len(self.blocked) else np.zeros(state.n, np.bool_)
        ap = self.accept_prob if len(self.accept_prob) else np.zeros(state.n)
        k, max_tot, retries = K.run_rule_block(
            self.kind, self._ip(), self.fp, state.n, state.k, state.initial_loads,
            state.counts, state.accepted_primaries, state.stage_accepted, state.secondary,
            blocked, ap, prim, us, secs, state.max_total, fin, dec, mx)
        state.k = int(k)
        state.max_total = int(max_tot)
        state.retries += int(retries)
        return np.asarray(prim), dec, fin, mx


@dataclass(frozen=True)
class Segment:
    rule: Rule
    length: int | None  # balls; None = until the run ends
    fresh: bool = True  # initiate the rule (reset its counters) at segment start
    label: str = ""


def limited(segments: Iterator[Segment], budget: int) -> Iterator[Segment]:
    """Truncate a segment stream to ``budget`` balls in total."""
    left = int(budget)
    for seg in segments:
        if left <= 0:
            segments.close()
            return
        length = left if seg.length is None else min(seg.length, left)
        yield replace(seg, length=length)
        left -= length


class Policy:
    """A strategy bound to one run at a time; ``reset`` rebinds it."""

    name = "policy"

    def __init__(self):
        self.reset()

    def segments(self, state: LoadState, stream: RandomStream) -> Iterator[Segment]:
        raise NotImplementedError

    def reset(self) -> None:
        self._gen = None
        self._seg: Segment | None = None
        self.remaining: int | None = None
        self.history: list[tuple[int, str]] = []

    @property
    def current(self) -> Segment | None:
        return self._seg

    def rule_for(self, state: LoadState, stream: RandomStream) -> Rule:
        while self._seg is None or self.remaining == 0:
            if self._gen is None:
                self._gen = self.segments(state, stream)
            try:
                seg = next(self._gen)
            except StopIteration:
                raise PolicyExhausted(f"{self.name}: no segment at k={state.k}") from None
            if seg.length == 0:
                continue
            self._seg = seg
            self.remaining = seg.length
            if seg.fresh:
                state.stage_accepted[:] = 0
                seg.rule.start(state, stream)
                self.history.append((state.k, seg.label or seg.rule.name))
        return self._seg.rule

    def consume(self, count: int) -> None:
        if self.remaining is not None:
            self.remaining -= count


class SingleRulePolicy(Policy):
    """One rule for the whole run."""

    def __init__(self, rule: Rule, name: str | None = None):
        self.rule = rule
        self.name = name or rule.name
        super().__init__()

    def segments(self, state, stream):
        yield Segment(self.rule, None, label=self.name)
