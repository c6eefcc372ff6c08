"""Drift strategies as a coupling to an ensemble of counting processes.

Process ``i`` starts at the current load of bin ``i`` and jumps by one at
a rate that depends on where it sits relative to the diagonal
``X_i(t) = t``.  The ``k``-th point of the superposition is the ``k``-th
ball's bin.

Internally each process is kept as an integer total ``T_i`` (balls in the
bin) and the clock as ``s = t + k0/n``, where ``k0`` is the step at which
the ensemble was started.  Then ``X_i(t) < t`` iff ``T_i < s``, and so on,
so regime tests never round a load.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import IntensityInvalid, SmallNFeasibility, ThetaOutOfRange
from .strategies.base import Rule, SingleRulePolicy

THETA_MAX = math.sqrt(5) - 2
CANDIDATE_BUFFER = 1 << 14
REGIMES = ("below", "middle", "above")


def check_theta(theta: float) -> None:
    if not 0 < theta <= THETA_MAX:
        raise ThetaOutOfRange(f"theta={theta} outside (0, sqrt(5)-2]")


@dataclass(frozen=True)
class IntensitySpec:
    """Rates below the diagonal, in the band ``[t, t + excess]`` and above it."""

    kind: str  # "drift" or "varying"
    below: float
    middle: float
    above: float
    excess: float = math.inf  # ell for the varying spec
    theta: float | None = None

    @property
    def rates(self) -> np.ndarray:
        return np.array([self.below, self.middle, self.above])

    @property
    def lam_max(self) -> float:
        return max(self.below, self.middle, self.above)

    @classmethod
    def drift(cls, theta: float) -> "IntensitySpec":
        return cls("drift", 1 + theta, 1 - theta, 1 - theta, math.inf, theta)

    @classmethod
    def varying(cls, theta1: float, theta2: float, theta3: float, ell: float) -> "IntensitySpec":
        return cls("varying", 1 + theta1, 1 - theta2, theta3, float(ell))


class FeasibilityMonitor:
    """Counts processes strictly above ``t + ell`` at superposition points.

    The count is kept incrementally through a histogram of totals: a
    process is above iff ``T_i >= floor(s + ell) + 1`` and that threshold
    only moves up.  Once the count exceeds ``limit`` the monitor latches.
    """

    def __init__(self, n: int, ell: float, limit: float | None = None):
        self.n = n
        self.ell = float(ell)
        self.limit = n / math.sqrt(math.log(n)) if limit is None else float(limit)
        self.tripped = False
        self.trip_step: int | None = None
        self.count_above = 0
        self.thr = 0
        self.hist = np.zeros(1, np.int64)
        self.hist_base = 0
        self.need_check = True

    def rebuild(self, tot: np.ndarray, s: float, headroom: int) -> None:
        self.hist_base = int(tot.min())
        size = int(tot.max()) - self.hist_base + headroom + 2
        self.hist = np.bincount(tot - self.hist_base, minlength=size).astype(np.int64)
        self.thr = max(self.thr, math.floor(s + self.ell) + 1)
        self.count_above = int(np.count_nonzero(tot >= self.thr))

    def ensure_capacity(self, tot_max: int, headroom: int) -> None:
        need = tot_max - self.hist_base + headroom + 2
        if need > len(self.hist):
            grown = np.zeros(max(need, 2 * len(self.hist)), np.int64)
            grown[:len(self.hist)] = self.hist
            self.hist = grown

    def count_direct(self, tot: np.ndarray, s: float) -> int:
        """|{i : X_i(t) > t + ell}| recomputed from scratch."""
        return int(np.count_nonzero(tot > s + self.ell))


class PointProcessEnsemble:
    """``n`` independent counting processes sharing one clock.

    Candidates are proposed at rate ``n * lam_max`` and thinned by the
    rate of the chosen process evaluated at the candidate time.
    """

    def __init__(self, totals: np.ndarray, s0: float, spec: IntensitySpec,
                 rng: np.random.Generator, monitor: FeasibilityMonitor | None = None,
                 buffer: int = CANDIDATE_BUFFER):
        self.tot = np.array(totals, dtype=np.int64)
        self.n = len(self.tot)
        self.s0 = float(s0)
        self.s = float(s0)
        self.comp = 0.0
        self.spec = spec
        self.rates = spec.rates
        self.lam_max = spec.lam_max
        self.rng = rng
        self.monitor = monitor
        self.total_points = 0
        self._bufsize = int(buffer)
        self._waits = np.zeros(0)
        self._idx = np.zeros(0, np.int64)
        self._us = np.zeros(0)
        self._pos = 0
        self.evals = np.zeros(3, np.int64)
        self.accepts = np.zeros(3, np.int64)
        self.residency = np.zeros(3)
        self.crossings = np.zeros(2, np.int64)  # [upward, downward] through the diagonal
        self.last_time = np.full(self.n, self.s)
        if monitor is not None:
            monitor.rebuild(self.tot, self.s, self._bufsize)

    @property
    def t(self) -> float:
        return self.s - self.s0

    @property
    def X(self) -> np.ndarray:
        """Process values ``X_i(t)`` (real)."""
        return self.tot - self.s0

    def _refill(self) -> None:
        g = self.rng
        self._waits = g.standard_exponential(self._bufsize)
        self._idx = g.integers(0, self.n, self._bufsize, dtype=np.int64)
        self._us = g.random(self._bufsize)
        self._pos = 0

    def allocate(self, count: int, out: np.ndarray | None = None) -> np.ndarray:
        """Next ``count`` points (fewer if the monitor trips)."""
        out = np.empty(count, np.int64) if out is None else out
        done = 0
        mon = self.monitor
        use_mon = mon is not None
        while done < count:
            if use_mon and mon.tripped:
                break
            if self._pos >= len(self._waits):
                self._refill()
            if use_mon:
                mon.ensure_capacity(int(self.tot.max()), count - done)
                hist, base, cnt, thr, need = (mon.hist, mon.hist_base, mon.count_above,
                                              mon.thr, mon.need_check)
                limit, ell = mon.limit, mon.ell
            else:
                hist, base, cnt, thr, need = np.zeros(1, np.int64), 0, 0, 0, False
                limit, ell = 0.0, 0.0
            got, self._pos, self.s, self.comp, tripped, cnt, thr, need = K.ensemble_advance(
                count - done, self.tot, self.s, self.comp, self.rates, self.lam_max,
                self.spec.excess, self._waits, self._idx, self._us, self._pos,
                out[done:], self.evals, self.accepts, self.residency, self.last_time,
                self.crossings, use_mon, limit, ell, hist, base, cnt, thr, need)
            done += got
            if use_mon:
                mon.count_above, mon.thr, mon.need_check = int(cnt), int(thr), bool(need)
                if tripped:
                    mon.tripped = True
        self.total_points += done
        return out[:done]

    def next_allocation(self) -> int | None:
        got = self.allocate(1)
        return int(got[0]) if len(got) else None

    def flush_residency(self) -> np.ndarray:
        """Residency per regime with every process accounted up to the current time."""
        res = self.residency.copy()
        for i in range(self.n):
            K._split_residency(self.tot[i], self.last_time[i], self.s, self.spec.excess, res)
        return res


def next_allocation(ensemble: PointProcessEnsemble,
                    rng: np.random.Generator | None = None) -> int | None:
    """Advance to the next superposition point and return its process index.

    Without ``rng`` the ensemble's own buffered candidate stream is used.
    With ``rng`` the candidates are drawn one at a time from it by a plain
    Python loop (a slow reference path); regime diagnostics are not updated
    then.  Returns ``None`` if the feasibility monitor is tripped.
    """
    if rng is None:
        return ensemble.next_allocation()
    mon = ensemble.monitor
    if mon is not None:
        if mon.tripped:
            return None
        if mon.count_direct(ensemble.tot, ensemble.s) > mon.limit:
            mon.tripped = True
            return None
    n, lam_max, rates, excess = ensemble.n, ensemble.lam_max, ensemble.rates, ensemble.spec.excess
    while True:
        ensemble.s += rng.standard_exponential() / (n * lam_max)
        i = int(rng.integers(0, n))
        x = int(ensemble.tot[i])
        r = 0 if x < ensemble.s else (1 if x <= ensemble.s + excess else 2)
        if rng.random() * lam_max < rates[r]:
            ensemble.tot[i] = x + 1
            ensemble.last_time[i] = ensemble.s
            ensemble.total_points += 1
            if mon is not None:
                mon.rebuild(ensemble.tot, ensemble.s, ensemble._bufsize)
                mon.need_check = True
            return i


class DriftRule(Rule):
    """Allocation is the next point of a drift ensemble started from the current loads."""

    name = "drift"
    mode = "coupled"

    def __init__(self, theta: float, buffer: int = CANDIDATE_BUFFER):
        super().__init__()
        check_theta(theta)
        self.theta = theta
        self.spec = IntensitySpec.drift(theta)
        self.buffer = buffer
        self.ensemble: PointProcessEnsemble | None = None

    def _monitor(self, n: int) -> FeasibilityMonitor | None:
        return None

    def start(self, state, stream):
        super().start(state, stream)
        self.ensemble = PointProcessEnsemble(state.totals(), state.k / state.n, self.spec,
                                             stream.spawn(), self._monitor(state.n),
                                             self.buffer)

    def place(self, state, stream, p, u, s):
        return self.ensemble.next_allocation(), K.COUPLED, -1

    def _coupled(self, state, bins):
        mx = np.empty(len(bins), np.int64)
        k, max_tot = K.account_coupled(bins, state.n, state.k, state.initial_loads,
                                       state.counts, state.max_total, mx)
        state.k, state.max_total = int(k), int(max_tot)
        state.coupled_steps += len(bins)
        m = len(bins)
        return np.full(m, -1, np.int64), np.full(m, K.COUPLED, np.int64), bins, mx

    def advance(self, state, stream, prim, us, secs):
        return self._coupled(state, self.ensemble.allocate(len(prim)))


class VaryingDriftRule(DriftRule):
    """Varying drift with a feasibility latch; accepts every primary once tripped."""

    name = "varying_drift"

    def __init__(self, spec: IntensitySpec, limit: float | None = None,
                 buffer: int = CANDIDATE_BUFFER):
        Rule.__init__(self)
        self.spec = spec
        self.theta = None
        self.limit = limit
        self.buffer = buffer
        self.ensemble = None
        self.monitor: FeasibilityMonitor | None = None
        self._fallback = None

    def _monitor(self, n):
        self.monitor = FeasibilityMonitor(n, self.spec.excess, self.limit)
        return self.monitor

    @property
    def tripped(self) -> bool:
        return self.monitor is not None and self.monitor.tripped

    def start(self, state, stream):
        super().start(state, stream)
        from .strategies.basic import AcceptAll

        self._fallback = AcceptAll()
        self._fallback.start(state, stream)

    def place(self, state, stream, p, u, s):
        if not self.tripped:
            i = self.ensemble.next_allocation()
            if i is not None:
                return i, K.COUPLED, -1
            self.monitor.trip_step = state.k + 1
        return self._fallback.place(state, stream, p, u, s)

    def advance(self, state, stream, prim, us, secs):
        m = len(prim)
        parts = []
        j = 0
        if not self.tripped:
            bins = self.ensemble.allocate(m)
            parts.append(self._coupled(state, bins))
            j = len(bins)
            if j < m:
                self.monitor.trip_step = state.k + 1
        if j < m:
            parts.append(self._fallback.advance(state, stream, prim[j:], us[j:], secs[j:]))
        if len(parts) == 1:
            return parts[0]
        return tuple(np.concatenate([p[c] for p in parts]) for c in range(4))


def drift_policy(theta: float = 0.2, buffer: int = CANDIDATE_BUFFER) -> SingleRulePolicy:
    return SingleRulePolicy(DriftRule(theta, buffer), f"drift({theta:g})")


def varying_drift_params(n: int, ell: float | None = None, theta1: float | None = None,
                         theta2: float | None = None, theta3: float | None = None) -> dict:
    ln = math.log(n)
    out = {
        "theta1": 1 / math.sqrt(ln) if theta1 is None else theta1,
        "theta2": 1 / math.sqrt(ln) if theta2 is None else theta2,
        "theta3": 12 / math.sqrt(ln) if theta3 is None else theta3,
        "ell": 2 * ln / math.log(ln) if ell is None else ell,
    }
    out["overridden"] = sorted(k for k, v in
                               (("theta1", theta1), ("theta2", theta2), ("theta3", theta3))
                               if v is not None)
    return out


def varying_drift_policy(ell: float | None = None, n: int | None = None, *,
                         theta1: float | None = None, theta2: float | None = None,
                         theta3: float | None = None, limit: float | None = None,
                         buffer: int = CANDIDATE_BUFFER) -> SingleRulePolicy:
    """ell-varying drift; ``ell`` defaults to ``2 ln n / ln ln n``."""
    if n is None:
        raise ValueError("n is required")
    prm = varying_drift_params(n, ell, theta1, theta2, theta3)
    t1, t2, t3 = prm["theta1"], prm["theta2"], prm["theta3"]
    if not (1 - t2 > 0 and t3 > 0 and t1 > -1):
        raise IntensityInvalid(f"rates (1+{t1:g}, 1-{t2:g}, {t3:g}) are not all positive")
    if not prm["ell"] > 0:
        raise ValueError("ell must be > 0")
    if n < 10 ** 4:
        warnings.warn(f"n={n} < 1e4: the feasibility band may not hold", SmallNFeasibility,
                      stacklevel=2)
    if t3 >= 1 - t2:
        warnings.warn(f"theta3={t3:.3g} >= 1-theta2={1 - t2:.3g}: the top regime does not "
                      "drift downwards at this n", SmallNFeasibility, stacklevel=2)
    spec = IntensitySpec.varying(t1, t2, t3, prm["ell"])
    return SingleRulePolicy(VaryingDriftRule(spec, limit, buffer),
                            f"varying_drift({prm['ell']:g})")


def standardizing_diagnostic(ensemble: PointProcessEnsemble,
                             horizon: float | None = None) -> dict:
    """Audit of the regime rule plus residency and crossing counts.

    With ``horizon`` the ensemble is first run (points discarded) until
    its time reaches ``horizon``.
    """
    if horizon is not None:
        while ensemble.t < horizon:
            got = ensemble.allocate(ensemble.n)
            if len(got) == 0:
                break
    spec = ensemble.spec
    theta = spec.theta if spec.theta is not None else spec.below - 1
    # a theta-standardizing process needs rate >= 1+theta below and <= 1-theta at/above
    violations = int(spec.below < 1 + theta) * int(ensemble.evals[0])
    violations += int(spec.middle > 1 - theta) * int(ensemble.evals[1])
    violations += int(spec.above > 1 - theta) * int(ensemble.evals[2])
    res = ensemble.flush_residency()
    total = float(res.sum())
    mon = ensemble.monitor
    return {
        "spec": spec.kind,
        "rates": dict(zip(REGIMES, map(float, spec.rates))),
        "theta": theta,
        "time": ensemble.t,
        "points": ensemble.total_points,
        "evaluations": dict(zip(REGIMES, map(int, ensemble.evals))),
        "accepted": dict(zip(REGIMES, map(int, ensemble.accepts))),
        "violations": violations,
        "residency": dict(zip(REGIMES, map(float, res))),
        "residency_fraction": dict(zip(REGIMES, (float(r / total) if total > 0 else 0.0
                                                 for r in res))),
        "crossings": {"upward": int(ensemble.crossings[0]),
                      "downward": int(ensemble.crossings[1])},
        "trip_step": None if mon is None else mon.trip_step,
    }


def diagnostic_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
