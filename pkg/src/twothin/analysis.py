"""Numeric oracles: rate function, Poisson tails, retry and drift bounds, exact small-n laws.

Bound evaluators work in log space and return both the log value and
the value, so nothing underflows at large ``n``.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import gammaln, logsumexp

from . import _kernels as K
from .engine import trial_seed_sequence
from .errors import PreconditionUnmet, StateBudgetExceeded, UnsupportedPolicy

POISSON_LAMBDA_CAP = 1e7


def rate_I(x: float) -> float:
    """``I(x) = (1+x) log(1+x) - x`` for ``x > -1``."""
    if not x > -1:
        raise ValueError(f"rate_I needs x > -1, got {x}")
    if abs(x) < 1e-3:
        # sum_{j>=2} (-x)^j / (j (j-1)); the closed form cancels badly here
        return sum((-x) ** j / (j * (j - 1)) for j in range(2, 9))
    return (1 + x) * math.log1p(x) - x


@dataclass(frozen=True)
class Bound:
    value: float
    log_value: float
    vacuous: bool = False  # value >= 1, says nothing about a probability


def _bound(log_value: float) -> Bound:
    value = math.exp(log_value) if log_value < 709 else math.inf
    return Bound(value, log_value, log_value > 0)


def _log_pmf(j: np.ndarray, lam: float) -> np.ndarray:
    return j * math.log(lam) - lam - gammaln(j + 1)


def poisson_log_tail(lam: float, kappa: float, side: str = "upper",
                     cap: float = POISSON_LAMBDA_CAP) -> float:
    """``log P(X >= lam + kappa)`` (upper) or ``log P(X <= lam - kappa)`` (lower)."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if lam > cap:
        raise OverflowError(f"lambda={lam} above the summation cap {cap}")
    if side == "upper":
        j0 = max(math.ceil(lam + kappa), 0)
        if j0 == 0:
            return 0.0
        parts = []
        start = j0
        chunk = max(1024, int(8 * math.sqrt(lam)))
        while True:
            j = np.arange(start, start + chunk, dtype=np.float64)
            lp = _log_pmf(j, lam)
            parts.append(logsumexp(lp))
            start += chunk
            # terms now decrease geometrically; stop once they cannot move the sum
            if start > lam and lp[-1] < logsumexp(parts) - 50:
                break
        return float(min(logsumexp(parts), 0.0))
    if side == "lower":
        j1 = math.floor(lam - kappa)
        if j1 < 0:
            return -math.inf
        j = np.arange(0, j1 + 1, dtype=np.float64)
        return float(min(logsumexp(_log_pmf(j, lam)), 0.0))
    raise ValueError("side must be 'upper' or 'lower'")


def poisson_tail_exact(lam: float, kappa: float, side: str = "upper",
                       cap: float = POISSON_LAMBDA_CAP) -> float:
    return math.exp(poisson_log_tail(lam, kappa, side, cap))


@dataclass(frozen=True)
class Sandwich:
    lower: float
    upper: float
    log_lower: float
    log_upper: float
    lower_asymptotic: bool = True  # lower bound only claimed for large lambda


def poisson_tail_sandwich(lam: float, kappa: float) -> Sandwich:
    """``(exp(-2 lam I(kappa/lam)), exp(-lam I(kappa/lam)))`` around ``P(X >= lam + kappa)``."""
    if not lam > 0 or kappa < 0:
        raise ValueError("need lambda > 0 and kappa >= 0")
    e = lam * rate_I(kappa / lam)
    return Sandwich(math.exp(-2 * e), math.exp(-e), -2 * e, -e)


@dataclass(frozen=True)
class RetryBound:
    r_star: float
    failure: Bound  # bound on P(Y > r*)
    log_r_star: float


def retry_threshold(n: int, lam: float, ell: float) -> RetryBound:
    """``r* = 6 n exp(-lam I(ell/lam)) / log(1 + ell/lam)`` and ``exp(-n exp(-lam I))``."""
    if not (ell > 0 and lam > 0):
        raise ValueError("need ell > 0 and lambda > 0")
    e = lam * rate_I(ell / lam)
    log_r = math.log(6 * n) - e - math.log(math.log1p(ell / lam))
    log_fail = -n * math.exp(-e)
    return RetryBound(math.exp(log_r), _bound(log_fail), log_r)


def drift_tail_bound(theta: float, k: float) -> Bound:
    """``(320/theta^2) exp(-theta k / 5)`` bounding ``P(|L_i| > k)``."""
    if not theta > 0 or not k > 0:
        raise ValueError("need theta > 0 and k > 0")
    return _bound(math.log(320 / theta ** 2) - theta * k / 5)


def drift_k0(theta: float) -> float:
    return 1 + (2 / theta) * math.log(80 / theta ** 2)


@dataclass(frozen=True)
class LevelSetBound:
    count_threshold: float  # (160/theta^2) n exp(-theta k/3)
    prob: Bound  # 2 exp(-2n (80/theta^2)^2 exp(-2 theta k/3))


def drift_levelset_bound(theta: float, k: float, n: int) -> LevelSetBound:
    k0 = drift_k0(theta)
    if k < 3 * k0:
        raise PreconditionUnmet(f"k={k} < 3 k0 = {3 * k0:.3f}")
    count = 160 / theta ** 2 * n * math.exp(-theta * k / 3)
    log_p = math.log(2) - 2 * n * (80 / theta ** 2) ** 2 * math.exp(-2 * theta * k / 3)
    return LevelSetBound(count, _bound(log_p))


def drift_maxload_bound(theta: float, k: float, n: int) -> tuple[float, Bound]:
    """Level ``k + (5/theta) log(320 n/theta^2)`` and ``exp(-theta k/5)`` bounding the max."""
    level = k + 5 / theta * math.log(320 * n / theta ** 2)
    return level, _bound(-theta * k / 5)


def subset_maxload_bound(theta_frac: float, k: int, set_size: int) -> Bound:
    """``2 exp(-theta^k |S| / (e k!))`` bounding ``P(max_{i in S} X_i < k)``."""
    if not 0 <= theta_frac <= 1:
        raise ValueError("theta_frac must lie in [0, 1]")
    if set_size == 0 or theta_frac == 0:
        return _bound(math.log(2))
    log_inner = k * math.log(theta_frac) + math.log(set_size) - 1 - math.lgamma(k + 1)
    return _bound(math.log(2) - math.exp(log_inner))


# ---------------------------------------------------------------------------
# exact law of small instances

def _accept_prob(kind: str, params: dict, n: int, k: int, init, counts, acc, p: int):
    """Probability that primary ``p`` is accepted, as a Fraction, for thinning kinds."""
    if kind == "accept_all":
        return Fraction(1)
    if kind == "reject_all":
        return Fraction(0)
    if kind == "threshold":
        return Fraction(int(acc[p] < params["ell"]))
    if kind == "relative_threshold":
        ell = Fraction(params["ell"])
        scaled = n * (init[p] + counts[p]) - k
        low = scaled < -n * Fraction(math.log(n)) if n > 1 else False
        return Fraction(int(n * acc[p] < n * ell + k or low))
    if kind == "realize":
        return Fraction(params["accept_prob"][p])
    raise UnsupportedPolicy(kind)


SUPPORTED_DP = ("accept_all", "reject_all", "threshold", "relative_threshold", "realize",
                "two_choice", "one_plus_beta")


@dataclass
class ExactDistribution:
    n: int
    m: int
    kind: str
    canonical: bool
    probs: dict = field(default_factory=dict)  # state -> Fraction

    def total(self) -> Fraction:
        return sum(self.probs.values(), Fraction(0))

    def marginal(self, fn) -> dict:
        out: dict = defaultdict(Fraction)
        for st, pr in self.probs.items():
            out[fn(st)] += pr
        return dict(out)

    def max_count(self) -> dict[int, Fraction]:
        return self.marginal(lambda st: max(c for c, _ in st))

    def sorted_probs(self) -> dict:
        """Law of the state with bin labels forgotten."""
        return self.marginal(lambda st: tuple(sorted(st)))


def _canon(state, canonical: bool):
    return tuple(sorted(state)) if canonical else tuple(state)


def exact_small_dp(n: int, m: int, kind: str, params: dict | None = None, initial_loads=None,
                   max_n: int = 3, max_m: int = 8, max_states: int = 200_000
                   ) -> ExactDistribution:
    """Exact law of the final (count, accepted-primary) pairs by forward propagation.

    States are tuples of per-bin ``(count, accepted)``.  They are sorted
    (bins relabelled) only when that is exact: all-zero initial loads and a
    rule that treats bins alike.  Otherwise they are kept in bin order.
    """
    params = dict(params or {})
    if kind == "drift" or kind not in SUPPORTED_DP:
        raise UnsupportedPolicy(f"{kind} has no exact transition kernel here")
    if n > max_n or m > max_m:
        raise StateBudgetExceeded(f"(n={n}, m={m}) beyond the ({max_n}, {max_m}) budget")
    init = tuple(int(x) for x in (initial_loads if initial_loads is not None else [0] * n))
    if len(init) != n or sum(init) != 0:
        raise ValueError("initial loads must have length n and sum to zero")
    symmetric = kind in ("accept_all", "reject_all", "threshold", "relative_threshold") or (
        kind == "realize" and len(set(map(float, params["accept_prob"]))) == 1)
    canonical = symmetric and all(x == 0 for x in init)
    if kind == "realize":
        params["accept_prob"] = [Fraction(float(a)) for a in params["accept_prob"]]
    beta = Fraction(params.get("beta", 0)) if kind == "one_plus_beta" else None
    inv_n = Fraction(1, n)
    dist = {_canon([(0, 0)] * n, canonical): Fraction(1)}
    for k in range(m):
        nxt: dict = defaultdict(Fraction)
        for st, pr in dist.items():
            counts = [c for c, _ in st]
            acc = [a for _, a in st]

            def put(b, accepted, w):
                new = list(st)
                c, a = new[b]
                new[b] = (c + 1, a + int(accepted))
                nxt[_canon(new, canonical)] += pr * w

            for p in range(n):
                if kind in ("two_choice", "one_plus_beta"):
                    mix = Fraction(1) if kind == "two_choice" else beta
                    if mix < 1:
                        put(p, True, inv_n * (1 - mix))
                    if mix > 0:
                        for s in range(n):
                            tp, ts = init[p] + counts[p], init[s] + counts[s]
                            c = p if (tp < ts or (tp == ts and p <= s)) else s
                            put(c, c == p, inv_n * inv_n * mix)
                    continue
                a = _accept_prob(kind, params, n, k, init, counts, acc, p)
                if a > 0:
                    put(p, True, inv_n * a)
                if a < 1:
                    for s in range(n):
                        put(s, False, inv_n * inv_n * (1 - a))
        dist = dict(nxt)
        if len(dist) > max_states:
            raise StateBudgetExceeded(f"{len(dist)} states after {k + 1} balls")
    return ExactDistribution(n, m, kind, canonical, dist)


_KIND_CODE = {"accept_all": K.ACCEPT_ALL, "reject_all": K.REJECT_ALL, "threshold": K.THRESHOLD,
              "relative_threshold": K.RELATIVE, "realize": K.REALIZE,
              "two_choice": K.TWO_CHOICE, "one_plus_beta": K.ONE_PLUS_BETA}


def monte_carlo_states(n: int, m: int, kind: str, params: dict | None, samples: int,
                       seed: int = 0, batch: int = 200_000) -> Counter:
    """Empirical counts of canonical final states from the compiled simulator."""
    from .strategies.base import low_load_cut, strict_cut

    params = dict(params or {})
    ip = np.zeros(3, np.int64)
    fp = np.zeros(1)
    if kind == "threshold":
        ip[K.IP_CUT] = strict_cut(params["ell"])
    elif kind == "relative_threshold":
        ip[K.IP_CUT] = strict_cut(n * params["ell"])
        ip[K.IP_LOW] = low_load_cut(n)
    elif kind == "one_plus_beta":
        fp[0] = params["beta"]
    ap = np.asarray(params.get("accept_prob", np.zeros(n)), dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(trial_seed_sequence(seed, 0)))
    init = np.zeros(n, np.int64)
    blocked = np.zeros(n, np.bool_)
    tally: Counter = Counter()
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        prim = rng.integers(0, n, (b, m), dtype=np.int64)
        us = rng.random((b, m))
        secs = rng.integers(0, n, (b, m), dtype=np.int64)
        counts = np.empty((b, n), np.int64)
        acc = np.empty((b, n), np.int64)
        K.simulate_batch(_KIND_CODE[kind], ip, fp, n, init, blocked, ap, prim, us, secs,
                         counts, acc)
        code = np.sort(counts * (m + 1) + acc, axis=1)
        keys, cnt = np.unique(code, axis=0, return_counts=True)
        for key, c in zip(keys, cnt):
            tally[tuple((int(v) // (m + 1), int(v) % (m + 1)) for v in key)] += int(c)
        done += b
    return tally


def tv_distance(exact: ExactDistribution, tally: Counter) -> float:
    """Total variation between the exact law and a tally, both with bins unlabelled."""
    probs = exact.sorted_probs()
    total = sum(tally.values())
    keys = set(probs) | set(tally)
    return 0.5 * sum(abs(float(probs.get(s, 0)) - tally.get(s, 0) / total) for s in keys)
