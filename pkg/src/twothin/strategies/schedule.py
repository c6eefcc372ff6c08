"""Derived parameter schedules for the composite strategies.

Every field carries a provenance flag: ``formula`` when computed from the
asymptotic formulas, ``override`` when supplied by the caller and
``input`` for plain arguments.  The formulas are only evaluated when their
formal preconditions hold; at desk-scale ``n`` most of them do not, and
the caller has to supply overrides.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable

from ..errors import ParamOutOfAsymptoticRange, ScheduleInvalid

MAX_SCALES = 1000


def iterated_logs(n: int, log_base: float = math.e) -> tuple[float, float, float]:
    """``(log n, log log n, log log log n)``; undefined levels are ``nan``."""
    l1 = math.log(n, log_base) if n > 1 else float("nan")
    l2 = math.log(l1, log_base) if l1 > 0 else float("nan")
    l3 = math.log(l2, log_base) if l2 > 0 else float("nan")
    return l1, l2, l3


@dataclass
class ParameterSchedule:
    kind: str
    n: int
    log_base: float
    values: dict[str, Any] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)

    def __getattr__(self, name: str) -> Any:
        values = self.__dict__.get("values")
        if values is not None and name in values:
            return values[name]
        raise AttributeError(name)

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "log_base": self.log_base,
            "fields": {k: {"value": v, "provenance": self.provenance[k]}
                       for k, v in self.values.items()},
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def digest(self) -> str:
        """Short stable hash of the schedule, values and provenance included."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def overridden(self) -> list[str]:
        return sorted(k for k, p in self.provenance.items() if p == "override")


class _Builder:
    def __init__(self, kind: str, n: int, log_base: float, overrides: dict | None,
                 allowed: set[str]):
        overrides = dict(overrides or {})
        unknown = set(overrides) - allowed
        if unknown:
            raise ValueError(f"unknown override keys for {kind}: {sorted(unknown)}")
        self.overrides = overrides
        self.sched = ParameterSchedule(kind, int(n), float(log_base))

    def put(self, name: str, value: Any, provenance: str = "formula") -> Any:
        self.sched.values[name] = value
        self.sched.provenance[name] = provenance
        return value

    def get(self, name: str, formula: Callable[[], Any]) -> Any:
        if name in self.overrides:
            return self.put(name, self.overrides[name], "override")
        return self.put(name, formula())


def _formula_k(n: int, log_base: float) -> int:
    _, l2, l3 = iterated_logs(n, log_base)
    if not l3 > 1:
        raise ParamOutOfAsymptoticRange(
            f"k = floor(log log n / (3 log log log n)) needs log log log n > 1 (n={n}); "
            "supply an override for k")
    k = math.floor(l2 / (3 * l3))
    if k < 1:
        raise ParamOutOfAsymptoticRange(f"k formula gives {k} < 1 at n={n}")
    return k


def _formula_alpha1(n: int, log_base: float) -> float:
    _, _, l3 = iterated_logs(n, log_base)
    if not l3 >= 1 or math.floor(math.sqrt(l3)) < 1:
        raise ParamOutOfAsymptoticRange(
            f"alpha_1 formula needs floor(sqrt(log log log n)) >= 1 (n={n}); "
            "supply an override for alpha_1")
    return 0.5 + 2.0 / (math.floor(math.sqrt(l3)) + 0.25)


def stage_boundaries(t: float, k: int, l1: float, beta_i: list[float]) -> list[float]:
    """``t_0 = 0``, ``t_i = floor(t - (log n)^beta_i)`` for ``0 < i < k``, ``t_k = t``."""
    ts = [0.0]
    for i in range(1, k):
        ts.append(float(math.floor(t - l1 ** beta_i[i])))
    ts.append(float(t))
    return ts


def multi_stage_schedule(n: int, t: float, L0: float = 0.0, ell: float | None = None,
                         eta: float = 0.0, overrides: dict | None = None,
                         log_base: float = math.e) -> ParameterSchedule:
    """Stage count, exponents and boundaries of the multi-stage threshold.

    Raises ScheduleInvalid when the boundaries are not strictly increasing.
    """
    b = _Builder("multi_stage", n, log_base, overrides,
                 {"k", "alpha", "beta", "eps", "t_i", "ell"})
    l1, l2, _ = iterated_logs(n, log_base)
    if not t > 0:
        raise ValueError("t must be positive")
    b.put("t", float(t), "input")
    b.put("L0", float(L0), "input")
    b.put("eta", float(eta), "input")
    b.put("log_n", l1)
    k = int(b.get("k", lambda: _formula_k(n, log_base)))
    if k < 1:
        raise ScheduleInvalid("k must be >= 1")
    alpha = b.get("alpha", lambda: math.log(t) / math.log(l1))
    if eta > 0 and k > 1 and not eta <= (alpha - 0.5) / (4 * k - 2):
        raise ValueError(f"eta={eta} outside [0, (alpha-1/2)/(4k-2)]")
    beta = b.get("beta", lambda: alpha + eta)
    eps = b.get("eps", lambda: (2 * beta - 1) / (2 * (k + 1)))
    beta_i = b.put("beta_i", [beta - (2 * beta - 1 - eps) * i / (2 * k + 1)
                              for i in range(k + 1)])
    t_i = b.get("t_i", lambda: stage_boundaries(t, k, l1, beta_i))
    t_i = [float(x) for x in t_i]
    if len(t_i) != k + 1 or t_i[0] != 0.0 or t_i[-1] != float(t):
        raise ScheduleInvalid(f"t_i must run from 0 to t={t} in k={k} steps")
    if any(t_i[i] >= t_i[i + 1] for i in range(k)):
        raise ScheduleInvalid(f"stage boundaries not strictly increasing: {t_i}; "
                              "override t_i for this t")
    if ell is not None:
        b.put("ell", float(ell), "input")
    else:
        b.get("ell", lambda: float(math.floor(l1 ** beta_i[k])))
    ell_v = b.sched.values["ell"]
    b.put("ell_below_stage_gaps", all(ell_v < t_i[i] - t_i[i - 1] for i in range(1, k + 1)))
    return b.sched


def q_multi_scale_schedule(n: int, Q: float | None = None, overrides: dict | None = None,
                           log_base: float = math.e) -> ParameterSchedule:
    """Scale exponents, lengths and regulating-segment parameters."""
    b = _Builder("q_multi_scale", n, log_base, overrides,
                 {"k", "alpha_1", "L", "Q", "i_max"})
    _fill_multi_scale(b, n, Q, log_base)
    return b.sched


def _fill_multi_scale(b: _Builder, n: int, Q: float | None, log_base: float) -> None:
    l1, _, _ = iterated_logs(n, log_base)
    ln_l1 = math.log(l1)
    b.put("log_n", l1)
    k = int(b.get("k", lambda: _formula_k(n, log_base)))
    if k < 1:
        raise ScheduleInvalid("k must be >= 1")
    a1 = float(b.get("alpha_1", lambda: _formula_alpha1(n, log_base)))
    L = float(b.get("L", lambda: l1 ** ((1 + a1) / 3)))
    if Q is not None:
        b.put("Q", float(Q), "input")
    else:
        b.get("Q", lambda: L)

    alpha = [a1]
    D = [math.floor(l1 ** a1)]
    if D[0] < 1:
        raise ScheduleInvalid("floor((log n)^alpha_1) must be >= 1")
    eps_i, ell_i, alpha_p, N_i, D_p = [], [], [], [], []
    i_cap = b.overrides.get("i_max")
    while (alpha[-1] <= 1.0) if i_cap is None else (len(alpha) <= i_cap):
        if len(alpha) > MAX_SCALES:
            raise ScheduleInvalid("scale exponents do not exceed 1; i_max undefined")
        a = alpha[-1]
        e = (2 * a - 1) / (2 * (k + 1))
        li = l1 ** (0.5 + (a - 0.5 + k * e) / (2 * k + 1))
        ap = a - 0.2 * (2 * a - 1 - e) / (2 * k + 1)
        Ni = math.ceil(L / (3 * k * li))
        Dp = math.floor(l1 ** ap)
        if Ni < 1 or Dp < 1 or li <= 0:
            raise ScheduleInvalid(f"degenerate scale {len(alpha)}: N={Ni}, D'={Dp}, ell={li}")
        eps_i.append(e)
        ell_i.append(li)
        alpha_p.append(ap)
        N_i.append(Ni)
        D_p.append(Dp)
        D.append(Ni * (D[-1] + Dp))
        alpha.append(math.log(D[-1]) / ln_l1)
    i_max = len(alpha) - 1
    if i_cap is not None:
        b.put("i_max", int(i_cap), "override")
    else:
        b.put("i_max", i_max)
    b.put("alpha_i", alpha)
    b.put("D_i", D)
    b.put("eps_i", eps_i)
    b.put("ell_i", ell_i)
    b.put("alpha_prime_i", alpha_p)
    b.put("N_i", N_i)
    b.put("D_prime_i", D_p)
    b.put("Q_ij", [[(2 * k + 1) * (j - 1) * ell_i[i] for j in range(1, N_i[i] + 1)]
                   for i in range(i_max)])
    # validate every regulating multi-stage segment up front
    subs = []
    for i in range(i_max):
        s = multi_stage_schedule(n, D_p[i], 0.0, ell_i[i], 0.0, {"k": k}, log_base)
        subs.append(s["t_i"])
    b.put("regulating_t_i", subs)


def longterm_schedule(d: float, n: int, overrides: dict | None = None,
                      log_base: float = math.e,
                      phase3_budget: int = 10 ** 9) -> ParameterSchedule:
    """Multi-scale schedule plus the iteration lengths and thresholds of the long-term strategy."""
    if not d >= 1:
        raise ValueError("d must be >= 1")
    ov = dict(overrides or {})
    b = _Builder("d_multiscale_longterm", n, log_base, ov,
                 {"k", "alpha_1", "L", "Q", "i_max", "A", "m0", "m1", "m2", "L0"})
    b.put("d", float(d), "input")
    b.put("phase3_budget", int(phase3_budget), "input")
    _fill_multi_scale(b, n, None, log_base)
    v = b.sched.values
    l1 = v["log_n"]
    k = v["k"]
    top = v["alpha_i"][v["i_max"]]
    b.get("A", lambda: math.sqrt(6 * d * l1 ** (1 + top)))
    m0 = int(b.get("m0", lambda: math.floor(200 * d * n * l1)))
    b.get("m1", lambda: n * v["D_i"][v["i_max"]])
    b.get("m2", lambda: math.ceil(16 * n * v["A"]))

    def _L0():
        a = math.log(m0 / n) / math.log(l1)
        return float(math.floor(l1 ** (0.5 + (2 - 1 / (2 * k + 1)) * (a - 0.5) / (2 * k + 1))))

    L0 = b.get("L0", _L0)
    b.put("max_abs_load", 100 * d * l1)
    b.put("heavy_count_limit", 4000 * n * math.exp(-L0 / 15))
    # the phase-1 multi-stage (m0/n, L0, L0) segment must be valid too
    ms = multi_stage_schedule(n, m0 / n, L0, L0, 0.0, {"k": k}, log_base)
    b.put("phase1_t_i", ms["t_i"])
    return b.sched
