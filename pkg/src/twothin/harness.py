"""Experiment orchestration: strategy construction, automatic parameters, trial fan-out."""

from __future__ import annotations

import json
import math
import os
import statistics
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

from .engine import RandomStream, run, trial_seed_sequence
from .errors import ParamOutOfAsymptoticRange, RegimeAmbiguous, RegimeAmbiguousError, TwoThinError
from .metrics import ResultRow, result_row, write_rows
from .point_process import drift_policy, varying_drift_params, varying_drift_policy
from .strategies import (DriftMultiStagePolicy, MultiStagePolicy, accept_all_policy,
                         d_multiscale_longterm_policy, longterm_schedule, multi_stage_schedule,
                         q_multi_scale_policy, q_multi_scale_schedule, reject_all_policy,
                         relative_threshold_policy, threshold_policy)
from .strategies.basic import OnePlusBeta, TwoChoice
from .strategies.base import SingleRulePolicy

METRICS = ("single_time", "all_time", "typical")
STRATEGIES = ("threshold", "relative_threshold", "multi_stage", "drift_multi_stage",
              "q_multi_scale", "longterm", "drift", "varying_drift", "one_choice",
              "two_choice", "one_plus_beta", "reject_all", "auto")
AMBIGUITY_BAND = 0.2


def threshold_ell(n: int, t: float) -> float:
    """``sqrt(3 ln n / (ln ln n - 2 ln t))``, the excess over ``t`` for short runs."""
    ln = math.log(n)
    denom = math.log(ln) - 2 * math.log(t)
    if not denom > 0:
        raise ParamOutOfAsymptoticRange(f"ln ln n - 2 ln t = {denom:.4g} <= 0 (n={n}, t={t})")
    return math.sqrt(3 * ln / denom)


def crossovers(n: int) -> dict[str, float]:
    ln = math.log(n)
    return {"sqrt_ln_n": math.sqrt(ln), "ln_n": ln, "ln2_n": ln * ln}


@dataclass
class ParamBundle:
    metric: str
    n: int
    m: int
    t: float
    regime: str
    strategy: str
    params: dict
    provenance: dict
    ambiguous: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_ambiguity(n: int, t: float, names: list[str], strict: bool) -> list[str]:
    hits = []
    cx = crossovers(n)
    for name in names:
        c = cx[name]
        if abs(t - c) <= AMBIGUITY_BAND * c:
            hits.append(name)
    if hits:
        msg = f"t={t:.4g} within {AMBIGUITY_BAND:.0%} of crossover(s) " + ", ".join(
            f"{h}={cx[h]:.4g}" for h in hits)
        if strict:
            raise RegimeAmbiguousError(msg)
        warnings.warn(msg, RegimeAmbiguous, stacklevel=3)
    return hits


def auto_ell(metric: str, n: int, m: int, *, strict: bool = False,
             overrides: dict | None = None, log_base: float = math.e) -> ParamBundle:
    """Pick the strategy and its parameters for ``metric`` at ``(n, m)``.

    Crossovers between regimes sit at ``t = m/n`` equal to ``sqrt(ln n)``,
    ``ln n`` and ``ln^2 n``.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    if n < 3 or m < 1:
        raise ValueError("need n >= 3 and m >= 1")
    t = m / n
    cx = crossovers(n)
    ln = math.log(n)
    prov: dict[str, str] = {}

    def bundle(regime, strategy, params, names):
        amb = _check_ambiguity(n, t, names, strict)
        return ParamBundle(metric, n, m, t, regime, strategy, params, prov, amb)

    if metric == "single_time":
        if t < cx["sqrt_ln_n"]:
            ell = threshold_ell(n, t)
            prov["ell"] = "t + sqrt(3 ln n/(ln ln n - 2 ln t))"
            return bundle("t<=sqrt(ln n)", "threshold", {"ell": t + ell, "excess": ell},
                          ["sqrt_ln_n"])
        if t <= cx["ln_n"]:
            tt = math.ceil(t)
            try:
                s = multi_stage_schedule(n, tt, 0.0, None, 0.0, overrides, log_base)
                prov.update({"t": "ceil(m/n)", "schedule": s.digest()})
                return bundle("sqrt(ln n)<t<=ln n", "multi_stage",
                              {"t": tt, "L0": 0.0, "ell": s["ell"], "k": s["k"]},
                              ["sqrt_ln_n", "ln_n"])
            except ParamOutOfAsymptoticRange:
                ell = (t * ln) ** (1 / 3)
                prov["ell"] = "t + (c t ln n)^(1/3), c=1 (multi-stage schedule unresolvable)"
                return bundle("sqrt(ln n)<t<=ln n", "threshold", {"ell": t + ell, "excess": ell},
                              ["sqrt_ln_n", "ln_n"])
        t_ms = min(t, 35 * ln)
        t_prime = max(t - 35 * ln, 0.0)
        s = multi_stage_schedule(n, t_ms, 0.0, None, 0.0, overrides, log_base)
        prov.update({"t_prime": "t - 35 ln n (clamped at 0)", "t": "35 ln n",
                     "ell": s.provenance["ell"], "schedule": s.digest()})
        return bundle("t>ln n", "drift_multi_stage",
                      {"theta": 0.2, "t_prime": t_prime, "t": t_ms, "L0": s["ell"],
                       "ell": s["ell"], "k": s["k"]}, ["ln_n"])

    if metric == "all_time":
        if t < cx["sqrt_ln_n"]:
            ell = threshold_ell(n, t)
            prov["ell"] = "t + sqrt(3 ln n/(ln ln n - 2 ln t))"
            return bundle("t<=sqrt(ln n)", "threshold", {"ell": t + ell, "excess": ell},
                          ["sqrt_ln_n"])
        if t <= cx["ln2_n"]:
            prov["ell"] = "(t ln n)^(1/3)"
            return bundle("sqrt(ln n)<t<=ln^2 n", "relative_threshold",
                          {"ell": (t * ln) ** (1 / 3)}, ["sqrt_ln_n", "ln2_n"])
        prm = varying_drift_params(n)
        prov["ell"] = "2 ln n / ln ln n"
        return bundle("t>ln^2 n", "varying_drift", {"ell": prm["ell"]}, ["ln2_n"])

    # typical
    if t < cx["sqrt_ln_n"]:
        ell = threshold_ell(n, t)
        prov["ell"] = "sqrt(3 ln n/(ln ln n - 2 ln t))"
        return bundle("t<=sqrt(ln n)", "relative_threshold", {"ell": ell}, ["sqrt_ln_n"])
    if t <= cx["ln2_n"]:
        s = q_multi_scale_schedule(n, None, overrides, log_base)
        prov["schedule"] = s.digest()
        return bundle("sqrt(ln n)<t<=ln^2 n", "q_multi_scale", {"Q": s["Q"]},
                      ["sqrt_ln_n", "ln2_n"])
    s = longterm_schedule(1.0, n, overrides, log_base)
    prov["schedule"] = s.digest()
    return bundle("t>ln^2 n", "longterm", {"d": 1.0}, ["ln2_n"])


def build_policy(strategy: str, n: int, m: int, params: dict | None = None,
                 overrides: dict | None = None, log_base: float = math.e):
    """A fresh policy plus the digest of its schedule ('' when it has none)."""
    p = dict(params or {})
    t_default = math.ceil(m / n)
    if strategy == "threshold":
        return threshold_policy(p["ell"]), ""
    if strategy == "relative_threshold":
        return relative_threshold_policy(p["ell"], log_base), ""
    if strategy == "multi_stage":
        s = multi_stage_schedule(n, p.get("t", t_default), p.get("L0", 0.0), p.get("ell"),
                                 p.get("eta", 0.0), overrides, log_base)
        return MultiStagePolicy(s), s.digest()
    if strategy == "drift_multi_stage":
        t_prime = p.get("t_prime", 0.0)
        t = p.get("t", max(t_default - t_prime, 0))
        s = (multi_stage_schedule(n, t, p.get("L0", 0.0), p.get("ell"), 0.0, overrides,
                                  log_base) if t > 0 else None)
        return DriftMultiStagePolicy(p.get("theta", 0.2), t_prime, s), s.digest() if s else ""
    if strategy == "q_multi_scale":
        pol = q_multi_scale_policy(p.get("Q"), n, overrides, log_base)
        return pol, pol.schedule.digest()
    if strategy == "longterm":
        pol = d_multiscale_longterm_policy(p.get("d", 1.0), n, overrides, log_base,
                                           int(p.get("phase3_budget", 10 ** 9)))
        return pol, pol.schedule.digest()
    if strategy == "drift":
        return drift_policy(p.get("theta", 0.2)), ""
    if strategy == "varying_drift":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return varying_drift_policy(p.get("ell"), n, theta1=p.get("theta1"),
                                        theta2=p.get("theta2"), theta3=p.get("theta3"),
                                        limit=p.get("limit")), ""
    if strategy == "one_choice":
        return accept_all_policy(), ""
    if strategy == "two_choice":
        return SingleRulePolicy(TwoChoice(), "two_choice_greedy"), ""
    if strategy == "one_plus_beta":
        return SingleRulePolicy(OnePlusBeta(p.get("beta", 0.5))), ""
    if strategy == "reject_all":
        return reject_all_policy(), ""
    raise ValueError(f"unknown strategy {strategy!r}")


@dataclass
class ExperimentSpec:
    strategy: str = "threshold"
    params: dict = field(default_factory=dict)
    metric: str | None = None  # needed for strategy="auto"
    n: list[int] = field(default_factory=lambda: [1000])
    m: int | None = None
    t: float | None = None
    alpha: float | None = None  # m = n * ceil((ln n)^alpha)
    trials: int = 1
    seed: int = 0
    eps: float = 0.1
    trace_stride: int = 1
    overrides: dict | None = None
    log_base: float = math.e
    out: str | None = None
    jobs: int = 1
    timing: bool = False

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "auto" and self.metric not in METRICS:
            raise ValueError("strategy=auto needs metric in " + ", ".join(METRICS))
        if sum(x is not None for x in (self.m, self.t, self.alpha)) != 1:
            raise ValueError("give exactly one of m, t, alpha")
        if self.trials < 1 or not self.n or any(v < 1 for v in self.n):
            raise ValueError("need trials >= 1 and positive n")
        if not 0 < self.eps <= 1:
            raise ValueError("eps must lie in (0, 1]")

    def m_for(self, n: int) -> int:
        if self.m is not None:
            return int(self.m)
        if self.t is not None:
            return int(round(n * self.t))
        return n * math.ceil(math.log(n) ** self.alpha)

    def resolve(self, n: int) -> tuple[str, dict]:
        """Concrete (strategy, params) for ``n``; runs automatic selection if asked."""
        if self.strategy != "auto":
            return self.strategy, dict(self.params)
        b = auto_ell(self.metric, n, self.m_for(n), overrides=self.overrides,
                     log_base=self.log_base)
        return b.strategy, dict(b.params)


def run_trial(spec: ExperimentSpec, n: int, trial: int) -> ResultRow:
    m = spec.m_for(n)
    strategy, params = spec.resolve(n)
    try:
        policy, digest = build_policy(strategy, n, m, params, spec.overrides, spec.log_base)
    except TwoThinError as exc:
        raise type(exc)(f"[n={n}, m={m}, strategy={strategy}] {exc}") from exc
    stream = RandomStream(n, trial_seed_sequence(spec.seed, trial))
    t0 = time.perf_counter()
    trace = run(n, m, policy, stream=stream, max_stride=spec.trace_stride)
    ms = (time.perf_counter() - t0) * 1e3 if spec.timing else None
    return result_row(trace, trial, spec.seed, spec.eps, ms, digest)


def _run_job(args):
    spec, n, trial = args
    return run_trial(spec, n, trial)


SUMMARY_FIELDS = ("maxload_final_scaled", "maxload_alltime_scaled", "maxload_typical_scaled",
                  "retries", "coupled_steps")


def summarize(rows: list[ResultRow]) -> dict:
    """Median, mean and max of each metric per (n, m, strategy); order-independent."""
    groups: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        groups.setdefault((r.n, r.m, r.strategy), []).append(r)
    out = []
    for (n, m, strategy), rs in sorted(groups.items()):
        entry = {"n": n, "m": m, "strategy": strategy, "trials": len(rs), "metrics": {}}
        for f in SUMMARY_FIELDS:
            vals = sorted(getattr(r, f) for r in rs if getattr(r, f) is not None)
            if not vals:
                entry["metrics"][f] = None
                continue
            entry["metrics"][f] = {
                "median": float(statistics.median(vals)),
                "mean": math.fsum(vals) / len(vals),
                "max": vals[-1],
            }
            if f.endswith("_scaled"):
                entry["metrics"][f]["median_load"] = float(statistics.median(vals)) / n
        out.append(entry)
    return {"groups": out}


@dataclass
class ResultSet:
    rows: list[ResultRow]
    summary: dict
    csv_path: str | None = None
    json_path: str | None = None


def _write(rows: list[ResultRow], spec: ExperimentSpec, out: str | None):
    if out is None:
        return None, None
    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, "results.csv")
    json_path = os.path.join(out, "summary.json")
    with open(csv_path, "w", newline="") as fh:
        write_rows(rows, fh)
    with open(json_path, "w") as fh:
        # where and how parallel the run was does not change its results
        recorded = {k: v for k, v in asdict(spec).items() if k not in ("out", "jobs")}
        json.dump({"spec": recorded, **summarize(rows)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def run_experiment(spec: ExperimentSpec) -> ResultSet:
    spec.validate()
    jobs = [(spec, n, trial) for n in spec.n for trial in range(spec.trials)]
    rows: list[ResultRow] = []
    try:
        if spec.jobs > 1:
            with ProcessPoolExecutor(max_workers=spec.jobs) as ex:
                for row in ex.map(_run_job, jobs):
                    rows.append(row)
        else:
            for job in jobs:
                rows.append(_run_job(job))
    except KeyboardInterrupt:
        rows.sort(key=lambda r: (r.n, r.m, r.strategy, r.trial))
        _write(rows, spec, spec.out)
        raise
    rows.sort(key=lambda r: (r.n, r.m, r.strategy, r.trial))
    csv_path, json_path = _write(rows, spec, spec.out)
    return ResultSet(rows, summarize(rows), csv_path, json_path)
