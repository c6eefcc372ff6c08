"""Command line: ``run``, ``sweep``, ``params``, ``oracle`` and ``verify``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings

from . import acceptance as AC
from . import analysis as A
from .errors import TwoThinError
from .harness import METRICS, STRATEGIES, ExperimentSpec, auto_ell, run_experiment
from .strategies import longterm_schedule, multi_stage_schedule, q_multi_scale_schedule


def _load_overrides(path: str | None) -> dict | None:
    if not path:
        return None
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise SystemExit("overrides file must hold a flat JSON object")
    return data


def _strategy_params(ns: argparse.Namespace) -> dict:
    out = {}
    for key in ("ell", "theta", "beta", "L0", "t_prime", "d", "Q", "eta", "stage_t"):
        v = getattr(ns, key, None)
        if v is not None:
            out["t" if key == "stage_t" else key] = v
    return out


def _common(p: argparse.ArgumentParser, multi: bool) -> None:
    p.add_argument("--strategy", default="threshold", choices=STRATEGIES)
    p.add_argument("--metric", choices=METRICS, help="metric for --strategy auto")
    if multi:
        p.add_argument("--n", type=int, nargs="+", required=True)
        p.add_argument("--t", type=float, nargs="+")
    else:
        p.add_argument("--n", type=int, required=True)
        p.add_argument("--t", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--alpha", type=float, help="m = n * ceil((ln n)^alpha)")
    p.add_argument("--ell", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--L0", type=float)
    p.add_argument("--t-prime", dest="t_prime", type=float)
    p.add_argument("--stage-t", dest="stage_t", type=float, help="multi-stage length t")
    p.add_argument("--d", type=float)
    p.add_argument("--Q", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--trace-stride", type=int, default=1)
    p.add_argument("--overrides")
    p.add_argument("--log-base", type=float, default=math.e)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="fill the wallclock_ms column")


def _spec(ns, n_list, t) -> ExperimentSpec:
    return ExperimentSpec(strategy=ns.strategy, params=_strategy_params(ns), metric=ns.metric,
                          n=n_list, m=ns.m, t=t, alpha=ns.alpha, trials=ns.trials,
                          seed=ns.seed, eps=ns.eps, trace_stride=ns.trace_stride,
                          overrides=_load_overrides(ns.overrides), log_base=ns.log_base,
                          out=ns.out, jobs=ns.jobs, timing=ns.timing)


def cmd_run(ns) -> int:
    res = run_experiment(_spec(ns, [ns.n], ns.t))
    json.dump(res.summary, sys.stdout, indent=2)
    print()
    return 0


def cmd_sweep(ns) -> int:
    ts = ns.t or [None]
    summaries = []
    base_out = ns.out
    for t in ts:
        if base_out and len(ts) > 1:
            ns.out = f"{base_out}/t={t:g}"
        res = run_experiment(_spec(ns, ns.n, t))
        summaries.extend(res.summary["groups"])
    json.dump({"groups": summaries}, sys.stdout, indent=2)
    print()
    return 0


def cmd_params(ns) -> int:
    ov = _load_overrides(ns.overrides)
    if ns.metric:
        m = ns.m if ns.m is not None else int(round(ns.n * (ns.t or 1.0)))
        out = auto_ell(ns.metric, ns.n, m, overrides=ov, log_base=ns.log_base).to_dict()
        print(json.dumps(out, indent=2))
        return 0
    if ns.strategy == "multi_stage":
        t = ns.t if ns.t is not None else math.ceil((ns.m or ns.n) / ns.n)
        s = multi_stage_schedule(ns.n, t, ns.L0 or 0.0, ns.ell, ns.eta or 0.0, ov, ns.log_base)
    elif ns.strategy == "q_multi_scale":
        s = q_multi_scale_schedule(ns.n, ns.Q, ov, ns.log_base)
    elif ns.strategy == "longterm":
        s = longterm_schedule(ns.d or 1.0, ns.n, ov, ns.log_base)
    else:
        raise SystemExit("params needs --metric or one of multi_stage, q_multi_scale, longterm")
    print(s.to_json())
    return 0


def cmd_oracle(ns) -> int:
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["table", "lambda", "kappa", "exact", "lower", "upper", "lower_ok", "upper_ok"])
    for lam in ns.lambdas:
        for kappa in [math.sqrt(lam) * f for f in (1, 2, 4)] + [lam, 2 * lam, 4 * lam]:
            ex = A.poisson_tail_exact(lam, kappa)
            sw = A.poisson_tail_sandwich(lam, kappa)
            w.writerow(["poisson_tail", lam, f"{kappa:.6g}", f"{ex:.6e}", f"{sw.lower:.6e}",
                        f"{sw.upper:.6e}", ex >= sw.lower, ex <= sw.upper])
    w.writerow([])
    w.writerow(["table", "theta", "k", "bound", "log_bound", "vacuous"])
    for k in (50, 100, 200, 225, 300, 400):
        b = A.drift_tail_bound(0.2, k)
        w.writerow(["drift_tail", 0.2, k, f"{b.value:.6e}", f"{b.log_value:.6f}", b.vacuous])
    w.writerow([])
    rb = A.retry_threshold(ns.retry_n, 1.0, 4.0)
    w.writerow(["table", "n", "lambda", "ell", "r_star", "failure_bound"])
    w.writerow(["retry", ns.retry_n, 1.0, 4.0, f"{rb.r_star:.6f}", f"{rb.failure.value:.6e}"])
    w.writerow([])
    w.writerow(["table", "n", "m", "policy", "states", "tv", "samples"])
    ok = True
    for n, m, kind, prm in AC.C4_CASES:
        exact = A.exact_small_dp(n, m, kind, prm)
        tally = A.monte_carlo_states(n, m, kind, prm, ns.samples, seed=ns.seed)
        tv = A.tv_distance(exact, tally)
        ok &= tv < 0.01
        w.writerow(["dp_vs_mc", n, m, kind, len(exact.probs), f"{tv:.6f}", ns.samples])
    return 0 if ok else 1


def cmd_verify(ns) -> int:
    budget = AC.QUICK if ns.quick else AC.FULL
    verdicts = []
    for suite in ns.suite:
        verdicts.extend(AC.run_suite(suite, budget))
    for v in verdicts:
        print(v.line(), f"({v.seconds:.1f}s)")
    passed = all(v.passed for v in verdicts if not v.informational)
    report = {"suites": ns.suite, "quick": ns.quick, "passed": passed,
              "criteria": [v.to_dict() for v in verdicts]}
    if ns.out:
        with open(ns.out, "w") as fh:
            json.dump(report, fh, indent=2, default=float)
            fh.write("\n")
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twothin", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="trials of one strategy at one n")
    _common(p, multi=False)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="trials over several n (and t) values")
    _common(p, multi=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("params", help="print a parameter schedule or automatic choice as JSON")
    p.add_argument("--strategy", default="multi_stage")
    p.add_argument("--metric", choices=METRICS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--t", type=float)
    p.add_argument("--ell", type=float)
    p.add_argument("--L0", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--Q", type=float)
    p.add_argument("--d", type=float)
    p.add_argument("--overrides")
    p.add_argument("--log-base", type=float, default=math.e)
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("oracle", help="bound tables and the exact-vs-simulated check")
    p.add_argument("--lambdas", type=float, nargs="+", default=[50, 100, 200])
    p.add_argument("--retry-n", type=int, default=1000)
    p.add_argument("--samples", type=int, default=10 ** 6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("verify", help="run acceptance suites")
    p.add_argument("--suite", nargs="+", default=["acceptance"], choices=sorted(AC.SUITES))
    p.add_argument("--out", help="verdict JSON file")
    p.add_argument("--quick", action="store_true", help="cap n at 1e5 and trials at 50")
    p.set_defaults(fn=cmd_verify)
    return ap


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return ns.fn(ns)
    except (TwoThinError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
