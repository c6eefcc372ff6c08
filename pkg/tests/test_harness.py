import json
import math
import random

import pytest

from twothin.errors import RegimeAmbiguous, RegimeAmbiguousError
from twothin.harness import (ExperimentSpec, auto_ell, build_policy, crossovers,
                             run_experiment, summarize, threshold_ell)


def test_auto_single_time_short_run():
    n = 10 ** 5
    b = auto_ell("single_time", n, n)
    ln = math.log(n)
    assert b.strategy == "threshold"
    assert b.params["excess"] == pytest.approx(math.sqrt(3 * ln / math.log(ln)))
    assert b.params["ell"] == pytest.approx(1 + b.params["excess"])


def test_auto_all_time_regimes():
    n = 10 ** 4
    ln = math.log(n)
    mid = auto_ell("all_time", n, int(10 * n))
    assert mid.strategy == "relative_threshold"
    assert mid.params["ell"] == pytest.approx((10 * ln) ** (1 / 3))
    top = auto_ell("all_time", n, int(200 * n))
    assert top.strategy == "varying_drift"
    assert top.params["ell"] == pytest.approx(2 * ln / math.log(ln))


def test_auto_single_time_long_run_falls_back():
    n = 10 ** 4
    b = auto_ell("single_time", n, 6 * n)
    assert b.strategy == "threshold"
    assert b.params["excess"] == pytest.approx((6 * math.log(n)) ** (1 / 3))


def test_ambiguity_warning_and_strict():
    n = 10 ** 4
    near = int(crossovers(n)["sqrt_ln_n"] * n * 1.05)
    with pytest.warns(RegimeAmbiguous):
        b = auto_ell("all_time", n, near)
    assert b.ambiguous == ["sqrt_ln_n"]
    with pytest.raises(RegimeAmbiguousError):
        auto_ell("all_time", n, near, strict=True)


def test_threshold_ell_domain():
    with pytest.raises(Exception):
        threshold_ell(100, 10.0)


def test_build_policy_unknown():
    with pytest.raises(ValueError):
        build_policy("nope", 10, 10)


@pytest.mark.parametrize("strategy,params", [
    ("threshold", {"ell": 2}), ("relative_threshold", {"ell": 2}), ("drift", {}),
    ("one_choice", {}), ("two_choice", {}), ("one_plus_beta", {"beta": 0.3}),
    ("reject_all", {}), ("varying_drift", {"ell": 3})])
def test_build_policy_kinds(strategy, params):
    pol, digest = build_policy(strategy, 100, 300, params)
    assert pol.name and digest == ""


def test_run_experiment_is_deterministic(tmp_path):
    spec = dict(strategy="threshold", params={"ell": 2}, n=[50, 80], t=3, trials=3, seed=4)
    a = run_experiment(ExperimentSpec(**spec, out=str(tmp_path / "a")))
    b = run_experiment(ExperimentSpec(**spec, out=str(tmp_path / "b")))
    assert a.rows == b.rows
    for name in ("results.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert {g["n"] for g in summary["groups"]} == {50, 80}


def test_parallel_matches_serial():
    spec = dict(strategy="relative_threshold", params={"ell": 2}, n=[64], m=500, trials=4)
    a = run_experiment(ExperimentSpec(**spec))
    b = run_experiment(ExperimentSpec(**spec, jobs=2))
    assert a.rows == b.rows


def test_summary_is_order_independent():
    rows = run_experiment(ExperimentSpec(strategy="drift", n=[40], m=400, trials=8)).rows
    shuffled = rows[:]
    random.Random(0).shuffle(shuffled)
    assert summarize(shuffled) == summarize(rows)
    assert summarize(rows)["groups"][0]["metrics"]["retries"] is None


def test_timing_column():
    rows = run_experiment(ExperimentSpec(strategy="one_choice", n=[10], m=10)).rows
    assert rows[0].wallclock_ms is None
    rows = run_experiment(ExperimentSpec(strategy="one_choice", n=[10], m=10, timing=True)).rows
    assert rows[0].wallclock_ms >= 0


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(n=[10], m=10, t=1).validate()
    with pytest.raises(ValueError):
        ExperimentSpec(strategy="auto", n=[10], m=10).validate()
    assert ExperimentSpec(n=[100], alpha=1).m_for(100) == 100 * math.ceil(math.log(100))


def test_auto_strategy_runs():
    res = run_experiment(ExperimentSpec(strategy="auto", metric="all_time", n=[1000], t=4))
    assert res.rows[0].strategy.startswith("relative_threshold")
