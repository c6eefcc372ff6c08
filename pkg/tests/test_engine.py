import io
import json
import warnings

import numpy as np
import pytest

import twothin as T
from twothin.engine import BLOCK, Decision, LoadState, RandomStream, run, scaled_load, step
from twothin.errors import PolicyExhausted


def test_scaled_loads_from_counts():
    st = LoadState.fresh(2)
    st.counts[:] = [3, 1]
    st.k = 4
    assert st.scaled_loads().tolist() == [2, -2]


def test_scaled_loads_from_initial():
    st = LoadState.fresh(2, [1, -1])
    assert st.scaled_loads().tolist() == [2, -2]
    assert scaled_load(st, 0) == 2
    with pytest.raises(IndexError):
        scaled_load(st, 2)


def test_equal_counts_give_zero_loads():
    st = LoadState.fresh(5)
    st.counts[:] = 7
    st.k = 35
    assert not st.scaled_loads().any()


@pytest.mark.parametrize("bad", [[1, 0], [0.5, -0.5], [1, -1, 0]])
def test_initial_loads_validated(bad):
    with pytest.raises(ValueError):
        LoadState.fresh(2, bad)


def test_single_bin_always_final(quiet):
    for pol in (T.accept_all_policy(), T.reject_all_policy(), T.threshold_policy(1),
                T.drift_policy(0.2)):
        tr = run(1, 200, pol, stream=4, record_stride=1)
        assert np.all(tr.records["final"] == 0)
        assert np.all(tr.max_scaled == 0)


def test_accept_all_has_no_retries():
    tr = run(50, 2000, T.accept_all_policy(), stream=1, record_stride=1)
    assert tr.retries == 0
    assert np.all(tr.records["decision"] == Decision.ACCEPT)
    assert np.array_equal(tr.records["final"], tr.records["primary"])


def test_reject_all_uses_secondary():
    n, m = 8, 4000
    tr = run(n, m, T.reject_all_policy(), stream=2, record_stride=1)
    assert tr.retries == m
    st = RandomStream(n, 2)
    secs = st.block(0)[2][:m]
    assert np.array_equal(tr.records["final"], secs)


def test_empty_run_reports_initial_max():
    tr = run(2, 0, T.accept_all_policy(), initial_loads=[3, -3])
    assert tr.final_max_scaled == 6
    assert tr.alltime_max_scaled == 6
    assert len(tr.max_scaled) == 0


def test_stream_blocks_are_forward_only():
    st = RandomStream(10, 0)
    a = st.draw(BLOCK + 3)
    with pytest.raises(ValueError):
        st.block(0)
    assert a == RandomStream(10, 0).draw(BLOCK + 3)


def test_trial_streams_differ():
    a = RandomStream(100, T.trial_seed_sequence(7, 0)).block(0)[0]
    b = RandomStream(100, T.trial_seed_sequence(7, 1)).block(0)[0]
    assert not np.array_equal(a, b)


def _policies(n):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield "threshold", T.threshold_policy(2.5), 1000
        yield "relative", T.relative_threshold_policy(1.5), 1000
        yield "accept", T.accept_all_policy(), 1000
        yield "one_plus_beta", T.baseline_policies(0.3)["one_plus_beta"], 1000
        yield "two_choice", T.baseline_policies()["two_choice_greedy"], 1000
        yield "drift", T.drift_policy(0.2, buffer=100), 1000
        yield "varying", T.varying_drift_policy(2.0, n, limit=3, buffer=50), 1000
        yield "multi_stage", T.multi_stage_policy(6, 0, 2, n=n, overrides={"k": 2}), 6 * n
        yield ("drift_multi_stage",
               T.drift_multi_stage_policy(0.2, 2.5, 6, 0, 2, n=n, overrides={"k": 2}),
               int(2.5 * n) + 6 * n)


@pytest.mark.parametrize("idx", range(9))
def test_fast_path_matches_reference(idx):
    n = 64
    name, pol, m = list(_policies(n))[idx]
    a = run(n, m, pol, stream=3, record_stride=1)
    hist_a = list(pol.history)
    b = run(n, m, pol, stream=3, record_stride=1, fast=False)
    for key in a.records:
        assert np.array_equal(a.records[key], b.records[key]), (name, key)
    assert np.array_equal(a.max_scaled, b.max_scaled)
    assert hist_a == list(pol.history)
    a.final_state.check_invariants()


def test_multi_stage_exhausts_after_horizon():
    n = 32
    pol = T.multi_stage_policy(6, 0, 2, n=n, overrides={"k": 2})
    run(n, 6 * n, pol, stream=0)
    with pytest.raises(PolicyExhausted):
        run(n, 6 * n + 1, pol, stream=0)


def test_step_returns_record():
    st = LoadState.fresh(4)
    pol = T.threshold_policy(1)
    pol.reset()
    rec = step(st, pol, RandomStream(4, 0))
    assert rec.k == 1 and rec.decision == Decision.ACCEPT
    assert rec.running_max_scaled == 3


def test_strided_recording_keeps_exact_alltime():
    n, m = 100, 5000
    full = run(n, m, T.threshold_policy(2), stream=9, record_stride=1)
    coarse = run(n, m, T.threshold_policy(2), stream=9, max_stride=50, record_stride=500)
    assert coarse.alltime_max_scaled == full.alltime_max_scaled
    assert np.array_equal(coarse.max_scaled, full.max_scaled[49::50])


def test_ndjson_lines():
    tr = run(5, 20, T.threshold_policy(1), stream=0, record_stride=1)
    buf = io.StringIO()
    tr.write_ndjson(buf)
    lines = [json.loads(x) for x in buf.getvalue().splitlines()]
    assert len(lines) == 20
    assert lines[0]["k"] == 1
