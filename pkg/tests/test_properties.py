import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st

import twothin as T
from twothin.engine import LoadState, RandomStream, step
from twothin.metrics import (decomposition_holds, level_set_count, maxload_interval,
                             maxload_typical)

POLICIES = {
    "threshold": lambda a: T.threshold_policy(1 + a),
    "relative": lambda a: T.relative_threshold_policy(0.5 + a),
    "one_choice": lambda a: T.accept_all_policy(),
    "reject_all": lambda a: T.reject_all_policy(),
    "one_plus_beta": lambda a: T.baseline_policies(min(a / 4, 1.0))["one_plus_beta"],
    "drift": lambda a: T.drift_policy(0.05 + 0.04 * min(a, 4.5)),
}


@st.composite
def zero_sum_loads(draw, n):
    vals = draw(st.lists(st.integers(-5, 5), min_size=n, max_size=n))
    vals[-1] -= sum(vals)
    return vals


@st.composite
def runs(draw):
    n = draw(st.integers(1, 12))
    m = draw(st.integers(0, 120))
    kind = draw(st.sampled_from(sorted(POLICIES)))
    a = draw(st.floats(0, 4))
    init = draw(zero_sum_loads(n))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    return n, m, kind, a, init, seed


@given(runs())
def test_invariants_hold_at_every_step(case):
    n, m, kind, a, init, seed = case
    pol = POLICIES[kind](a)
    pol.reset()
    state = LoadState.fresh(n, init)
    stream = RandomStream(n, seed)
    for _ in range(m):
        rec = step(state, pol, stream)
        assert int(state.scaled_loads().sum()) == 0
        assert rec.running_max_scaled == int(state.scaled_loads().max())
        assert decomposition_holds(state)
        state.check_invariants()


@given(runs())
def test_fast_and_reference_paths_agree(case):
    n, m, kind, a, init, seed = case
    fast = T.run(n, m, POLICIES[kind](a), init, stream=seed, record_stride=1)
    ref = T.run(n, m, POLICIES[kind](a), init, stream=seed, record_stride=1, fast=False)
    for key in fast.records:
        assert np.array_equal(fast.records[key], ref.records[key])
    assert fast.alltime_max_scaled == ref.alltime_max_scaled


@given(runs())
def test_max_series_matches_records(case):
    n, m, kind, a, init, seed = case
    tr = T.run(n, m, POLICIES[kind](a), init, stream=seed, record_stride=1)
    counts = np.zeros(n, np.int64)
    init = np.asarray(init)
    for j, b in enumerate(tr.records["final"]):
        counts[b] += 1
        assert tr.max_scaled[j] == int((n * (init + counts) - (j + 1)).max())


series_st = st.lists(st.integers(-50, 50), min_size=1, max_size=60)


@given(series_st, st.data())
def test_interval_max_monotone(series, data):
    a = data.draw(st.integers(1, len(series)))
    b = data.draw(st.integers(a, len(series)))
    assert maxload_interval(series, range(1, a + 1)).value <= maxload_interval(
        series, range(1, b + 1)).value


@given(series_st, st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
def test_typical_between_min_and_alltime(series, e1, e2):
    lo, hi = sorted((e1, e2))
    t_lo = maxload_typical(series, lo)
    t_hi = maxload_typical(series, hi)
    assert min(series) <= t_hi <= t_lo <= maxload_interval(series).value


@given(series_st, st.floats(1e-6, 1.0))
def test_typical_level_definition(series, eps):
    v = maxload_typical(series, eps)
    need = max(1, int(np.ceil(eps * len(series) - 1e-12)))
    arr = np.asarray(series)
    assert np.count_nonzero(arr >= v) >= need
    higher = arr[arr > v]
    if higher.size:
        assert np.count_nonzero(arr >= higher.min()) < need


@given(st.lists(st.integers(-40, 40), min_size=1, max_size=30), st.floats(-10, 10),
       st.floats(0, 5))
def test_level_set_monotone(loads, ell, gap):
    n = len(loads)
    assert level_set_count(loads, ell + gap, n=n) <= level_set_count(loads, ell, n=n) <= n


@st.composite
def in_band_targets(draw):
    n = draw(st.integers(2, 20))
    c = draw(st.floats(0.05, 0.95))
    w = min(c, 1 - c) * 0.99
    d = np.array(draw(st.lists(st.floats(-w, w), min_size=n, max_size=n)))
    d -= d.mean()
    assume(np.all(np.abs(d) <= min(c, 1 - c)))
    return (1 + d) / n, c


@given(in_band_targets())
def test_realized_law_is_exact(target):
    p, c = target
    r = T.realize_distribution(p, c)
    n = len(p)
    a = r.accept_prob
    law = a / n + (1 - a).sum() / n / n
    assert np.allclose(law, p, atol=1e-12)
