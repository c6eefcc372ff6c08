import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

import twothin as T
from twothin.analysis import exact_small_dp
from twothin.engine import DecisionContext, LoadState, RandomStream, run
from twothin.errors import BandViolation, PolicyExhausted, ScheduleInvalid
from twothin.strategies import HeavySets, RelativeThreshold, Threshold
from twothin.strategies.base import low_load_cut


def ctx(**kw):
    base = dict(k=1, n=10, primary=0, scaled_load=0, accepted=0, stage_accepted=0,
                segment_k=1, u=0.5)
    base.update(kw)
    return DecisionContext(**base)


def enumerate_max_law(n, m, accept):
    """Exact law of the final max count by brute force over (primary, secondary) pairs.

    ``accept(counts, accepted, primary, k0)`` decides ball ``k0 + 1``
    (deterministic rules only).
    """
    law = {}
    w = Fraction(1, n * n) ** m
    for draws in itertools.product(range(n), repeat=2 * m):
        counts = [0] * n
        acc = [0] * n
        for k0 in range(m):
            p, s = draws[2 * k0], draws[2 * k0 + 1]
            if accept(counts, acc, p, k0):
                counts[p] += 1
                acc[p] += 1
            else:
                counts[s] += 1
        key = max(counts)
        law[key] = law.get(key, 0) + w
    return law


@pytest.mark.parametrize("ell", [1, 2, 3.5])
def test_threshold_boundary(ell):
    rule = Threshold(ell)
    top = math.ceil(ell)
    assert rule.decide(ctx(stage_accepted=top - 1))
    assert not rule.decide(ctx(stage_accepted=top))


def test_threshold_two_bins_exact():
    law = enumerate_max_law(2, 2, lambda c, a, p, k0: a[p] < 1)
    assert law[2] == Fraction(1, 4)
    dp = exact_small_dp(2, 2, "threshold", {"ell": 1})
    assert dp.max_count()[2] == Fraction(1, 4)


def test_threshold_matches_enumeration_three_balls():
    law = enumerate_max_law(2, 3, lambda c, a, p, k0: a[p] < 2)
    dp = exact_small_dp(2, 3, "threshold", {"ell": 2}).max_count()
    assert {k: v for k, v in dp.items() if v} == law


def test_relative_threshold_matches_enumeration():
    n, ell = 2, 1.0

    def accept(c, a, p, k0):
        scaled = n * c[p] - k0
        return n * a[p] - k0 <= math.ceil(n * ell) - 1 or scaled < -n * math.log(n)

    law = enumerate_max_law(n, 4, accept)
    dp = exact_small_dp(n, 4, "relative_threshold", {"ell": ell}).max_count()
    assert {k: v for k, v in dp.items() if v} == law


def test_relative_threshold_first_ball_is_plain_threshold():
    rule = RelativeThreshold(2.0)
    st = LoadState.fresh(10)
    rule.start(st, RandomStream(10, 0))
    for acc in range(6):
        assert rule.decide(ctx(stage_accepted=acc, segment_k=1)) == Threshold(2.0).decide(
            ctx(stage_accepted=acc))


def test_relative_threshold_low_load_escape():
    n = 10
    rule = RelativeThreshold(1.0)
    rule.start(LoadState.fresh(n), RandomStream(n, 0))
    light = -math.ceil(n * math.log(n)) - 1
    assert rule.decide(ctx(n=n, stage_accepted=50, scaled_load=light))
    assert not rule.decide(ctx(n=n, stage_accepted=50, scaled_load=-math.floor(n * math.log(n))))


def test_low_load_cut_is_exact():
    for n in (2, 3, 10, 1000, 12345):
        cut = low_load_cut(n)
        assert cut < -n * math.log(n) <= cut + 1


def test_realize_two_bin_example():
    r = T.realize_distribution([0.6, 0.4], 0.8)
    assert np.allclose(r.accept_prob, [0.4, 0.0])
    # P(Z = 0) by total probability over primary and acceptance
    pz0 = sum(0.5 * (a * (i == 0) + (1 - a) * 0.5) for i, a in enumerate(r.accept_prob))
    assert pz0 == pytest.approx(0.6)
    z = r.sample(400_000, np.random.default_rng(0))
    assert abs(np.mean(z == 0) - 0.6) < 0.005


def test_realize_uniform_target():
    r = T.realize_distribution(np.full(5, 0.2), 0.3)
    assert np.allclose(r.accept_prob, 0.7)


def test_realize_band_violation():
    with pytest.raises(BandViolation):
        T.realize_distribution([0.9, 0.1], 0.5)


def test_realize_policy_runs():
    r = T.realize_distribution([0.6, 0.4], 0.8)
    tr = run(2, 20000, r.as_policy(), stream=5, record_stride=1)
    assert abs(np.mean(tr.records["final"] == 0) - 0.6) < 0.02


def test_one_plus_beta_degenerate_cases():
    n, m = 40, 3000
    pols = T.baseline_policies(1.0)
    a = run(n, m, pols["one_plus_beta"], stream=2, record_stride=1)
    b = run(n, m, pols["two_choice_greedy"], stream=2, record_stride=1)
    assert np.array_equal(a.records["final"], b.records["final"])
    pols = T.baseline_policies(0.0)
    a = run(n, m, pols["one_plus_beta"], stream=2, record_stride=1)
    b = run(n, m, pols["one_choice"], stream=2, record_stride=1)
    assert np.array_equal(a.records["final"], b.records["final"])


def test_one_plus_beta_range():
    with pytest.raises(ValueError):
        T.OnePlusBeta(1.5)


def test_two_choice_prefers_lighter_then_lower_index():
    n = 3
    st = LoadState.fresh(n)
    rule = T.TwoChoice()
    assert rule.place(st, None, 2, 0.5, 1)[0] == 1
    st.counts[1] = 1
    st.k = 1
    assert rule.place(st, None, 2, 0.5, 1)[0] == 2


def test_multi_stage_heavy_set_empty_at_zero():
    n = 64
    pol = T.multi_stage_policy(6, 0, 2, n=n, overrides={"k": 2})
    run(n, 6 * n, pol, stream=1)
    assert len(pol.heavy.sets[0]) == 0
    assert [lab for _, lab in pol.history] == ["multi_stage[1/2]", "multi_stage[2/2]"]


def test_multi_stage_stage_lengths():
    n = 64
    pol = T.multi_stage_policy(6, 0, 2, n=n, overrides={"k": 2})
    run(n, 6 * n, pol, stream=1)
    t_i = pol.schedule["t_i"]
    starts = [k for k, _ in pol.history]
    assert starts == [0, math.floor(t_i[1] * n)]


def test_multi_stage_blocks_initial_heavy_bins():
    n = 16
    init = np.zeros(n, np.int64)
    init[0], init[1] = 5, -5
    pol = T.multi_stage_policy(4, 1, 2, n=n, overrides={"k": 2, "t_i": [0, 2, 4]})
    tr = run(n, 2 * n, pol, initial_loads=init, stream=0, record_stride=1)
    assert pol.heavy.sets[0].tolist() == [0]
    rec = tr.records
    hit = rec["primary"] == 0
    assert np.all(rec["decision"][hit] == T.Decision.REJECT)


def test_heavy_sets_disjoint():
    hs = HeavySets(5)
    hs.add(np.array([1, 1, 0, 0, 0], bool), 0)
    added = hs.add(np.array([0, 1, 1, 0, 0], bool), 10)
    assert added.tolist() == [False, False, True, False, False]
    assert hs.union(0, 2, 5).tolist() == [True, True, True, False, False]


def test_drift_multi_stage_zero_prefix_is_multi_stage():
    n = 64
    a = run(n, 6 * n, T.multi_stage_policy(6, 0, 2, n=n, overrides={"k": 2}), stream=8,
            record_stride=1)
    b = run(n, 6 * n, T.drift_multi_stage_policy(0.2, 0, 6, 0, 2, n=n, overrides={"k": 2}),
            stream=8, record_stride=1)
    assert np.array_equal(a.records["final"], b.records["final"])


def test_drift_multi_stage_without_stages_is_drift():
    n = 32
    pol = T.drift_multi_stage_policy(0.2, 5, 0, n=n)
    tr = run(n, 5 * n, pol, stream=3)
    assert tr.coupled_steps == 5 * n
    with pytest.raises(PolicyExhausted):
        run(n, 5 * n + 1, pol, stream=3)


def test_drift_multi_stage_handoff_state_continuity():
    n = 32
    pol = T.drift_multi_stage_policy(0.2, 3, 6, 0, 2, n=n, overrides={"k": 2})
    tr = run(n, 9 * n, pol, stream=3, record_stride=1)
    # the first multi-stage ball starts from the loads the drift phase left behind
    assert pol.history[1][0] == 3 * n
    assert np.all(tr.records["decision"][:3 * n] == T.Decision.COUPLED)
    assert np.all(tr.records["decision"][3 * n:] != T.Decision.COUPLED)
    pre = run(n, 3 * n, T.drift_multi_stage_policy(0.2, 3, 0, n=n), stream=3)
    assert pre.final_max_scaled == tr.max_scaled[3 * n - 1]
    heavy = np.flatnonzero(pre.final_state.scaled_loads() > 0)
    assert np.array_equal(pol.heavy.sets[0], heavy)


def test_q_multi_scale_scale_one_is_relative_threshold():
    n = 2 ** 12
    pol = T.q_multi_scale_policy(n=n, overrides={"k": 2, "alpha_1": 0.8, "i_max": 0})
    Q = pol.schedule["Q"]
    a = run(n, 3 * n, pol, stream=6, record_stride=1)
    b = run(n, 3 * n, T.relative_threshold_policy(Q), stream=6, record_stride=1)
    assert np.array_equal(a.records["final"], b.records["final"])


def test_q_multi_scale_segments_nest():
    n = 2 ** 16
    pol = T.q_multi_scale_policy(n=n, overrides={"k": 2, "alpha_1": 0.8})
    s = pol.schedule
    run(n, s["D_i"][1] * n, pol, stream=2)
    labels = [lab for _, lab in pol.history]
    assert labels[0] == "scale1"
    assert labels.count("scale1") == s["N_i"][0]
    assert labels[1].startswith("multi_stage")


def test_longterm_first_phase_is_multiscale():
    n = 2 ** 16
    pol = T.d_multiscale_longterm_policy(1.0, n, overrides={"k": 2, "alpha_1": 0.8})
    run(n, 2 * n, pol, stream=0)
    assert "phase1" not in pol.iterations[0]
    assert pol.iterations[0]["phase2"] == 0
    assert pol.history[0][1] == "scale1"


def test_longterm_phase3_boundary_inclusive():
    n = 100
    pol = T.d_multiscale_longterm_policy(1.0, 2 ** 16, overrides={"k": 2, "alpha_1": 0.8})
    s = pol.schedule
    st = LoadState.fresh(n)
    bound = n * s["max_abs_load"]
    # a scaled load exactly at the bound (up to integer rounding) still qualifies
    st.initial_loads[0] = math.floor(bound / n)
    st.initial_loads[1] = -math.floor(bound / n)
    assert pol.phase3_done(st)
    st.initial_loads[0] += 1
    st.initial_loads[2] -= 1
    assert not pol.phase3_done(st)


def test_schedule_invalid_boundaries():
    with pytest.raises(ScheduleInvalid):
        T.multi_stage_schedule(10 ** 5, 3, overrides={"k": 2, "ell": 2})
