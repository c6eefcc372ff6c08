import io
import warnings

import numpy as np
import pytest

import twothin as T
from twothin.errors import SubsampledIntervalInexact
from twothin.metrics import (ResultRow, decomposition_holds, level_set_count, maxload_at,
                             maxload_interval, maxload_of, maxload_typical,
                             primary_suggestion_count, read_rows, result_row, retries_of,
                             write_rows)


def test_maxload_of_examples():
    assert maxload_of([6, -2, -4, 0]) == 6
    assert maxload_of([0, 0, 0]) == 0
    assert maxload_of([6, -2, -4, 0], subset=[1, 2]) == -2
    with pytest.raises(ValueError):
        maxload_of([1, -1], subset=[])


def test_interval_examples():
    assert maxload_interval([1, 3, 2]).value == 3
    assert maxload_interval([1, 3, 2], steps=[3]).value == maxload_at([1, 3, 2], 3)
    assert maxload_interval([1, 3, 2], steps=[1]).value == 1


def test_typical_hand_example():
    assert maxload_typical([1, 2, 2, 3, 1], 0.4) == 2


def test_typical_limits():
    series = [1, 2, 2, 3, 1]
    assert maxload_typical(series, 1e-9) == maxload_interval(series).value
    assert maxload_typical(series, 1.0) == min(series)


def test_typical_strict_variant():
    assert maxload_typical([1, 2, 2, 3, 1], 0.4, strict=True) == 1
    assert maxload_typical([3, 3], 0.5, strict=True) is None


def test_final_not_bounded_by_typical():
    # per-step maxima for n = 2: final value 2 lies above the eps = 1/2 typical value 1
    series = [1, 0, 1, 2]
    assert maxload_typical(series, 0.5) == 1
    assert series[-1] > maxload_typical(series, 0.5)


def test_level_set_examples():
    loads = [6, -2, -4, 0]
    assert level_set_count(loads, 0, n=4) == 2
    assert level_set_count(loads, 100, n=4) == 0
    assert level_set_count(loads, -5, n=4) == 4
    assert level_set_count(loads, 0, subset=[1, 2], n=4) == 0


def test_level_set_uses_exact_threshold():
    # n L >= n ell with ell = 1/3, n = 3 means scaled >= 1
    assert level_set_count([1, 0, -1], 1 / 3, n=3) == 1


def test_primary_suggestions():
    n = 2
    tr = T.run(n, 3, T.accept_all_policy(), stream=0, record_stride=1)
    prim = tr.records["primary"]
    expect = int(np.count_nonzero(np.bincount(prim, minlength=n)[[1]] >= 2))
    assert primary_suggestion_count(tr, 2, subset=[1]) == expect
    assert primary_suggestion_count(tr, 0) == n
    assert primary_suggestion_count(tr, 1, steps=[]) == 0


def test_subsampled_interval_warns():
    tr = T.run(10, 100, T.threshold_policy(1), stream=0, max_stride=10)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        full = maxload_interval(tr)
    assert full.exact and full.value == tr.alltime_max_scaled
    with pytest.warns(SubsampledIntervalInexact):
        part = maxload_interval(tr, steps=range(1, 51))
    assert not part.exact


def test_decomposition_threshold_run():
    tr = T.run(20, 500, T.threshold_policy(2), stream=1)
    assert decomposition_holds(tr.final_state)


def test_retries_reported():
    tr = T.run(20, 500, T.threshold_policy(1), stream=1)
    assert retries_of(tr) == tr.retries > 0


def test_csv_round_trip():
    tr = T.run(20, 300, T.threshold_policy(2), stream=1)
    row = result_row(tr, trial=3, seed=9, eps=0.1, wallclock_ms=None, schedule_hash="ab")
    drift = result_row(T.run(20, 50, T.drift_policy(), stream=2), 0, 9, 0.25, 1.5)
    buf = io.StringIO()
    write_rows([row, drift], buf)
    back = read_rows(buf.getvalue())
    assert back == [row, drift]
    assert back[1].retries is None and back[0].wallclock_ms is None
    assert buf.getvalue().splitlines()[0].split(",") == ResultRow.columns()
