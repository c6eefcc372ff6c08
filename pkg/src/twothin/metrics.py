"""Load statistics over traces and states, all in scaled integers (``n * L``)."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from typing import Iterable

import numpy as np

from .engine import LoadState, RunTrace
from .errors import SubsampledIntervalInexact


def maxload_of(scaled_loads, subset=None) -> int:
    """Maximum of scaled loads, optionally over the bins in ``subset``."""
    x = np.asarray(scaled_loads)
    if subset is not None:
        x = x[np.asarray(list(subset), dtype=np.int64)]
    if x.size == 0:
        raise ValueError("empty bin set")
    return int(x.max())


def _series(trace_or_series) -> tuple[np.ndarray, int]:
    if isinstance(trace_or_series, RunTrace):
        return trace_or_series.max_scaled, trace_or_series.max_stride
    return np.asarray(trace_or_series, dtype=np.int64), 1


def maxload_at(trace_or_series, k: int) -> int:
    """``n * MaxLoad(k)`` for 1-based ``k``; the step must be recorded."""
    vals, stride = _series(trace_or_series)
    m = len(vals) * stride
    if not 1 <= k <= m:
        raise IndexError(f"k={k} outside [1, {m}]")
    if k % stride:
        raise IndexError(f"step {k} not recorded at stride {stride}")
    return int(vals[k // stride - 1])


@dataclass(frozen=True)
class IntervalMax:
    value: int
    exact: bool


def maxload_interval(trace_or_series, steps=None) -> IntervalMax:
    """All-time maximum over the 1-based steps in ``steps`` (default: all recorded).

    With a subsampled series only recorded steps enter, so the value may
    undershoot; ``exact`` is False and a warning is issued.
    """
    vals, stride = _series(trace_or_series)
    if steps is None:
        if len(vals) == 0:
            raise ValueError("empty step set")
        if stride == 1:
            return IntervalMax(int(vals.max()), True)
        if isinstance(trace_or_series, RunTrace) and len(vals) * stride == trace_or_series.m:
            # the engine tracks the exact all-time maximum separately
            return IntervalMax(int(max(vals.max(), trace_or_series.alltime_max_scaled)), True)
        sel = vals
    else:
        idx = np.asarray(list(steps), dtype=np.int64)
        if idx.size == 0:
            raise ValueError("empty step set")
        if np.any(idx < 1) or np.any(idx > len(vals) * stride):
            raise IndexError("step outside recorded range")
        if stride == 1:
            return IntervalMax(int(vals[idx - 1].max()), True)
        rec = idx[idx % stride == 0]
        if rec.size == 0:
            raise ValueError("no recorded step in the set")
        sel = vals[rec // stride - 1]
    warnings.warn(f"series recorded at stride {stride}; interval maximum is a lower bound",
                  SubsampledIntervalInexact, stacklevel=2)
    return IntervalMax(int(sel.max()), False)


def maxload_typical(trace_or_series, eps: float, steps=None, strict: bool = False):
    """epsilon-typical maximum load (scaled), or ``None`` if no level qualifies.

    The largest realized per-step maximum ``v`` with at least ``eps * |M|``
    steps having maximum ``>= v`` (``> v`` when ``strict``).
    """
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    vals, stride = _series(trace_or_series)
    if steps is not None:
        idx = np.asarray(list(steps), dtype=np.int64)
        if stride != 1:
            raise ValueError("typical load over a step subset needs a stride-1 series")
        vals = vals[idx - 1]
    size = len(vals)
    if size == 0:
        raise ValueError("empty step set")
    need = math.ceil(Fraction(eps).limit_denominator(10 ** 12) * size)
    need = max(need, 1)
    desc = np.sort(vals)[::-1]
    if not strict:
        # count(>= desc[j]) >= j+1, so the need-th largest value qualifies and is the largest
        return int(desc[need - 1])
    uniq = np.unique(vals)[::-1]
    for v in uniq:
        if np.count_nonzero(vals > v) >= need:
            return int(v)
    return None


def level_set_count(state_or_scaled, ell: float, subset=None, n: int | None = None) -> int:
    """``|{i in S : L_i >= ell}|`` with the comparison done on ``n * L``."""
    if isinstance(state_or_scaled, LoadState):
        scaled, n = state_or_scaled.scaled_loads(), state_or_scaled.n
    else:
        scaled = np.asarray(state_or_scaled, dtype=np.int64)
        n = len(scaled) if n is None else n
    if subset is not None:
        scaled = scaled[np.asarray(list(subset), dtype=np.int64)]
    # n*L >= n*ell  <=>  n*L >= ceil(n*ell), with n*ell taken exactly
    cut = math.ceil(Fraction(ell) * n)
    return int(np.count_nonzero(scaled >= cut))


def primary_suggestion_count(trace: RunTrace, ell: float, subset=None, steps=None) -> int:
    """Bins in ``S`` suggested as primary at least ``ell`` times over ``steps``."""
    if trace.record_stride != 1:
        raise ValueError("primary suggestions need a trace recorded at stride 1")
    prim = trace.records["primary"]
    if steps is not None:
        prim = prim[np.asarray(list(steps), dtype=np.int64) - 1]
    prim = prim[prim >= 0]
    counts = np.bincount(prim, minlength=trace.n)
    if subset is not None:
        counts = counts[np.asarray(list(subset), dtype=np.int64)]
    return int(np.count_nonzero(counts >= ell))


def decomposition(state: LoadState) -> dict[str, np.ndarray]:
    """Per-bin ``n L_1``, ``n L_2``, coupled count and the scaled load they sum to."""
    coupled = state.counts - state.accepted_primaries - state.secondary
    return {
        "primary": state.n * state.accepted_primaries,
        "secondary": state.n * state.secondary,
        "coupled": state.n * coupled,
        "scaled": state.scaled_loads(),
    }


def decomposition_holds(state: LoadState) -> bool:
    """``nL_i = nL_i(0) + nL_1 + nL_2 (+ coupled) - k`` exactly, for every bin."""
    d = decomposition(state)
    rhs = state.n * state.initial_loads + d["primary"] + d["secondary"] + d["coupled"] - state.k
    return bool(np.array_equal(rhs, d["scaled"])) and bool(np.all(d["coupled"] >= 0))


def retries_of(trace: RunTrace) -> int | None:
    """Retry count, or None when every step was coupled (retries undefined)."""
    st = trace.final_state
    if st.coupled_steps and st.coupled_steps == st.k:
        return None
    return st.retries


@dataclass
class ResultRow:
    trial: int
    n: int
    m: int
    strategy: str
    seed: int
    maxload_final_scaled: int
    maxload_alltime_scaled: int
    maxload_typical_scaled: int | None
    eps: float
    retries: int | None
    coupled_steps: int
    wallclock_ms: float | None
    schedule_hash: str = ""

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_csv_dict(self) -> dict[str, str]:
        out = {}
        for k, v in asdict(self).items():
            out[k] = "" if v is None else (repr(v) if isinstance(v, float) else str(v))
        return out

    @classmethod
    def from_csv_dict(cls, d: dict[str, str]) -> "ResultRow":
        def opt_int(x):
            return None if x == "" else int(x)

        def opt_float(x):
            return None if x == "" else float(x)

        return cls(int(d["trial"]), int(d["n"]), int(d["m"]), d["strategy"], int(d["seed"]),
                   int(d["maxload_final_scaled"]), int(d["maxload_alltime_scaled"]),
                   opt_int(d["maxload_typical_scaled"]), float(d["eps"]),
                   opt_int(d["retries"]), int(d["coupled_steps"]),
                   opt_float(d["wallclock_ms"]), d.get("schedule_hash", ""))


def write_rows(rows: Iterable[ResultRow], fh) -> None:
    w = csv.DictWriter(fh, fieldnames=ResultRow.columns(), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.to_csv_dict())


def read_rows(fh) -> list[ResultRow]:
    if isinstance(fh, str):
        fh = io.StringIO(fh)
    return [ResultRow.from_csv_dict(d) for d in csv.DictReader(fh)]


def result_row(trace: RunTrace, trial: int, seed: int, eps: float,
               wallclock_ms: float | None = None, schedule_hash: str = "") -> ResultRow:
    typ = maxload_typical(trace, eps) if len(trace.max_scaled) else None
    return ResultRow(trial, trace.n, trace.m, trace.policy, seed, trace.final_max_scaled,
                     trace.alltime_max_scaled, typ, eps, retries_of(trace),
                     trace.coupled_steps, wallclock_ms, schedule_hash)


__all__ = ["maxload_of", "maxload_at", "IntervalMax", "maxload_interval",
           "maxload_typical", "level_set_count", "primary_suggestion_count", "decomposition",
           "decomposition_holds", "retries_of", "ResultRow", "write_rows", "read_rows",
           "result_row"]
