"""Two-thinning allocation engine.

Bins are 0-indexed.  Loads are never stored as floats: the engine keeps
integer ball counts and integer initial offsets, and reports the *scaled*
load ``n * L_i = n * (initial[i] + counts[i]) - k``.

Randomness is consumed per ball: ball ``k`` (0-based) always uses entry
``k`` of three parallel streams -- primary bin, decision uniform and
secondary bin -- whether or not the policy looks at them.  Streams are
drawn in fixed blocks of ``BLOCK`` entries, so the fast compiled path and
the per-step reference path see identical draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from typing import IO, TYPE_CHECKING

import numpy as np

from . import _kernels as K
from .errors import PolicyExhausted, TraceBudgetExceeded

if TYPE_CHECKING:
    from .strategies.base import Policy

BLOCK = 1 << 16
DEFAULT_MEMORY_CAP = 1 << 30  # bytes of trace storage


class Decision(IntEnum):
    COUPLED = K.COUPLED
    ACCEPT = K.ACCEPT
    REJECT = K.REJECT


def trial_seed_sequence(master_seed: int, trial: int = 0) -> np.random.SeedSequence:
    """Per-trial seed material: ``SeedSequence(master_seed, spawn_key=(trial,))``.

    Stable across releases; changing it changes every recorded result.
    """
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(trial),))


class RandomStream:
    """Block-wise draws of (primary, uniform, secondary) for one run.

    Blocks are produced strictly in order from a PCG64 generator; the
    uniform of block ``b`` is drawn after its primaries and before its
    secondaries.  ``spawn()`` hands out independent child generators (used
    by drift ensembles) in a deterministic order.
    """

    def __init__(self, n: int, seed: int | np.random.SeedSequence = 0):
        if not isinstance(seed, np.random.SeedSequence):
            seed = trial_seed_sequence(seed, 0)
        self.n = int(n)
        self.seed_seq = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))
        self._block_index = -1
        self._block: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
        self._children = 0

    def block(self, b: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if b < self._block_index:
            raise ValueError("random stream is forward-only")
        while self._block_index < b:
            g = self._gen
            prim = g.integers(0, self.n, BLOCK, dtype=np.int64)
            us = g.random(BLOCK)
            secs = g.integers(0, self.n, BLOCK, dtype=np.int64)
            self._block = (prim, us, secs)
            self._block_index += 1
        return self._block

    def draw(self, k: int) -> tuple[int, float, int]:
        prim, us, secs = self.block(k // BLOCK)
        j = k % BLOCK
        return int(prim[j]), float(us[j]), int(secs[j])

    def spawn(self) -> np.random.Generator:
        child = self.seed_seq.spawn(1)[0]
        self._children += 1
        return np.random.Generator(np.random.PCG64(child))


@dataclass
class LoadState:
    n: int
    initial_loads: np.ndarray
    counts: np.ndarray
    accepted_primaries: np.ndarray
    secondary: np.ndarray
    stage_accepted: np.ndarray
    k: int = 0
    retries: int = 0
    coupled_steps: int = 0
    max_total: int = 0

    @classmethod
    def fresh(cls, n: int, initial_loads=None) -> "LoadState":
        n = int(n)
        if n < 1:
            raise ValueError("n must be positive")
        if initial_loads is None:
            init = np.zeros(n, np.int64)
        else:
            init = np.asarray(initial_loads)
            if init.shape != (n,):
                raise ValueError(f"initial_loads must have shape ({n},)")
            if not np.all(np.equal(np.mod(init, 1), 0)):
                raise ValueError("initial loads must be integers")
            init = init.astype(np.int64)
            if int(init.sum()) != 0:
                raise ValueError("initial loads must sum to zero")
        z = lambda: np.zeros(n, np.int64)  # noqa: E731
        return cls(n, init, z(), z(), z(), z(), 0, 0, 0, int(init.max()))

    def totals(self) -> np.ndarray:
        return self.initial_loads + self.counts

    def scaled_loads(self) -> np.ndarray:
        return self.n * self.totals() - self.k

    def scaled_load(self, i: int) -> int:
        return scaled_load(self, i)

    def max_scaled(self) -> int:
        return self.n * self.max_total - self.k

    def copy(self) -> "LoadState":
        return LoadState(self.n, self.initial_loads.copy(), self.counts.copy(),
                         self.accepted_primaries.copy(), self.secondary.copy(),
                         self.stage_accepted.copy(), self.k, self.retries,
                         self.coupled_steps, self.max_total)

    def check_invariants(self) -> None:
        assert int(self.counts.sum()) == self.k
        assert 0 <= self.retries <= self.k
        assert int(self.initial_loads.sum()) == 0
        assert int(self.scaled_loads().sum()) == 0
        assert np.all(self.accepted_primaries <= self.counts)
        assert int(self.totals().max()) == self.max_total


def scaled_load(state: LoadState, i: int) -> int:
    """``n * L_i`` for bin ``i`` (0-based), exact."""
    if not 0 <= i < state.n:
        raise IndexError(f"bin index {i} out of range for n={state.n}")
    return state.n * int(state.initial_loads[i] + state.counts[i]) - state.k


@dataclass(frozen=True)
class StepRecord:
    k: int
    primary: int  # -1 for coupled steps
    decision: Decision
    final: int
    running_max_scaled: int


@dataclass(frozen=True)
class DecisionContext:
    """What a thinning rule may look at when deciding on ball ``k``."""

    k: int  # 1-based index of the ball being decided
    n: int
    primary: int
    scaled_load: int
    accepted: int
    stage_accepted: int
    segment_k: int  # 1-based index of the ball since the current rule was initiated
    u: float


def _apply(state: LoadState, final: int, dec: int) -> None:
    if dec == K.ACCEPT:
        state.accepted_primaries[final] += 1
        state.stage_accepted[final] += 1
    elif dec == K.REJECT:
        state.retries += 1
        state.secondary[final] += 1
    else:
        state.coupled_steps += 1
    state.counts[final] += 1
    state.k += 1
    tot = int(state.initial_loads[final] + state.counts[final])
    if tot > state.max_total:
        state.max_total = tot


def step(state: LoadState, policy: "Policy", stream: RandomStream) -> StepRecord:
    """Allocate one ball through ``policy`` (reference path)."""
    rule = policy.rule_for(state, stream)
    p, u, s = stream.draw(state.k)
    final, dec, primary = rule.place(state, stream, p, u, s)
    _apply(state, final, dec)
    policy.consume(1)
    return StepRecord(state.k, primary, Decision(dec), final, state.max_scaled())


@dataclass
class RunTrace:
    n: int
    m: int
    policy: str
    initial_max_scaled: int
    max_scaled: np.ndarray  # per-step n*MaxLoad(k) at steps stride, 2*stride, ...
    max_stride: int
    records: dict  # full step records at steps record_stride, 2*record_stride, ...
    record_stride: int
    alltime_max_scaled: int
    final_state: LoadState
    seed_entropy: int | None = None

    @property
    def retries(self) -> int:
        return self.final_state.retries

    @property
    def coupled_steps(self) -> int:
        return self.final_state.coupled_steps

    @property
    def final_max_scaled(self) -> int:
        return self.final_state.max_scaled()

    def steps(self) -> np.ndarray:
        """1-based step indices of the entries of ``max_scaled``."""
        return np.arange(1, len(self.max_scaled) + 1, dtype=np.int64) * self.max_stride

    def iter_records(self):
        r = self.records
        for j in range(len(r["k"])):
            yield {"k": int(r["k"][j]), "primary": int(r["primary"][j]),
                   "decision": int(r["decision"][j]), "final": int(r["final"][j]),
                   "max_scaled": int(r["max_scaled"][j])}

    def write_ndjson(self, fh: IO[str]) -> None:
        for rec in self.iter_records():
            fh.write(json.dumps(rec) + "\n")


class _Recorder:
    def __init__(self, n: int, m: int, max_stride: int, record_stride: int, memory_cap: int):
        if max_stride < 1 or record_stride < 1:
            raise ValueError("strides must be >= 1")
        n_max = m // max_stride
        n_rec = m // record_stride
        need = 8 * n_max + 40 * n_rec
        if need > memory_cap:
            raise TraceBudgetExceeded(f"trace needs {need} bytes, cap is {memory_cap}")
        self.max_stride = max_stride
        self.record_stride = record_stride
        self.max_vals = np.empty(n_max, np.int64)
        self.rec = {name: np.empty(n_rec, np.int64)
                    for name in ("k", "primary", "decision", "final", "max_scaled")}
        self.alltime: int | None = None

    def record(self, k0: int, prim, dec, fin, mx) -> None:
        """Store outputs of steps k0+1 .. k0+len(mx)."""
        length = len(mx)
        if length == 0:
            return
        top = int(mx.max())
        self.alltime = top if self.alltime is None else max(self.alltime, top)
        st = self.max_stride
        j0 = (-(k0 + 1)) % st
        if j0 < length:
            first = (k0 + 1 + j0) // st - 1
            vals = mx[j0::st]
            self.max_vals[first:first + len(vals)] = vals
        st = self.record_stride
        j0 = (-(k0 + 1)) % st
        if j0 < length:
            first = (k0 + 1 + j0) // st - 1
            sel = slice(j0, None, st)
            cnt = len(range(j0, length, st))
            ks = np.arange(k0 + 1 + j0, k0 + 1 + length, st, dtype=np.int64)
            dst = slice(first, first + cnt)
            self.rec["k"][dst] = ks
            self.rec["primary"][dst] = prim[sel]
            self.rec["decision"][dst] = dec[sel]
            self.rec["final"][dst] = fin[sel]
            self.rec["max_scaled"][dst] = mx[sel]


def run(n: int, m: int, policy: "Policy", initial_loads=None,
        stream: RandomStream | int | np.random.SeedSequence = 0, *,
        max_stride: int = 1, record_stride: int | None = None,
        memory_cap: int = DEFAULT_MEMORY_CAP, fast: bool = True) -> RunTrace:
    """Allocate ``m`` balls into ``n`` bins with ``policy``.

    ``fast=False`` routes every ball through :func:`step`; results are
    identical either way.
    """
    if m < 0:
        raise ValueError("m must be non-negative")
    if not isinstance(stream, RandomStream):
        stream = RandomStream(n, stream)
    if stream.n != n:
        raise ValueError("stream was built for a different n")
    state = LoadState.fresh(n, initial_loads)
    rec = _Recorder(n, m, max_stride, record_stride or n, memory_cap)
    initial_max = state.max_scaled()
    policy.reset()
    if fast:
        _run_fast(state, policy, stream, m, rec)
    else:
        buf = {name: np.empty(1, np.int64) for name in ("p", "d", "f", "x")}
        while state.k < m:
            k0 = state.k
            r = step(state, policy, stream)
            buf["p"][0], buf["d"][0], buf["f"][0], buf["x"][0] = (
                r.primary, int(r.decision), r.final, r.running_max_scaled)
            rec.record(k0, buf["p"], buf["d"], buf["f"], buf["x"])
    for arr in [rec.max_vals, *rec.rec.values()]:
        arr.flags.writeable = False
    seed_entropy = stream.seed_seq.entropy if isinstance(stream.seed_seq.entropy, int) else None
    return RunTrace(n, m, policy.name, initial_max, rec.max_vals, max_stride, rec.rec,
                    rec.record_stride,
                    initial_max if rec.alltime is None else max(rec.alltime, initial_max),
                    state, seed_entropy)


def _run_fast(state: LoadState, policy: "Policy", stream: RandomStream, m: int,
              rec: _Recorder) -> None:
    while state.k < m:
        rule, remaining = policy.rule_for(state, stream), policy.remaining
        todo = m - state.k
        if remaining is not None:
            todo = min(todo, remaining)
        if todo <= 0:
            raise PolicyExhausted(f"policy {policy.name} has no segment at k={state.k}")
        done = 0
        while done < todo:
            k0 = state.k
            b, off = divmod(k0, BLOCK)
            length = min(todo - done, BLOCK - off)
            prim, us, secs = stream.block(b)
            sl = slice(off, off + length)
            out = rule.advance(state, stream, prim[sl], us[sl], secs[sl])
            took = len(out[3])
            rec.record(k0, *out)
            done += took
            policy.consume(took)
            if took < length:
                # rule changed mode mid-block (e.g. feasibility trip); re-enter
                break
