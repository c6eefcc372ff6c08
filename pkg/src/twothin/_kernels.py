"""Compiled inner loops.

Every kernel here mirrors a pure-Python path elsewhere in the package; the
test-suite checks the two produce identical step sequences from the same
random stream.
"""

import numpy as np
from numba import njit

# rule kinds
ACCEPT_ALL = 0
REJECT_ALL = 1
THRESHOLD = 2
RELATIVE = 3
MULTISTAGE = 4
REALIZE = 5
TWO_CHOICE = 6
ONE_PLUS_BETA = 7

# decision codes (D_k); COUPLED marks drift-ensemble output
COUPLED = 0
ACCEPT = 1
REJECT = 2

# ip layout: [cut, low_cut, seg_k0]; fp layout: [beta]
IP_CUT = 0
IP_LOW = 1
IP_SEG0 = 2


@njit(cache=True)
def _choose_less_loaded(a, b, init, counts):
    ta = init[a] + counts[a]
    tb = init[b] + counts[b]
    if ta < tb:
        return a
    if tb < ta:
        return b
    return a if a < b else b


@njit(cache=True)
def decide(kind, ip, fp, n, k_before, init, counts, stage_acc, blocked, accept_prob, p, u, s):
    """Return (final_bin, decision) for one ball; does not mutate anything."""
    if kind == ACCEPT_ALL:
        return p, ACCEPT
    if kind == REJECT_ALL:
        return s, REJECT
    if kind == THRESHOLD:
        if stage_acc[p] <= ip[IP_CUT]:
            return p, ACCEPT
        return s, REJECT
    if kind == RELATIVE:
        if n * stage_acc[p] - (k_before - ip[IP_SEG0]) <= ip[IP_CUT]:
            return p, ACCEPT
        if n * (init[p] + counts[p]) - k_before <= ip[IP_LOW]:
            return p, ACCEPT
        return s, REJECT
    if kind == MULTISTAGE:
        if n * (init[p] + counts[p]) - k_before <= ip[IP_LOW]:
            return p, ACCEPT
        if blocked[p] or stage_acc[p] > ip[IP_CUT]:
            return s, REJECT
        return p, ACCEPT
    if kind == REALIZE:
        if u < accept_prob[p]:
            return p, ACCEPT
        return s, REJECT
    if kind == TWO_CHOICE:
        c = _choose_less_loaded(p, s, init, counts)
        return c, (ACCEPT if c == p else REJECT)
    if kind == ONE_PLUS_BETA:
        if u < fp[0]:
            c = _choose_less_loaded(p, s, init, counts)
            return c, (ACCEPT if c == p else REJECT)
        return p, ACCEPT
    return -1, -1


@njit(cache=True)
def run_rule_block(kind, ip, fp, n, k, init, counts, acc_total, stage_acc, sec_counts,
                   blocked, accept_prob, prim, us, secs, max_tot,
                   out_final, out_dec, out_max):
    retries = 0
    for j in range(prim.shape[0]):
        p = prim[j]
        final, dec = decide(kind, ip, fp, n, k, init, counts, stage_acc, blocked,
                            accept_prob, p, us[j], secs[j])
        if dec == ACCEPT:
            acc_total[final] += 1
            stage_acc[final] += 1
        else:
            retries += 1
            sec_counts[final] += 1
        counts[final] += 1
        k += 1
        tot = init[final] + counts[final]
        if tot > max_tot:
            max_tot = tot
        out_final[j] = final
        out_dec[j] = dec
        out_max[j] = n * max_tot - k
    return k, max_tot, retries


@njit(cache=True)
def account_coupled(bins, n, k, init, counts, max_tot, out_max):
    for j in range(bins.shape[0]):
        b = bins[j]
        counts[b] += 1
        k += 1
        tot = init[b] + counts[b]
        if tot > max_tot:
            max_tot = tot
        out_max[j] = n * max_tot - k
    return k, max_tot


@njit(cache=True)
def simulate_batch(kind, ip, fp, n, init, blocked, accept_prob, prim, us, secs,
                   out_counts, out_acc):
    """Many independent short runs from zero; used against the exact oracle."""
    trials, m = prim.shape
    counts = np.zeros(n, np.int64)
    acc = np.zeros(n, np.int64)
    for r in range(trials):
        counts[:] = 0
        acc[:] = 0
        for j in range(m):
            final, dec = decide(kind, ip, fp, n, j, init, counts, acc, blocked,
                                accept_prob, prim[r, j], us[r, j], secs[r, j])
            if dec == ACCEPT:
                acc[final] += 1
            counts[final] += 1
        out_counts[r, :] = counts
        out_acc[r, :] = acc


# ---------------------------------------------------------------------------
# point-process ensemble (dominating-rate thinning)
#
# tot[i] is the integer total of process i; with ensemble clock s the
# process is below the line iff tot[i] < s, in the middle band iff
# s <= tot[i] <= s + excess, and above otherwise.  rates = [below, mid, above].

@njit(cache=True)
def _regime(x, s, excess):
    if x < s:
        return 0
    if x <= s + excess:
        return 1
    return 2


@njit(cache=True)
def _split_residency(x, a, b, excess, res):
    """Add time spent by a process at constant total x over [a, b] to res."""
    if b <= a:
        return
    # above band for t < x - excess, middle for x - excess <= t <= x, below for t > x
    lo = x - excess
    hi = float(x)
    above = min(b, lo) - a
    if above > 0.0:
        res[2] += above
    mid = min(b, hi) - max(a, lo)
    if mid > 0.0:
        res[1] += mid
    below = b - max(a, hi)
    if below > 0.0:
        res[0] += below


@njit(cache=True)
def ensemble_advance(n_alloc, tot, s, comp, rates, lam_max, excess,
                     waits, idx, us, pos, out_bins,
                     evals, accepts, res, last_time, crossings,
                     use_monitor, limit, ell, hist, hist_base, cnt_above, thr, need_check):
    """Allocate up to n_alloc points.

    Stops early when the candidate buffer runs out or (with the monitor on)
    when the feasibility count exceeds ``limit``.  Returns
    (allocated, pos, s, comp, tripped, cnt_above, thr, need_check).
    """
    n = tot.shape[0]
    allocated = 0
    tripped = False
    while allocated < n_alloc:
        if use_monitor and need_check:
            new_thr = np.int64(np.floor(s + ell)) + 1
            while thr < new_thr:
                h = thr - hist_base
                if 0 <= h < hist.shape[0]:
                    cnt_above -= hist[h]
                thr += 1
            need_check = False
            if cnt_above > limit:
                tripped = True
                break
        if pos >= waits.shape[0]:
            break
        w = waits[pos] / (n * lam_max)
        i = idx[pos]
        u = us[pos]
        pos += 1
        # compensated accumulation of the clock
        y = w - comp
        t_new = s + y
        comp = (t_new - s) - y
        s = t_new
        x = tot[i]
        r = _regime(x, s, excess)
        evals[r] += 1
        if u * lam_max < rates[r]:
            accepts[r] += 1
            _split_residency(x, last_time[i], s, excess, res)
            if last_time[i] <= x < s:
                crossings[1] += 1
            last_time[i] = s
            if x < s and x + 1 >= s:
                crossings[0] += 1
            tot[i] = x + 1
            if use_monitor:
                hv = x - hist_base
                hist[hv] -= 1
                hist[hv + 1] += 1
                if x + 1 == thr:
                    cnt_above += 1
                need_check = True
            out_bins[allocated] = i
            allocated += 1
    return allocated, pos, s, comp, tripped, cnt_above, thr, need_check
