"""Inner loops: hazard thinning, the interval-propagation sweep, gap scans.

Laws reach the kernels as ``(kind, p1, p2)`` triples, see ``LAW_CODES`` in
:mod:`rcpsim.renewal`.  Every function here must stay inside the numba
nopython subset so that the ``RCPSIM_DISABLE_NUMBA`` fallback runs the very
same source.
"""
import numpy as np

from ._accel import jit

EXPONENTIAL = 0
SHIFTED_PARETO = 1
WEIBULL = 2
UNIFORM = 3


@jit
def hazard_at(kind, p1, p2, t):
    if kind == EXPONENTIAL:
        return p1
    if kind == SHIFTED_PARETO:
        return p1 / (p2 + t)
    if kind == WEIBULL:
        if t <= 0.0:
            if p1 < 1.0:
                return np.inf
            if p1 == 1.0:
                return 1.0 / p2
            return 0.0
        return (p1 / p2) * (t / p2) ** (p1 - 1.0)
    # uniform on [0, p1]
    if t >= p1:
        return np.inf
    return 1.0 / (p1 - t)


@jit
def thin_scan(kind, p1, p2, start, horizon, times, heights, out):
    """Accept field points under ``t -> h(t - last_mark)``, restarting at each mark.

    ``times`` must be sorted.  Writes accepted marks to ``out`` and returns
    how many were written.
    """
    n = 0
    last = start
    for i in range(times.shape[0]):
        t = times[i]
        if t <= last:
            continue
        if t > horizon:
            break
        if heights[i] <= hazard_at(kind, p1, p2, t - last):
            out[n] = t
            n += 1
            last = t
    return n


@jit
def thin_first(kind, p1, p2, last, lo, times, heights, i0):
    """Index of the first field point with time > ``lo`` under the graph, or -1."""
    for i in range(i0, times.shape[0]):
        t = times[i]
        if t <= lo:
            continue
        if heights[i] <= hazard_at(kind, p1, p2, t - last):
            return i
    return -1


@jit
def next_mark_after(mark_ptr, marks, site, u):
    """Smallest mark of ``site`` strictly greater than ``u`` (inf if none)."""
    lo = mark_ptr[site]
    hi = mark_ptr[site + 1]
    k = np.searchsorted(marks[lo:hi], u, side="right")
    if k == hi - lo:
        return np.inf
    return marks[lo + k]


@jit
def is_mark(mark_ptr, marks, site, u):
    lo = mark_ptr[site]
    hi = mark_ptr[site + 1]
    k = np.searchsorted(marks[lo:hi], u, side="left")
    return k < hi - lo and marks[lo + k] == u


@jit
def sweep(ev_time, ev_src, ev_dst, mark_ptr, marks, in_region,
          seed_site, seed_start, n_sites):
    """Time-ordered interval propagation.

    Arrows (already restricted to active, in-region, in-window ones) and seed
    pieces are both sorted by time; at equal times seeds go first.  Returns
    interval arrays in creation order: site, start, raw end (next renewal
    mark, possibly inf), parent interval (-1 for seeds), generation,
    emitted-arrow count, and the number of arrows that hit an already
    infected target.
    """
    n_ev = ev_time.shape[0]
    n_seed = seed_start.shape[0]
    cap = n_ev + n_seed
    iv_site = np.empty(cap, np.int64)
    iv_start = np.empty(cap, np.float64)
    iv_end = np.empty(cap, np.float64)
    iv_parent = np.empty(cap, np.int64)
    iv_gen = np.empty(cap, np.int64)
    iv_emit = np.zeros(cap, np.int64)
    cur = np.full(n_sites, -1, np.int64)
    n = 0
    wasted = 0
    j = 0
    for e in range(n_ev + 1):
        if e < n_ev:
            u = ev_time[e]
        else:
            u = np.inf
        while j < n_seed and seed_start[j] <= u:
            y = seed_site[j]
            s = seed_start[j]
            c = cur[y]
            if not (c >= 0 and iv_start[c] <= s and s < iv_end[c]):
                iv_site[n] = y
                iv_start[n] = s
                iv_end[n] = next_mark_after(mark_ptr, marks, y, s)
                iv_parent[n] = -1
                iv_gen[n] = 0
                cur[y] = n
                n += 1
            j += 1
        if e == n_ev:
            break
        x = ev_src[e]
        c = cur[x]
        if c < 0 or not (iv_start[c] <= u and u < iv_end[c]):
            continue
        iv_emit[c] += 1
        y = ev_dst[e]
        if not in_region[y]:
            continue
        if is_mark(mark_ptr, marks, y, u):
            continue
        c2 = cur[y]
        if c2 >= 0 and iv_start[c2] <= u and u < iv_end[c2]:
            wasted += 1
            continue
        iv_site[n] = y
        iv_start[n] = u
        iv_end[n] = next_mark_after(mark_ptr, marks, y, u)
        iv_parent[n] = c
        iv_gen[n] = iv_gen[c] + 1
        cur[y] = n
        n += 1
    return (iv_site[:n], iv_start[:n], iv_end[:n], iv_parent[:n],
            iv_gen[:n], iv_emit[:n], wasted)


@jit
def first_gap_block(mark_ptr, marks, sites, block, max_odd):
    """Smallest odd ``2i+1 <= max_odd`` such that some site has no mark in
    ``[2i*block, (2i+1)*block)``; -1 if there is none."""
    best = -1
    for q in range(sites.shape[0]):
        x = sites[q]
        lo = mark_ptr[x]
        hi = mark_ptr[x + 1]
        row = marks[lo:hi]
        i = 0
        while 2 * i + 1 <= max_odd:
            if best >= 0 and 2 * i + 1 >= best:
                break
            a = 2 * i * block
            k = np.searchsorted(row, a, side="left")
            if k == hi - lo or row[k] >= (2 * i + 1) * block:
                best = 2 * i + 1
                break
            i += 1
    return best


@jit
def max_gap(row, t1, t2):
    """Longest mark-free stretch inside [t1, t2] given sorted marks ``row``."""
    best = 0.0
    prev = t1
    k = np.searchsorted(row, t1, side="left")
    while k < row.shape[0] and row[k] <= t2:
        if row[k] - prev > best:
            best = row[k] - prev
        prev = row[k]
        k += 1
    if t2 - prev > best:
        best = t2 - prev
    return best
