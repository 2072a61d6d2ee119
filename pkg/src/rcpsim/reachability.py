"""Infected space-time sets, crossings and path witnesses.

Infection is tracked as maximal half-open intervals ``[s, e)`` per site,
where ``e`` is the first renewal mark of the site after ``s``.  An arrow
``x -> y`` at time ``u`` extends infection when ``u`` lies in the current
interval of ``x``, ``u`` is not a mark of ``y`` and ``y`` is in the region.
Seeds given as a time window contribute every mark-free point of the
window; a piece that starts right after a mark is open at its left end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .graphical import HarrisSystem
from .renewal import RenewalTrain


class InvalidSeedError(ValueError):
    """A point seed sits on a renewal mark, or a seed lies outside the region."""


class ParameterDomainError(ValueError):
    """Detector parameters outside the range the event is defined for."""


def _as_coord(v):
    return tuple(int(x) for x in np.atleast_1d(v))


@dataclass(frozen=True)
class SpaceTimeRect:
    """``[lo, hi] x [S, T]``; ``lo``/``hi`` are integer corners (ints when d = 1)."""

    lo: tuple
    hi: tuple
    S: float
    T: float

    def __post_init__(self):
        lo, hi = _as_coord(self.lo), _as_coord(self.hi)
        if len(lo) != len(hi) or any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"bad spatial extent {lo}..{hi}")
        if not self.S <= self.T:
            raise ValueError("need S <= T")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "S", float(self.S))
        object.__setattr__(self, "T", float(self.T))

    @classmethod
    def interval(cls, a: int, b: int, S: float, T: float) -> "SpaceTimeRect":
        return cls((a,), (b,), S, T)

    @classmethod
    def whole(cls, system: HarrisSystem, T: float | None = None) -> "SpaceTimeRect":
        return cls(system.lattice.lower, system.lattice.upper, system.t_lo, system.t_hi if T is None else T)

    @property
    def a(self) -> int:
        return self.lo[0]

    @property
    def b(self) -> int:
        return self.hi[0]

    def check_inside(self, system: HarrisSystem):
        lat = system.lattice
        if len(self.lo) != lat.d or not (lat.contains(self.lo) and lat.contains(self.hi)):
            raise ValueError(f"rectangle sites {self.lo}..{self.hi} not inside the box {lat.lower}..{lat.upper}")
        if self.S < system.t_lo or self.T > system.t_hi:
            raise ValueError(f"rectangle times [{self.S}, {self.T}] not inside the horizon {system.horizon}")


@dataclass(frozen=True)
class SeedSet:
    """Seeds as ``(site, t0, t1)`` triples; ``t0 == t1`` is a point seed."""

    items: tuple = ()

    @classmethod
    def point(cls, site, t: float = 0.0) -> "SeedSet":
        return cls(((_as_coord(site), float(t), float(t)),))

    @classmethod
    def interval(cls, site, t0: float, t1: float) -> "SeedSet":
        if t1 < t0:
            raise ValueError("seed interval needs t0 <= t1")
        return cls(((_as_coord(site), float(t0), float(t1)),))

    def __or__(self, other: "SeedSet") -> "SeedSet":
        return SeedSet(self.items + other.items)

    def __iter__(self):
        return iter(self.items)


def _window_pieces(system: HarrisSystem, idx: int, t0: float, t1: float, strict_point: bool):
    """Seed pieces ``(start, open_left)`` for the mark-free points of ``{idx} x [t0, t1]``."""
    row = system.marks_of(idx)
    on_mark = K.is_mark(system.mark_ptr, system.marks, idx, t0)
    pieces = []
    if not on_mark:
        pieces.append((t0, False))
    elif t0 == t1 and strict_point:
        raise InvalidSeedError(f"seed ({system.lattice.coord(idx)}, {t0}) sits on a renewal mark")
    lo = np.searchsorted(row, t0, side="left")
    hi = np.searchsorted(row, t1, side="left")
    pieces.extend((float(m), True) for m in row[lo:hi])
    return pieces


def _pieces_arrays(pieces):
    pieces.sort(key=lambda p: p[1])
    site = np.array([p[0] for p in pieces], dtype=np.int64)
    start = np.array([p[1] for p in pieces], dtype=np.float64)
    open_left = np.array([p[2] for p in pieces], dtype=bool)
    return site, start, open_left


@dataclass(frozen=True, eq=False)
class PathWitness:
    """A path as legs ``(site, entry_time)``; the path ends at ``end_time``.

    With ``open_start`` the first entry time is a renewal mark of the first
    site and the path starts just after it.
    """

    legs: tuple
    end_time: float
    open_start: bool = False

    @property
    def start_time(self) -> float:
        return self.legs[0][1]

    @property
    def variation(self) -> int:
        xs = [leg[0][0] for leg in self.legs]
        return max(xs) - min(xs)


@dataclass(frozen=True, eq=False)
class InfectedIntervalSet:
    system: HarrisSystem
    cap: float
    site: np.ndarray
    start: np.ndarray
    end_raw: np.ndarray
    parent: np.ndarray
    generation: np.ndarray
    emitted: np.ndarray
    open_left: np.ndarray
    wasted: int = 0

    def __len__(self):
        return self.site.size

    @property
    def end(self) -> np.ndarray:
        return np.minimum(self.end_raw, self.cap)

    @property
    def reaches_cap(self) -> np.ndarray:
        return self.end_raw > self.cap

    def canonical(self) -> dict:
        """``{site: ((start, end, reaches_cap), ...)}`` with overlapping intervals merged."""
        out: dict = {}
        order = np.lexsort((self.start, self.site))
        for i in order:
            key = self.system.lattice.coord(int(self.site[i]))
            s, e = float(self.start[i]), float(self.end_raw[i])
            lst = out.setdefault(key, [])
            if lst and s < lst[-1][1]:
                lst[-1][1] = max(lst[-1][1], e)
            else:
                lst.append([s, e])
        return {k: tuple((s, min(e, self.cap), e > self.cap) for s, e in v) for k, v in out.items()}

    def covers(self, site, t: float) -> bool:
        idx = self.system.lattice.index(site)
        sel = self.site == idx
        return bool(np.any((self.start[sel] <= t) & ((t < self.end_raw[sel]) & (t <= self.cap))))

    def survival(self):
        if self.site.size and np.any(self.reaches_cap):
            return Censored(self.cap)
        return float(self.end.max()) if self.site.size else self.cap

    def witness(self, i: int, end_time: float | None = None) -> PathWitness:
        """Path from a seed to interval ``i`` along first-infection parents."""
        chain = []
        j = int(i)
        while j >= 0:
            chain.append(j)
            j = int(self.parent[j])
        chain.reverse()
        lat = self.system.lattice
        legs = tuple((_as_coord(lat.coords[self.site[j]]), float(self.start[j])) for j in chain)
        if end_time is None:
            end_time = float(self.start[i])
        return PathWitness(legs, float(end_time), bool(self.open_left[chain[0]]))


def union_canonical(a: dict, b: dict) -> dict:
    """Union of two canonical interval maps (same cap)."""
    out = {}
    for key in set(a) | set(b):
        items = sorted(list(a.get(key, ())) + list(b.get(key, ())))
        merged = []
        for s, e, top in items:
            if merged and s < merged[-1][1]:
                if (e, top) > (merged[-1][1], merged[-1][2]):
                    merged[-1][1], merged[-1][2] = e, top
            else:
                merged.append([s, e, top])
        out[key] = tuple(tuple(m) for m in merged)
    return out


def canonical_subset(a: dict, b: dict) -> bool:
    """Whether every interval of ``a`` lies inside an interval of ``b``."""
    for key, ivs in a.items():
        other = b.get(key, ())
        for s, e, top in ivs:
            if not any(s2 <= s and (e < e2 or (e == e2 and (top <= top2))) for s2, e2, top2 in other):
                return False
    return True


class Censored(NamedTuple):
    cap: float


def _run(system: HarrisSystem, lam: float, pieces: list, region: SpaceTimeRect) -> InfectedIntervalSet:
    region.check_inside(system)
    lat = system.lattice
    mask = lat.region_mask(region.lo, region.hi)
    site, start, open_left = _pieces_arrays(pieces)
    t, s, d = system.sorted_active(lam)
    sel = (t >= region.S) & (t <= region.T)
    t, s, d = t[sel], s[sel], d[sel]
    sel = mask[s] & mask[d]
    iv = K.sweep(t[sel], s[sel], d[sel], system.mark_ptr, system.marks, mask,
                 site, start, lat.n_sites)
    iv_site, iv_start, iv_end, iv_parent, iv_gen, iv_emit, wasted = iv
    seed_open = dict(zip(zip(site.tolist(), start.tolist()), open_left.tolist()))
    ol = np.array([iv_parent[i] < 0 and seed_open.get((int(iv_site[i]), float(iv_start[i])), False)
                   for i in range(iv_site.size)], dtype=bool)
    return InfectedIntervalSet(system, region.T, iv_site, iv_start, iv_end, iv_parent, iv_gen, iv_emit,
                               ol, int(wasted))


def propagate(system: HarrisSystem, lam: float, seeds: SeedSet, region: SpaceTimeRect | None = None
              ) -> InfectedIntervalSet:
    """Everything reachable from ``seeds`` by paths inside ``region`` at rate ``lam``."""
    region = region or SpaceTimeRect.whole(system)
    lat = system.lattice
    pieces = []
    for coord, t0, t1 in seeds:
        if not (lat.contains(coord) and all(a <= v <= b for v, a, b in zip(coord, region.lo, region.hi))):
            raise InvalidSeedError(f"seed site {coord} outside the region")
        if t0 < region.S or t1 > region.T:
            raise InvalidSeedError(f"seed times [{t0}, {t1}] outside the region window [{region.S}, {region.T}]")
        idx = lat.index(coord)
        pieces.extend((idx, s, ol) for s, ol in _window_pieces(system, idx, t0, t1, strict_point=True))
    return _run(system, lam, pieces, region)


def survival_time(system: HarrisSystem, lam: float, origin=0, cap: float | None = None, t0: float = 0.0):
    """Extinction time of the infection started at ``(origin, t0)``, or ``Censored(cap)``."""
    cap = system.t_hi if cap is None else float(cap)
    region = SpaceTimeRect(system.lattice.lower, system.lattice.upper, t0, cap)
    return propagate(system, lam, SeedSet.point(origin, t0), region).survival()


def _sites_in(system, lo, hi) -> np.ndarray:
    return np.flatnonzero(system.lattice.region_mask(lo, hi))


def _crossing_hits(system, lam, src, src_window, dst, dst_window, region):
    """Intervals reaching ``dst x dst_window`` from ``src x src_window`` inside ``region``."""
    pieces = []
    for idx in _sites_in(system, *src):
        pieces.extend((int(idx), s, ol) for s, ol in _window_pieces(system, int(idx), *src_window, strict_point=False))
    iset = _run(system, lam, pieces, region)
    lo, hi = dst_window
    target = np.isin(iset.site, _sites_in(system, *dst))
    hit = target & (iset.start <= hi) & (iset.end_raw > lo) & (iset.start <= iset.cap)
    if lo == hi == iset.cap:
        hit &= iset.reaches_cap
    return iset, np.flatnonzero(hit)


def find_crossing(system: HarrisSystem, lam: float, src, src_window, dst, dst_window,
                  region: SpaceTimeRect) -> PathWitness | None:
    """A path from ``src x src_window`` to ``dst x dst_window`` staying in ``region``.

    ``src``/``dst`` are ``(lo, hi)`` site boxes.  Returns ``None`` when there
    is no crossing.
    """
    iset, hits = _crossing_hits(system, lam, src, src_window, dst, dst_window, region)
    if not hits.size:
        return None
    i = int(hits[0])
    end = max(float(iset.start[i]), dst_window[0])
    return iset.witness(i, end)


def _temporal_args(rect):
    return ((rect.lo, rect.hi), (rect.S, rect.S), (rect.lo, rect.hi), (rect.T, rect.T), rect)


def _spatial_args(rect):
    a_lo, a_hi = (rect.a,) + rect.lo[1:], (rect.a,) + rect.hi[1:]
    b_lo, b_hi = (rect.b,) + rect.lo[1:], (rect.b,) + rect.hi[1:]
    return ((a_lo, a_hi), (rect.S, rect.T), (b_lo, b_hi), (rect.S, rect.T), rect)


def has_temporal_crossing(system: HarrisSystem, lam: float, rect: SpaceTimeRect) -> bool:
    """A path in ``rect`` from its bottom edge ``[a,b] x {S}`` to its top edge."""
    return _crossing_hits(system, lam, *_temporal_args(rect))[1].size > 0


def temporal_crossing_witness(system, lam, rect) -> PathWitness | None:
    return find_crossing(system, lam, *_temporal_args(rect))


def has_spatial_crossing(system: HarrisSystem, lam: float, rect: SpaceTimeRect) -> bool:
    """A path in ``rect`` from its left side ``{a} x [S,T]`` to its right side (axis 0)."""
    return _crossing_hits(system, lam, *_spatial_args(rect))[1].size > 0


def spatial_crossing_witness(system, lam, rect) -> PathWitness | None:
    return find_crossing(system, lam, *_spatial_args(rect))


def _check_A0_domain(c, eps, T):
    if not 0.5 < c < 1:
        raise ParameterDomainError(f"c={c} outside (1/2, 1)")
    if not 0 < eps < c * T / 8:
        raise ParameterDomainError(f"eps={eps} must satisfy 0 < eps < cT/8 = {c * T / 8}")


def chain_windows(j: int, c: float, eps: float, T: float, v: float = 0.0):
    """Source and target time windows of the ``j``-th diagonal event."""
    s0 = v + j * (c * T - eps)
    return (s0, s0 + eps), (s0 + c * T, s0 + c * T + eps)


def _chain_event_args(system, j, c, eps, L, T, v, x0):
    (s0, s1), (d0, d1) = chain_windows(j, c, eps, T, v)
    left, right = (x0,), (x0 + L,)
    src, dst = (left, left), (right, right)
    if j % 2:
        src, dst = dst, src
    region = SpaceTimeRect((x0,), (x0 + L,), s0, min(d1, system.t_hi))
    return src, (s0, s1), dst, (d0, d1), region


def detect_A0(system: HarrisSystem, lam: float, c: float, eps: float, L: int, T: float,
              origin_time: float = 0.0, x0: int = 0) -> bool:
    """Crossing in ``[x0, x0+L] x [v, inf)`` from ``{x0} x [v, v+eps]`` to ``{x0+L} x [v+cT, v+cT+eps]``."""
    _check_A0_domain(c, eps, T)
    args = _chain_event_args(system, 0, c, eps, L, T, origin_time, x0)
    if args[3][1] > system.t_hi:
        raise ValueError("the event window exceeds the system horizon")
    return _crossing_hits(system, lam, *args)[1].size > 0


class ChainResult(NamedTuple):
    events: list
    truncated: bool


def detect_chain(system: HarrisSystem, lam: float, m: int, c: float, eps: float, L: int, T: float,
                 origin_time: float = 0.0, x0: int = 0) -> ChainResult:
    """Indicators of the alternating diagonal crossings ``A_0 .. A_m``.

    ``A_j`` goes left to right for even ``j`` and right to left for odd
    ``j``; events whose window runs past the horizon are reported False and
    set ``truncated``.
    """
    _check_A0_domain(c, eps, T)
    events, truncated = [], False
    for j in range(m + 1):
        if chain_windows(j, c, eps, T, origin_time)[1][1] > system.t_hi:
            truncated = True
            events.append(False)
            continue
        args = _chain_event_args(system, j, c, eps, L, T, origin_time, x0)
        events.append(_crossing_hits(system, lam, *args)[1].size > 0)
    return ChainResult(events, truncated)


def chain_witness(system, lam, j, c, eps, L, T, origin_time=0.0, x0=0) -> PathWitness | None:
    return find_crossing(system, lam, *_chain_event_args(system, j, c, eps, L, T, origin_time, x0))


def windowed_temporal_crossing(system: HarrisSystem, lam: float, rect: SpaceTimeRect, w: int) -> bool:
    """Temporal crossing of ``I' x [S, T]`` for some window ``I'`` of at most ``w`` sites (d = 1)."""
    width = rect.b - rect.a + 1
    if not 1 <= w <= width:
        raise ValueError(f"window size {w} outside [1, {width}]")
    for a in range(rect.a, rect.b - w + 2):
        sub = SpaceTimeRect.interval(a, a + w - 1, rect.S, rect.T)
        if has_temporal_crossing(system, lam, sub):
            return True
    return False


def detect_gap(train, window, g: float) -> bool:
    """Whether some stretch of length ``g`` inside ``window`` carries no mark."""
    marks = train.marks if isinstance(train, RenewalTrain) else np.asarray(train, dtype=float)
    t1, t2 = (float(v) for v in window)
    if isinstance(train, RenewalTrain) and not (train.start <= t1 and t2 <= train.horizon):
        raise ValueError("window must lie within the train's span")
    return t2 - t1 >= g and K.max_gap(np.ascontiguousarray(marks), t1, t2) >= g


def stopping_index_from_marks(mark_ptr, marks, sites, block: float, max_odd: int):
    best = K.first_gap_block(mark_ptr, marks, np.asarray(sites, dtype=np.int64), float(block), int(max_odd))
    return math.inf if best < 0 else int(best)


def stopping_index_Tn(system: HarrisSystem, n: int, k: int, beta: float, max_index: int | None = None):
    """First odd block index ``2i+1`` at which some site in ``[0, 2^(n beta)]``
    has no mark in ``[2i B, (2i+1) B)``, ``B = 2^(n-k)``; ``inf`` if none.

    Sites of that range outside the box are skipped.
    Blocks are searched while they fit in the horizon (and up to
    ``max_index`` when given).
    """
    if system.t_lo > 0:
        raise ValueError("trains must be observed from time 0")
    block = 2.0 ** (n - k)
    width = math.floor(2.0 ** (n * beta))
    if not system.lattice.contains((0,)):
        raise ValueError("site 0 must be inside the box")
    sites = [system.lattice.index((x,)) for x in range(width + 1) if system.lattice.contains((x,))]
    max_odd = int(system.t_hi // block)
    if max_index is not None:
        max_odd = min(max_odd, int(max_index))
    return stopping_index_from_marks(system.mark_ptr, system.marks, sites, block, max_odd)


def check_path(system: HarrisSystem, lam: float, witness: PathWitness, region: SpaceTimeRect | None = None) -> list:
    """Re-check a witness against the path conditions; returns the violations found."""
    problems = []
    lat = system.lattice
    legs = list(witness.legs)
    times = [t for _, t in legs] + [witness.end_time]
    if any(b < a for a, b in zip(times, times[1:])):
        problems.append("entry times decrease")
    active = set()
    thr = system.active_threshold(lam)
    for e in range(system.edge_src.size):
        sl = slice(system.arrow_ptr[e], system.arrow_ptr[e + 1])
        for t, u in zip(system.arrow_time[sl], system.arrow_u[sl]):
            if u <= thr:
                active.add((int(system.edge_src[e]), int(system.edge_dst[e]), float(t)))
    for i, (coord, entry) in enumerate(legs):
        exit_t = times[i + 1]
        row = system.marks_of(lat.index(coord))
        last = i == len(legs) - 1
        inside = (row >= entry) & (row <= exit_t)
        if i == 0 and witness.open_start:
            inside &= row > entry
        if np.any(inside):
            problems.append(f"leg {i} at {coord} meets a renewal mark at {row[inside][0]}")
        if not last:
            nxt = legs[i + 1][0]
            if sum(abs(p - q) for p, q in zip(coord, nxt)) != 1:
                problems.append(f"leg {i} -> {i + 1} is not a nearest-neighbour step")
            elif (lat.index(coord), lat.index(nxt), float(exit_t)) not in active:
                problems.append(f"no active arrow {coord}->{nxt} at t={exit_t}")
        if region is not None:
            if not all(a <= v <= b for v, a, b in zip(coord, region.lo, region.hi)):
                problems.append(f"leg {i} leaves the region")
    if region is not None and (times[0] < region.S or times[-1] > region.T):
        problems.append("path leaves the region's time window")
    return problems


__all__ = [
    "SpaceTimeRect", "SeedSet", "InfectedIntervalSet", "PathWitness", "Censored", "ChainResult",
    "propagate", "survival_time", "has_temporal_crossing", "has_spatial_crossing", "find_crossing",
    "temporal_crossing_witness", "spatial_crossing_witness", "detect_A0", "detect_chain",
    "chain_windows", "chain_witness", "windowed_temporal_crossing", "detect_gap",
    "stopping_index_Tn", "stopping_index_from_marks", "check_path", "union_canonical",
    "canonical_subset", "InvalidSeedError", "ParameterDomainError",
]
