"""Frozen Harris systems on a finite box of Z^d.

A system holds, for every ordered nearest-neighbour pair inside the box, a
Poisson stream of arrow times at rate ``lambda_max``, each carrying a
uniform mark ``u`` in (0, 1]; the arrows active at rate ``lam`` are those
with ``u <= lam / lambda_max``.  Every site carries an independent renewal
train.  Arrows leaving the box are not generated.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .renewal import (HazardField, InterarrivalLaw, RenewalTrain, TieError, check_strictly_increasing,
                      law_from_dict, sample_marks, sample_train_by_thinning)
from .seeding import STREAM_ARROWS, STREAM_TRAINS

DEFAULT_MAX_EVENTS = 50_000_000


class CapacityError(RuntimeError):
    """The expected number of events exceeds the configured budget."""


class CouplingRangeError(ValueError):
    """A rate above the system's ``lambda_max`` was requested."""


class DumpError(ValueError):
    """A system dump is malformed, truncated or from another format version."""


def max_events() -> int:
    return int(float(os.environ.get("RCP_MAX_EVENTS", DEFAULT_MAX_EVENTS)))


@dataclass(frozen=True)
class Lattice:
    """The box ``prod_i [lower_i, upper_i]`` of Z^d with l1 nearest neighbours."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(int(v) for v in np.atleast_1d(self.lower))
        hi = tuple(int(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise ValueError("lower and upper must have the same positive length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError("need lower <= upper on every axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def interval(cls, a: int, b: int) -> "Lattice":
        return cls((a,), (b,))

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> tuple:
        return tuple(b - a + 1 for a, b in zip(self.lower, self.upper))

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def coords(self) -> np.ndarray:
        """``(n_sites, d)`` coordinates in C order."""
        axes = [np.arange(a, b + 1) for a, b in zip(self.lower, self.upper)]
        return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)

    def contains(self, coord) -> bool:
        c = np.atleast_1d(coord)
        return len(c) == self.d and all(a <= v <= b for v, a, b in zip(c, self.lower, self.upper))

    def index(self, coord) -> int:
        c = tuple(int(v) for v in np.atleast_1d(coord))
        if not self.contains(c):
            raise ValueError(f"site {c} outside the box {self.lower}..{self.upper}")
        return int(np.ravel_multi_index(tuple(v - a for v, a in zip(c, self.lower)), self.shape))

    def coord(self, idx: int):
        c = self.coords[idx]
        return int(c[0]) if self.d == 1 else tuple(int(v) for v in c)

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Ordered neighbour pairs ``(src, dst)`` sorted lexicographically."""
        idx = np.arange(self.n_sites).reshape(self.shape)
        src, dst = [], []
        for axis in range(self.d):
            n = self.shape[axis]
            if n < 2:
                continue
            a = np.take(idx, np.arange(n - 1), axis=axis).ravel()
            b = np.take(idx, np.arange(1, n), axis=axis).ravel()
            src += [a, b]
            dst += [b, a]
        if not src:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        s = np.concatenate(src)
        t = np.concatenate(dst)
        order = np.lexsort((t, s))
        return s[order].astype(np.int64), t[order].astype(np.int64)

    def region_mask(self, lo, hi) -> np.ndarray:
        lo = np.atleast_1d(lo)
        hi = np.atleast_1d(hi)
        return np.all((self.coords >= lo) & (self.coords <= hi), axis=1)

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class StartPolicy:
    """Where each site's renewal train starts, relative to the window start ``t_lo``.

    ``zero``: every train starts at ``t_lo``.  ``uniform``: independent
    starts ``t_lo - U * width`` with U uniform on (0, 1].  ``explicit``: the
    given per-site offsets (must be <= 0).
    """

    kind: str = "zero"
    width: float = 0.0
    offsets: tuple = ()

    def __post_init__(self):
        if self.kind not in ("zero", "uniform", "explicit"):
            raise ValueError(f"unknown start policy {self.kind!r}")
        if self.kind == "uniform" and not self.width > 0:
            raise ValueError("uniform start policy needs width > 0")
        if self.kind == "explicit" and any(o > 0 for o in self.offsets):
            raise ValueError("explicit start offsets must be <= 0")

    @classmethod
    def uniform(cls, width: float) -> "StartPolicy":
        return cls("uniform", float(width))

    def starts(self, n_sites: int, t_lo: float, rng) -> np.ndarray:
        if self.kind == "zero":
            return np.full(n_sites, float(t_lo))
        if self.kind == "uniform":
            return t_lo - self.width * (1.0 - rng.random(n_sites))
        if len(self.offsets) != n_sites:
            raise ValueError(f"explicit policy has {len(self.offsets)} offsets for {n_sites} sites")
        return t_lo + np.asarray(self.offsets, dtype=float)

    def label(self) -> str:
        return {"zero": "all-at-0", "uniform": f"uniform-offset-{self.width:g}", "explicit": "explicit"}[self.kind]

    def to_dict(self):
        return {"kind": self.kind, "width": self.width, "offsets": list(self.offsets)}


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HarrisSystem:
    lattice: Lattice
    t_lo: float
    t_hi: float
    law: InterarrivalLaw
    lambda_max: float
    master_seed: int
    start_policy: StartPolicy
    site_starts: np.ndarray
    mark_ptr: np.ndarray
    marks: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    arrow_ptr: np.ndarray
    arrow_time: np.ndarray
    arrow_u: np.ndarray

    def __post_init__(self):
        for name in ("site_starts", "mark_ptr", "marks", "edge_src", "edge_dst",
                     "arrow_ptr", "arrow_time", "arrow_u"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @property
    def horizon(self) -> tuple[float, float]:
        return (self.t_lo, self.t_hi)

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    def marks_of(self, site_idx: int) -> np.ndarray:
        return self.marks[self.mark_ptr[site_idx]:self.mark_ptr[site_idx + 1]]

    def train(self, site) -> RenewalTrain:
        i = self.lattice.index(site)
        return RenewalTrain(float(self.site_starts[i]), self.marks_of(i), self.t_hi)

    def arrow_counts(self) -> np.ndarray:
        return np.diff(self.arrow_ptr)

    @cached_property
    def _time_order(self):
        edge_of = np.repeat(np.arange(self.edge_src.size), np.diff(self.arrow_ptr))
        order = np.argsort(self.arrow_time, kind="stable")
        t = self.arrow_time[order]
        if t.size > 1 and np.any(np.diff(t) == 0):
            raise TieError("two arrows share a timestamp")
        e = edge_of[order]
        return (_readonly(t), _readonly(self.edge_src[e]), _readonly(self.edge_dst[e]),
                _readonly(self.arrow_u[order]))

    def active_threshold(self, lam: float) -> float:
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        if lam > self.lambda_max:
            raise CouplingRangeError(f"lambda={lam} exceeds lambda_max={self.lambda_max}")
        return 0.0 if self.lambda_max == 0 else lam / self.lambda_max

    def sorted_active(self, lam: float):
        """Active arrows merged over all edges in time order: ``(time, src, dst)``."""
        thr = self.active_threshold(lam)
        t, s, d, u = self._time_order
        keep = u <= thr
        return t[keep], s[keep], d[keep]

    def same_realization(self, other: "HarrisSystem") -> bool:
        arrays = ("site_starts", "mark_ptr", "marks", "edge_src", "edge_dst", "arrow_ptr", "arrow_time", "arrow_u")
        return (self.lattice == other.lattice and self.horizon == other.horizon and self.law == other.law
                and self.lambda_max == other.lambda_max and self.master_seed == other.master_seed
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays))


@dataclass(frozen=True)
class ArrowView:
    """Per-edge sorted arrow times active at one rate."""

    edge_src: np.ndarray
    edge_dst: np.ndarray
    ptr: np.ndarray
    times: np.ndarray

    def on_edge(self, e: int) -> np.ndarray:
        return self.times[self.ptr[e]:self.ptr[e + 1]]

    def as_set(self) -> set:
        edge_of = np.repeat(np.arange(self.edge_src.size), np.diff(self.ptr))
        return {(int(self.edge_src[e]), int(self.edge_dst[e]), float(t)) for e, t in zip(edge_of, self.times)}


def expected_events(lattice: Lattice, horizon, law: InterarrivalLaw, lambda_max: float,
                    start_span: float = 0.0) -> float:
    t_lo, t_hi = horizon
    n_edges = lattice.edges[0].size
    return n_edges * lambda_max * (t_hi - t_lo) + lattice.n_sites * ((t_hi - t_lo + start_span) / law.typical_interarrival() + 1)


def build_harris(lattice: Lattice, horizon, law: InterarrivalLaw, lambda_max: float, master_seed: int,
                 start_policy: StartPolicy | None = None, train_method: str = "direct",
                 event_cap: int | None = None) -> HarrisSystem:
    """Sample a Harris system on ``lattice x [t_lo, t_hi]``.

    Trains and arrows come from separate streams of ``master_seed``, so the
    trains do not depend on ``lambda_max``.  ``train_method="thinning"``
    reads each site's train off a hazard field addressed by (site, seed).
    """
    t_lo, t_hi = (float(v) for v in horizon)
    if t_lo > t_hi:
        raise ValueError("horizon must satisfy t_lo <= t_hi")
    if lambda_max < 0:
        raise ValueError("lambda_max must be nonnegative")
    start_policy = start_policy or StartPolicy()
    cap = max_events() if event_cap is None else event_cap
    span = start_policy.width if start_policy.kind == "uniform" else (
        -min(start_policy.offsets, default=0.0) if start_policy.kind == "explicit" else 0.0)
    need = expected_events(lattice, (t_lo, t_hi), law, lambda_max, span)
    if need > cap:
        raise CapacityError(f"expected {need:.3g} events exceeds the cap of {cap} (set RCP_MAX_EVENTS to raise it)")

    master_seed = int(master_seed)
    train_rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(STREAM_TRAINS,)))
    starts = start_policy.starts(lattice.n_sites, t_lo, train_rng)
    if train_method == "direct":
        mark_ptr, marks = sample_marks(law, starts, t_hi, train_rng)
    elif train_method == "thinning":
        rows = [sample_train_by_thinning(law, s, t_hi, HazardField.for_law(law, master_seed, i)).marks
                for i, s in enumerate(starts)]
        mark_ptr = np.zeros(len(rows) + 1, np.int64)
        np.cumsum([r.size for r in rows], out=mark_ptr[1:])
        marks = np.concatenate(rows) if rows else np.zeros(0)
    else:
        raise ValueError(f"unknown train_method {train_method!r}")

    src, dst = lattice.edges
    arrow_rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(STREAM_ARROWS,)))
    counts = arrow_rng.poisson(lambda_max * (t_hi - t_lo), src.size)
    total = int(counts.sum())
    times = t_lo + (t_hi - t_lo) * arrow_rng.random(total)
    us = 1.0 - arrow_rng.random(total)
    edge_of = np.repeat(np.arange(src.size), counts)
    order = np.lexsort((times, edge_of))
    times, us = times[order], us[order]
    arrow_ptr = np.zeros(src.size + 1, np.int64)
    np.cumsum(counts, out=arrow_ptr[1:])
    for e in range(src.size):
        check_strictly_increasing(times[arrow_ptr[e]:arrow_ptr[e + 1]], f"arrows on edge {e}")

    return HarrisSystem(lattice, t_lo, t_hi, law, float(lambda_max), master_seed, start_policy,
                        starts, mark_ptr, marks, src, dst, arrow_ptr, times, us)


def active_arrows(system: HarrisSystem, lam: float) -> ArrowView:
    thr = system.active_threshold(lam)
    keep = system.arrow_u <= thr
    edge_of = np.repeat(np.arange(system.edge_src.size), np.diff(system.arrow_ptr))
    counts = np.bincount(edge_of[keep], minlength=system.edge_src.size)
    ptr = np.zeros(system.edge_src.size + 1, np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ArrowView(system.edge_src, system.edge_dst, ptr, system.arrow_time[keep])


def system_from_events(lattice: Lattice, horizon, marks: dict, arrows: list, lambda_max: float = 1.0,
                       law: InterarrivalLaw | None = None, starts: dict | None = None) -> HarrisSystem:
    """Assemble a system from explicit events, e.g. for hand-built examples.

    ``marks`` maps site coordinates to mark times; ``arrows`` is a list of
    ``(src, dst, time)`` or ``(src, dst, time, u)``; arrows without ``u``
    are active at every rate.
    """
    from .renewal import Exponential

    t_lo, t_hi = (float(v) for v in horizon)
    law = law or Exponential(1.0)
    n = lattice.n_sites
    rows = [np.zeros(0)] * n
    for site, ts in marks.items():
        rows[lattice.index(site)] = np.sort(np.asarray(ts, dtype=float))
    mark_ptr = np.zeros(n + 1, np.int64)
    np.cumsum([r.size for r in rows], out=mark_ptr[1:])
    all_marks = np.concatenate(rows) if n else np.zeros(0)
    for i in range(n):
        check_strictly_increasing(all_marks[mark_ptr[i]:mark_ptr[i + 1]], f"marks of site {lattice.coord(i)}")
    site_starts = np.full(n, t_lo)
    for site, s in (starts or {}).items():
        site_starts[lattice.index(site)] = s

    src, dst = lattice.edges
    lookup = {(int(a), int(b)): e for e, (a, b) in enumerate(zip(src, dst))}
    per_edge = [[] for _ in range(src.size)]
    for arrow in arrows:
        a, b, t = arrow[:3]
        u = arrow[3] if len(arrow) > 3 else 0.0
        key = (lattice.index(a), lattice.index(b))
        if key not in lookup:
            raise ValueError(f"no edge {a}->{b} in the box")
        per_edge[lookup[key]].append((float(t), float(u)))
    counts = [len(p) for p in per_edge]
    arrow_ptr = np.zeros(src.size + 1, np.int64)
    np.cumsum(counts, out=arrow_ptr[1:])
    flat = [x for p in per_edge for x in sorted(p)]
    times = np.array([x[0] for x in flat], dtype=float)
    us = np.array([x[1] for x in flat], dtype=float)
    for e in range(src.size):
        check_strictly_increasing(times[arrow_ptr[e]:arrow_ptr[e + 1]], f"arrows on edge {e}")
    return HarrisSystem(lattice, t_lo, t_hi, law, float(lambda_max), 0, StartPolicy(), site_starts,
                        mark_ptr, all_marks, src, dst, arrow_ptr, times, us)


# ---- binary dump -----------------------------------------------------------

DUMP_MAGIC = b"RCPSYS\x00"
DUMP_VERSION = 1
_ARRAYS = (("site_starts", "<f8"), ("mark_ptr", "<i8"), ("marks", "<f8"), ("edge_src", "<i8"),
           ("edge_dst", "<i8"), ("arrow_ptr", "<i8"), ("arrow_time", "<f8"), ("arrow_u", "<f8"))


def dump_system(system: HarrisSystem, path, summary: dict | None = None) -> None:
    """Write ``magic | u16 version | u64 header length | JSON header | arrays``."""
    header = {
        "lattice": system.lattice.to_dict(),
        "horizon": [system.t_lo, system.t_hi],
        "law": system.law.to_dict(),
        "lambda_max": system.lambda_max,
        "master_seed": system.master_seed,
        "start_policy": system.start_policy.to_dict(),
        "arrays": [[name, dt, int(getattr(system, name).size)] for name, dt in _ARRAYS],
        "summary": summary or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(struct.pack("<HQ", DUMP_VERSION, len(blob)))
        fh.write(blob)
        for name, dt in _ARRAYS:
            fh.write(np.ascontiguousarray(getattr(system, name), dtype=dt).tobytes())


def load_system(path) -> tuple[HarrisSystem, dict]:
    """Read a dump written by :func:`dump_system`; returns ``(system, summary)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    head = len(DUMP_MAGIC) + struct.calcsize("<HQ")
    if len(data) < head or not data.startswith(DUMP_MAGIC):
        raise DumpError(f"{path}: not a system dump or truncated header ({len(data)} bytes)")
    version, hlen = struct.unpack_from("<HQ", data, len(DUMP_MAGIC))
    if version != DUMP_VERSION:
        raise DumpError(f"dump format version {version} is not supported by this reader (version {DUMP_VERSION})")
    if len(data) < head + hlen:
        raise DumpError(f"{path}: truncated header: expected {hlen} header bytes, found {len(data) - head}")
    header = json.loads(data[head:head + hlen])
    pos = head + hlen
    expected = pos + sum(np.dtype(dt).itemsize * n for _, dt, n in header["arrays"])
    if len(data) != expected:
        raise DumpError(f"{path}: length mismatch: expected {expected} bytes, found {len(data)}")
    arrays = {}
    for name, dt, n in header["arrays"]:
        nbytes = np.dtype(dt).itemsize * n
        arrays[name] = np.frombuffer(data, dtype=dt, count=n, offset=pos).astype(np.dtype(dt).newbyteorder("="))
        pos += nbytes
    sp = header["start_policy"]
    system = HarrisSystem(
        Lattice(tuple(header["lattice"]["lower"]), tuple(header["lattice"]["upper"])),
        float(header["horizon"][0]), float(header["horizon"][1]),
        law_from_dict(header["law"]), float(header["lambda_max"]), int(header["master_seed"]),
        StartPolicy(sp["kind"], sp["width"], tuple(sp["offsets"])), **arrays)
    return system, header["summary"]


__all__ = ["Lattice", "StartPolicy", "HarrisSystem", "ArrowView", "build_harris", "active_arrows",
           "system_from_events", "dump_system", "load_system", "CapacityError", "CouplingRangeError",
           "DumpError", "expected_events", "max_events"]
