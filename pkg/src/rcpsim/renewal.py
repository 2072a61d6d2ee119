"""Interarrival laws, renewal trains and hazard-rate thinning.

Four parametric laws are supported.  All times are float64; renewal marks
of one train are strictly increasing and a tie raises :class:`TieError`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import _kernels as K
from .seeding import as_generator, split_seed

DEFAULT_EPS_H = 1e-6


class TieError(RuntimeError):
    """Two events that must be strictly ordered share a timestamp."""


class HypothesisAError(ValueError):
    """The law does not have a nonincreasing hazard rate."""


class InterarrivalLaw:
    """Base class; subclasses supply closed forms for f, F, h and the inverse survivor."""

    kind: str = ""
    code: int = -1
    satisfies_hypothesis_A: bool = False
    support_end: float = math.inf

    @property
    def params(self) -> tuple[float, float]:
        raise NotImplementedError

    def pdf(self, t):
        raise NotImplementedError

    def cdf(self, t):
        raise NotImplementedError

    def sf(self, t):
        return 1.0 - self.cdf(t)

    def isf(self, v):
        """Inverse survivor: the t with ``sf(t) = v`` for v in (0, 1]."""
        raise NotImplementedError

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("hazard is defined for t >= 0 only")
        if np.any(t >= self.support_end):
            raise ValueError(f"hazard undefined at t where F(t) = 1 for {self!r}")
        out = np.vectorize(lambda s: K.hazard_at(self.code, *self.params, float(s)))(t)
        return float(out) if out.ndim == 0 else out

    def has_finite_moment(self, p: float) -> bool:
        return True

    @property
    def mean(self) -> float:
        raise NotImplementedError

    def typical_interarrival(self) -> float:
        """A scale for batch sizing: the mean when finite, else the median."""
        m = self.mean
        return m if math.isfinite(m) else float(self.isf(0.5))

    def hazard_cap(self, eps_h: float = DEFAULT_EPS_H) -> float:
        """Largest hazard value a thinning run against this law ever needs."""
        if not self.satisfies_hypothesis_A:
            raise HypothesisAError(f"{self!r} does not satisfy Hypothesis A")
        h0 = K.hazard_at(self.code, *self.params, 0.0)
        if math.isfinite(h0):
            return float(h0)
        return float(K.hazard_at(self.code, *self.params, eps_h))

    @property
    def singular_at_zero(self) -> bool:
        return not math.isfinite(K.hazard_at(self.code, *self.params, 0.0))

    def to_dict(self) -> dict:
        raise NotImplementedError

    def sample(self, size, rng) -> np.ndarray:
        v = 1.0 - rng.random(size)
        return self.isf(v)


@dataclass(frozen=True)
class Exponential(InterarrivalLaw):
    rate: float = 1.0

    kind = "exponential"
    code = K.EXPONENTIAL
    satisfies_hypothesis_A = True

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")

    @property
    def params(self):
        return (float(self.rate), 0.0)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self.rate * np.exp(-self.rate * t), 0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, -np.expm1(-self.rate * np.maximum(t, 0)), 0.0)

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-self.rate * np.maximum(t, 0))

    def isf(self, v):
        return -np.log(v) / self.rate

    @property
    def mean(self):
        return 1.0 / self.rate

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate}


@dataclass(frozen=True)
class ShiftedPareto(InterarrivalLaw):
    """F(t) = 1 - (scale / (scale + t))**alpha; hazard alpha / (scale + t)."""

    alpha: float = 2.0
    scale: float = 1.0

    kind = "shifted_pareto"
    code = K.SHIFTED_PARETO
    satisfies_hypothesis_A = True

    def __post_init__(self):
        if not (self.alpha > 0 and self.scale > 0):
            raise ValueError("alpha and scale must be positive")

    @property
    def params(self):
        return (float(self.alpha), float(self.scale))

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        tt = np.maximum(t, 0)
        return np.where(t >= 0, self.alpha / self.scale * (self.scale / (self.scale + tt)) ** (self.alpha + 1), 0.0)

    def cdf(self, t):
        return 1.0 - self.sf(t)

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        return (self.scale / (self.scale + np.maximum(t, 0))) ** self.alpha

    def isf(self, v):
        return self.scale * np.expm1(-np.log(v) / self.alpha)

    def has_finite_moment(self, p):
        return p < self.alpha

    @property
    def mean(self):
        return self.scale / (self.alpha - 1) if self.alpha > 1 else math.inf

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "scale": self.scale}


@dataclass(frozen=True)
class Weibull(InterarrivalLaw):
    shape: float = 1.0
    scale: float = 1.0

    kind = "weibull"
    code = K.WEIBULL

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("shape and scale must be positive")

    @property
    def satisfies_hypothesis_A(self):
        return self.shape <= 1.0

    @property
    def params(self):
        return (float(self.shape), float(self.scale))

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        z = np.maximum(t, 0) / self.scale
        with np.errstate(divide="ignore"):
            out = self.shape / self.scale * z ** (self.shape - 1) * np.exp(-z ** self.shape)
        return np.where(t >= 0, out, 0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return -np.expm1(-(np.maximum(t, 0) / self.scale) ** self.shape)

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-(np.maximum(t, 0) / self.scale) ** self.shape)

    def isf(self, v):
        return self.scale * (-np.log(v)) ** (1.0 / self.shape)

    @property
    def mean(self):
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)

    def to_dict(self):
        return {"kind": self.kind, "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class UniformLaw(InterarrivalLaw):
    """Uniform on [0, b]; its hazard 1/(b - t) increases, so no Hypothesis A."""

    b: float = 1.0

    kind = "uniform"
    code = K.UNIFORM
    satisfies_hypothesis_A = False

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("b must be positive")

    @property
    def support_end(self):
        return self.b

    @property
    def params(self):
        return (float(self.b), 0.0)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= 0) & (t <= self.b), 1.0 / self.b, 0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.clip(t / self.b, 0.0, 1.0)

    def isf(self, v):
        return self.b * (1.0 - np.asarray(v, dtype=float))

    @property
    def mean(self):
        return self.b / 2

    def to_dict(self):
        return {"kind": self.kind, "b": self.b}


_LAW_KINDS = {
    "exponential": (Exponential, ("rate",)),
    "shifted_pareto": (ShiftedPareto, ("alpha", "scale")),
    "weibull": (Weibull, ("shape", "scale")),
    "uniform": (UniformLaw, ("b",)),
}


def law_from_dict(desc: dict) -> InterarrivalLaw:
    """Build a law from ``{"kind": "shifted_pareto", "alpha": 1.5, "scale": 1.0}``."""
    if "kind" not in desc:
        raise ValueError("law descriptor needs a 'kind'")
    try:
        cls, names = _LAW_KINDS[desc["kind"]]
    except KeyError:
        raise ValueError(f"unknown law kind {desc['kind']!r}; expected one of {sorted(_LAW_KINDS)}") from None
    extra = set(desc) - set(names) - {"kind"}
    if extra:
        raise ValueError(f"unexpected parameters for {desc['kind']}: {sorted(extra)}")
    return cls(**{k: float(desc[k]) for k in names if k in desc})


def hazard(law: InterarrivalLaw, t: float) -> float:
    return law.hazard(t)


@dataclass(frozen=True)
class RenewalTrain:
    start: float
    marks: np.ndarray
    horizon: float

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=float)
        check_strictly_increasing(marks, "renewal marks")
        if marks.size and (marks[0] <= self.start or marks[-1] > self.horizon):
            raise ValueError("marks must lie in (start, horizon]")
        marks.setflags(write=False)
        object.__setattr__(self, "marks", marks)

    @property
    def interarrivals(self) -> np.ndarray:
        return np.diff(np.concatenate(([self.start], self.marks)))

    def __len__(self):
        return self.marks.size

    def __eq__(self, other):
        if not isinstance(other, RenewalTrain):
            return NotImplemented
        return (self.start == other.start and self.horizon == other.horizon
                and np.array_equal(self.marks, other.marks))


def check_strictly_increasing(a: np.ndarray, what: str):
    if a.size > 1:
        d = np.diff(a)
        if np.any(d <= 0):
            i = int(np.argmax(d <= 0))
            if d[i] == 0:
                raise TieError(f"{what}: tie at t={a[i]!r}")
            raise ValueError(f"{what}: not sorted at index {i}")


def sample_train(law: InterarrivalLaw, start: float, horizon: float, seed) -> RenewalTrain:
    """Direct sampler: partial sums of i.i.d. interarrivals landing in (start, horizon]."""
    if start > horizon:
        raise ValueError("start must not exceed horizon")
    rng = as_generator(seed)
    ptr, marks = sample_marks(law, np.array([start], dtype=float), horizon, rng)
    return RenewalTrain(float(start), marks, float(horizon))


def sample_marks(law: InterarrivalLaw, starts: np.ndarray, horizon: float, rng):
    """Independent trains, one per entry of ``starts``, all cut at ``horizon``.

    Returns CSR arrays ``(ptr, marks)``: the marks of train i are
    ``marks[ptr[i]:ptr[i+1]]``.
    """
    starts = np.asarray(starts, dtype=float)
    n = starts.size
    if n == 0:
        return np.zeros(1, np.int64), np.zeros(0)
    typical = law.typical_interarrival()
    span = max(horizon - float(starts.min()), 0.0)
    width = int(min(max(math.ceil(1.1 * span / typical) + 8, 16), 1 << 16))
    rows = np.arange(n)
    last = starts.copy()
    piece_rows, piece_vals = [], []
    while rows.size:
        draws = law.sample((rows.size, width), rng)
        vals = np.cumsum(draws, axis=1) + last[rows, None]
        keep = vals <= horizon
        r = np.broadcast_to(rows[:, None], vals.shape)[keep]
        piece_rows.append(r)
        piece_vals.append(vals[keep])
        more = vals[:, -1] <= horizon
        last[rows[more]] = vals[more, -1]
        rows = rows[more]
    all_rows = np.concatenate(piece_rows)
    all_vals = np.concatenate(piece_vals)
    order = np.argsort(all_rows, kind="stable")
    marks = all_vals[order]
    ptr = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(all_rows, minlength=n), out=ptr[1:])
    for i in range(n):
        check_strictly_increasing(marks[ptr[i]:ptr[i + 1]], f"train {i}")
        if ptr[i + 1] > ptr[i] and marks[ptr[i]] <= starts[i]:
            raise TieError(f"train {i}: first mark coincides with its start")
    return ptr, marks


def _chunk_key(k: int) -> int:
    return 2 * k if k >= 0 else -2 * k - 1


class HazardField:
    """Unit-rate Poisson points on the strip R x (0, u_cap), realized lazily.

    The time axis is cut into chunks of fixed width; chunk ``k`` of the field
    addressed by ``(seed, site)`` is drawn from its own seed stream, so any
    window is reproduced exactly whatever order it is queried in.  A field
    built with :meth:`from_points` holds a fixed point set instead.
    """

    def __init__(self, seed: int, site: int = 0, u_cap: float = 1.0, chunk_width: float | None = None):
        if not u_cap > 0:
            raise ValueError("u_cap must be positive")
        self.seed = int(seed)
        self.site = int(site)
        self.u_cap = float(u_cap)
        self.chunk_width = float(chunk_width) if chunk_width else 256.0 / self.u_cap
        self._chunks: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._fixed = None

    @classmethod
    def for_law(cls, law: InterarrivalLaw, seed: int, site: int = 0, eps_h: float = DEFAULT_EPS_H):
        return cls(seed, site, law.hazard_cap(eps_h))

    @classmethod
    def from_points(cls, times, heights, u_cap: float | None = None):
        times = np.asarray(times, dtype=float)
        heights = np.asarray(heights, dtype=float)
        order = np.argsort(times, kind="stable")
        cap = float(u_cap) if u_cap is not None else float(heights.max(initial=0.0)) + 1.0
        f = cls(0, 0, cap)
        f._fixed = (times[order], heights[order])
        return f

    def _chunk(self, k: int):
        if k not in self._chunks:
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.site, _chunk_key(k))))
            m = rng.poisson(self.chunk_width * self.u_cap)
            t = np.sort(k * self.chunk_width + self.chunk_width * rng.random(m))
            u = self.u_cap * rng.random(m)
            self._chunks[k] = (t, u)
        return self._chunks[k]

    def points(self, t_lo: float, t_hi: float):
        """Sorted ``(times, heights)`` of the points with time in [t_lo, t_hi]."""
        if self._fixed is not None:
            t, u = self._fixed
        else:
            k0 = math.floor(t_lo / self.chunk_width)
            k1 = math.floor(t_hi / self.chunk_width)
            parts = [self._chunk(k) for k in range(k0, k1 + 1)]
            t = np.concatenate([p[0] for p in parts])
            u = np.concatenate([p[1] for p in parts])
        sel = (t >= t_lo) & (t <= t_hi)
        return t[sel], u[sel]

    def aux_generator(self, start: float) -> np.random.Generator:
        """Uniform stream for the short-interarrival branch of the hybrid sampler."""
        bits = int(np.float64(start).view(np.uint64))
        key = (self.site, 1 << 40, bits >> 32, bits & 0xFFFFFFFF)
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))


def _require_A(law):
    if not law.satisfies_hypothesis_A:
        raise HypothesisAError(f"{law!r} does not satisfy Hypothesis A (nonincreasing hazard)")


def sample_train_by_thinning(law: InterarrivalLaw, start: float, horizon: float, field: HazardField,
                             eps_h: float = DEFAULT_EPS_H) -> RenewalTrain:
    """Renewal train read off a Poisson field under the restarted hazard graph.

    For laws whose hazard blows up at 0 the first ``eps_h`` of every
    interarrival is sampled by inverse CDF and thinning takes over after it.
    """
    _require_A(law)
    if start > horizon:
        raise ValueError("start must not exceed horizon")
    kind, p1, p2 = law.code, *law.params
    need = law.hazard_cap(eps_h)
    if field.u_cap < need * (1 - 1e-12):
        raise ValueError(f"field ceiling {field.u_cap} below the hazard maximum {need}")
    times, heights = field.points(start, horizon)
    if not law.singular_at_zero:
        out = np.empty(times.size)
        n = K.thin_scan(kind, p1, p2, float(start), float(horizon), times, heights, out)
        return RenewalTrain(float(start), out[:n].copy(), float(horizon))

    aux = field.aux_generator(start)
    f_eps = float(law.cdf(eps_h))
    marks = []
    last = float(start)
    i = 0
    while True:
        v = aux.random()
        if v < f_eps:
            t = last + float(law.isf(1.0 - v))
            if t > horizon:
                break
            if t <= last:
                raise TieError(f"short interarrival collapsed onto t={last!r}")
            marks.append(t)
            last = t
            continue
        i = K.thin_first(kind, p1, p2, last, last + eps_h, times, heights, 0 if i < 0 else i)
        if i < 0 or times[i] > horizon:
            break
        last = float(times[i])
        marks.append(last)
        i += 1
    return RenewalTrain(float(start), np.array(marks), float(horizon))


def coupled_trains(law: InterarrivalLaw, t0: float, t0_prime: float, field: HazardField,
                   horizon: float | None = None) -> tuple[RenewalTrain, RenewalTrain]:
    """Trains started at ``t0 <= t0_prime`` read off the same field.

    With a bounded nonincreasing hazard, the marks of the earlier train that
    fall at or after ``t0_prime`` are all marks of the later one.
    """
    _require_A(law)
    if t0 > t0_prime:
        raise ValueError("need t0 <= t0_prime")
    if horizon is None:
        horizon = t0_prime + 100.0 * law.typical_interarrival()
    return (sample_train_by_thinning(law, t0, horizon, field),
            sample_train_by_thinning(law, t0_prime, horizon, field))


def write_trains_csv(path, trains: Iterable[tuple[object, RenewalTrain]], extra: dict | None = None):
    """CSV with columns (site, mark_time[, extra...])."""
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site", "mark_time", *extra])
        for site, train in trains:
            for t in train.marks:
                w.writerow([site, repr(float(t)), *extra.values()])


__all__ = [
    "InterarrivalLaw", "Exponential", "ShiftedPareto", "Weibull", "UniformLaw",
    "law_from_dict", "hazard", "RenewalTrain", "HazardField", "sample_train",
    "sample_marks", "sample_train_by_thinning", "coupled_trains", "TieError",
    "HypothesisAError", "split_seed", "write_trains_csv", "DEFAULT_EPS_H",
]
