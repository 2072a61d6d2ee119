"""Monte Carlo estimators and statistical checks.

Replicate ``i`` of an operation builds its system from
``split_seed(master_seed, STREAM_REPLICATE, op_tag, i)``, so results do not
depend on thread count or evaluation order.  All inequality checks are
one-sided confidence-interval tests: a violation is flagged only when the
interval excludes the inequality.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .graphical import Lattice, StartPolicy, build_harris, system_from_events
from .reachability import (Censored, SeedSet, SpaceTimeRect, chain_windows, detect_chain, has_spatial_crossing,
                           has_temporal_crossing, propagate, stopping_index_Tn, survival_time,
                           windowed_temporal_crossing)
from .renewal import HypothesisAError, InterarrivalLaw, sample_marks
from .seeding import STREAM_REPLICATE, split_seed

Z95 = float(stats.norm.ppf(0.975))

OP_SURVIVAL = 1
OP_PR = 2
OP_BRANCHING = 3
OP_CENSUS = 4
OP_LAMBDA_C = 5
OP_FKG = 6
OP_CHAIN = 7
OP_GAP = 8


def replicate_seed(master_seed: int, op: int, i: int, *extra: int) -> int:
    return split_seed(master_seed, STREAM_REPLICATE, op, *extra, i)


def run_replicates(fn, n: int, threads: int = 1) -> list:
    """``[fn(0), ..., fn(n-1)]``, optionally on a thread pool; order is preserved."""
    if threads <= 1 or n < 2:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n), chunksize=max(1, n // (8 * threads))))


def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, mid - half)
    hi = 1.0 if k == n else min(1.0, mid + half)
    return lo, hi


@dataclass(frozen=True)
class Estimate:
    """Point estimate with a 95% interval (Wilson for proportions, t for means)."""

    mean: float
    n: int
    ci_lo: float
    ci_hi: float
    kind: str = "proportion"
    seed: int | None = None
    se: float = 0.0

    @classmethod
    def proportion(cls, indicators, seed=None) -> "Estimate":
        x = np.asarray(indicators, dtype=bool)
        n, k = x.size, int(x.sum())
        lo, hi = wilson_interval(k, n)
        p = k / n if n else 0.0
        se = math.sqrt(p * (1 - p) / n) if n else 0.0
        return cls(p, n, min(lo, p), max(hi, p), "proportion", seed, se)

    @classmethod
    def sample_mean(cls, values, seed=None) -> "Estimate":
        x = np.asarray(values, dtype=float)
        n = x.size
        m = float(x.mean()) if n else 0.0
        if n < 2:
            return cls(m, n, -math.inf, math.inf, "mean", seed, math.inf)
        se = float(x.std(ddof=1) / math.sqrt(n))
        q = float(stats.t.ppf(0.975, n - 1))
        return cls(m, n, m - q * se, m + q * se, "mean", seed, se)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class MultiscaleParams:
    """Scale parameters: rectangles are ``floor(2^(r beta))`` sites by ``2^r`` time."""

    beta: float = 0.5
    r: int = 6
    k: int = 3
    c: float = 2 / 3
    eps: float = 2.0

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")

    def width(self, r: int | None = None) -> int:
        return math.floor(2.0 ** ((self.r if r is None else r) * self.beta))

    def length(self, r: int | None = None) -> float:
        return 2.0 ** (self.r if r is None else r)

    def eps0(self, alpha_tail: float) -> float:
        e = alpha_tail - 1 - self.beta
        if e <= 0:
            raise ValueError(f"need beta < alpha - 1 (alpha={alpha_tail}, beta={self.beta})")
        return e

    def with_r(self, r: int) -> "MultiscaleParams":
        return MultiscaleParams(self.beta, r, self.k, self.c, self.eps)


def _box_lattice(d: int, box) -> Lattice:
    if isinstance(box, Lattice):
        return box
    if np.isscalar(box):
        return Lattice((-int(box),) * d, (int(box),) * d)
    lo, hi = box
    return Lattice(tuple(np.broadcast_to(lo, (d,))), tuple(np.broadcast_to(hi, (d,))))


# ---- survival --------------------------------------------------------------

def survival_indicators(law, lams, d, box, cap, n, master_seed, lambda_max=None, threads=1) -> np.ndarray:
    """``(n, len(lams))`` booleans: replicate i still alive at ``cap`` under rate lams[j]."""
    lams = [float(v) for v in np.atleast_1d(lams)]
    lattice = _box_lattice(d, box)
    lmax = max(lams) if lambda_max is None else float(lambda_max)
    origin = (0,) * lattice.d

    def one(i):
        system = build_harris(lattice, (0.0, cap), law, lmax, replicate_seed(master_seed, OP_SURVIVAL, i))
        return [isinstance(survival_time(system, lam, origin, cap), Censored) for lam in lams]

    return np.array(run_replicates(one, n, threads), dtype=bool).reshape(n, len(lams))


def estimate_survival(law: InterarrivalLaw, lam, d: int, box, cap: float, n: int, master_seed: int,
                      lambda_max: float | None = None, threads: int = 1):
    """Fraction of replicates whose single-origin infection outlives ``cap``.

    ``lam`` may be a grid; replicates share one system across the grid
    (built at ``lambda_max``, default the largest rate), so estimates are
    monotone in the rate.  Returns one :class:`Estimate` per rate.
    """
    ind = survival_indicators(law, lam, d, box, cap, n, master_seed, lambda_max, threads)
    out = [Estimate.proportion(ind[:, j], master_seed) for j in range(ind.shape[1])]
    return out[0] if np.isscalar(lam) else out


# ---- crossing probabilities P_r ---------------------------------------------

def default_start_policies(r: int) -> list[StartPolicy]:
    return [StartPolicy()] + [StartPolicy.uniform(2.0 ** (r - q)) for q in (2, 1, 0)]


@dataclass(frozen=True)
class PrResult:
    r: int
    best: Estimate
    best_policy: str
    per_policy: dict

    def to_dict(self):
        return {"r": self.r, "best": self.best.to_dict(), "best_policy": self.best_policy,
                "per_policy": {k: v.to_dict() for k, v in self.per_policy.items()}}


def pr_indicators(params: MultiscaleParams, law, lam, n, policy: StartPolicy, master_seed, policy_index=0,
                  lambda_max=None, threads=1) -> np.ndarray:
    lams = [float(v) for v in np.atleast_1d(lam)]
    lmax = max(lams) if lambda_max is None else float(lambda_max)
    W, length = params.width(), params.length()
    lattice = Lattice.interval(0, W)
    rect = SpaceTimeRect.interval(0, W, 0.0, length)

    def one(i):
        seed = replicate_seed(master_seed, OP_PR, i, params.r, policy_index)
        system = build_harris(lattice, (0.0, length), law, lmax, seed, policy)
        return [has_spatial_crossing(system, v, rect) or has_temporal_crossing(system, v, rect) for v in lams]

    return np.array(run_replicates(one, n, threads), dtype=bool).reshape(n, len(lams))


def estimate_Pr(params: MultiscaleParams, law: InterarrivalLaw, lam: float, n: int,
                start_policies: list | None = None, master_seed: int = 0,
                lambda_max: float | None = None, threads: int = 1) -> PrResult:
    """Spatial-or-temporal crossing frequency of ``[0, W] x [0, 2^r]``, maximized over start policies."""
    policies = start_policies if start_policies is not None else default_start_policies(params.r)
    per = {}
    for j, pol in enumerate(policies):
        ind = pr_indicators(params, law, lam, n, pol, master_seed, j, lambda_max, threads)[:, 0]
        per[pol.label()] = Estimate.proportion(ind, master_seed)
    best = max(per, key=lambda k: per[k].mean)
    return PrResult(params.r, per[best], best, per)


# ---- branching comparison ---------------------------------------------------

@dataclass(frozen=True)
class BranchingBound:
    C: Estimate
    lambda0: float
    lambda0_lo: float
    lambda0_hi: float
    t_grid: tuple
    per_t: tuple

    def to_dict(self):
        return {"C": self.C.to_dict(), "lambda0": self.lambda0, "lambda0_lo": self.lambda0_lo,
                "lambda0_hi": self.lambda0_hi, "t_grid": list(self.t_grid),
                "per_t": [e.to_dict() for e in self.per_t]}


def straddle_lengths(law: InterarrivalLaw, t_grid, n: int, rng) -> np.ndarray:
    """``(n, len(t_grid))`` lengths of the renewal interval containing each t, trains started at 0."""
    t_grid = np.asarray(t_grid, dtype=float)
    t_max = float(t_grid.max())
    ptr, marks = sample_marks(law, np.zeros(n), t_max, rng)
    out = np.empty((n, t_grid.size))
    for i in range(n):
        row = np.concatenate(([0.0], marks[ptr[i]:ptr[i + 1]]))
        age = t_max - row[-1]
        # the interarrival covering t_max, conditioned to outlast its age
        tail = float(law.isf((1.0 - rng.random()) * float(law.sf(age))))
        row = np.append(row, row[-1] + max(tail, age + np.finfo(float).eps * max(1.0, t_max)))
        j = np.searchsorted(row, t_grid, side="right")
        out[i] = row[j] - row[j - 1]
    return out


def branching_bound(law: InterarrivalLaw, d: int, t_grid, n: int, master_seed: int) -> BranchingBound:
    """Monte Carlo bound on E|I_t| over ``t_grid`` and the implied rate ``1 / (2 C d)``."""
    if not law.has_finite_moment(2):
        raise ValueError(f"{law!r} has an infinite second moment; the branching bound needs it finite")
    rng = np.random.default_rng(replicate_seed(master_seed, OP_BRANCHING, 0))
    lengths = straddle_lengths(law, t_grid, n, rng)
    per_t = tuple(Estimate.sample_mean(lengths[:, j], master_seed) for j in range(lengths.shape[1]))
    best = max(per_t, key=lambda e: e.mean)
    lam0 = 1.0 / (2 * best.mean * d)
    lam_lo = 1.0 / (2 * best.ci_hi * d) if best.ci_hi > 0 else math.inf
    lam_hi = 1.0 / (2 * best.ci_lo * d) if best.ci_lo > 0 else math.inf
    return BranchingBound(best, lam0, lam_lo, lam_hi, tuple(float(t) for t in t_grid), per_t)


@dataclass(frozen=True)
class GenerationCensus:
    intervals: np.ndarray
    arrows: np.ndarray

    @property
    def total_intervals(self) -> int:
        return int(self.intervals.sum())

    @property
    def ratios(self) -> np.ndarray:
        """Interval count of generation g+1 over generation g."""
        a = self.intervals.astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(a[:-1] > 0, a[1:] / a[:-1], np.nan)

    def to_dict(self):
        return {"intervals": self.intervals.tolist(), "arrows": self.arrows.tolist(),
                "total_intervals": self.total_intervals}


def generation_census(system, lam: float, origin=0, t0: float = 0.0, cap: float | None = None) -> GenerationCensus:
    """Per-generation counts of infected intervals and of arrows they emit, first-infection coding."""
    cap = system.t_hi if cap is None else cap
    region = SpaceTimeRect(system.lattice.lower, system.lattice.upper, t0, cap)
    iset = propagate(system, lam, SeedSet.point(origin, t0), region)
    g = iset.generation
    size = int(g.max()) + 1 if g.size else 1
    return GenerationCensus(np.bincount(g, minlength=size), np.bincount(g, weights=iset.emitted, minlength=size).astype(np.int64))


@dataclass(frozen=True)
class CensusCheck:
    lam: float
    d: int
    bound: float
    mean_intervals: tuple
    ratio: tuple
    ratio_se: tuple
    arrow_ratio: tuple
    arrow_ratio_se: tuple
    holds: tuple

    def to_dict(self):
        return asdict(self)


def _ratio_of_means(num, den):
    mn, md = num.mean(), den.mean()
    if md == 0:
        return math.nan, math.nan
    n = num.size
    cov = np.cov(num, den, ddof=1) if n > 1 else np.zeros((2, 2))
    var = (cov[0, 0] / md ** 2 - 2 * mn * cov[0, 1] / md ** 3 + mn ** 2 * cov[1, 1] / md ** 4) / n
    return float(mn / md), math.sqrt(max(float(var), 0.0))


def census_check(law, lam, d, box, cap, n, master_seed, C: float, generations: int = 3,
                 threads: int = 1) -> CensusCheck:
    """Compare per-generation growth with the branching bound ``2 C d lam``.

    ``holds[g]`` is True when the interval-count ratio for g -> g+1 is at
    most the bound plus three standard errors.
    """
    lattice = _box_lattice(d, box)
    origin = (0,) * lattice.d

    def one(i):
        system = build_harris(lattice, (0.0, cap), law, lam, replicate_seed(master_seed, OP_CENSUS, i))
        c = generation_census(system, lam, origin)
        iv = np.zeros(generations + 1, np.int64)
        ar = np.zeros(generations + 1, np.int64)
        m = min(generations + 1, c.intervals.size)
        iv[:m] = c.intervals[:m]
        ar[:m] = c.arrows[:m]
        return iv, ar

    res = run_replicates(one, n, threads)
    iv = np.array([r[0] for r in res], dtype=float)
    ar = np.array([r[1] for r in res], dtype=float)
    bound = 2 * C * d * lam
    ratio, ratio_se, aratio, aratio_se, holds = [], [], [], [], []
    for g in range(generations):
        r, se = _ratio_of_means(iv[:, g + 1], iv[:, g])
        a, ase = _ratio_of_means(ar[:, g], iv[:, g])
        ratio.append(float(r))
        ratio_se.append(se)
        aratio.append(float(a))
        aratio_se.append(ase)
        holds.append(bool(math.isnan(r) or r <= bound + 3 * se))
    return CensusCheck(float(lam), d, bound, tuple(iv.mean(axis=0).tolist()), tuple(ratio), tuple(ratio_se),
                       tuple(aratio), tuple(aratio_se), tuple(holds))


# ---- critical value bracket -------------------------------------------------

@dataclass(frozen=True)
class LambdaBracket:
    status: str
    lam_lo: float | None
    lam_hi: float | None
    probes: tuple
    estimates: tuple
    theta_lo: float
    theta_hi: float

    def require(self) -> "LambdaBracket":
        if self.status != "resolved":
            raise BracketNotFound(f"no bracket found ({self.status}) with thresholds "
                                  f"{self.theta_lo}/{self.theta_hi} over probes {list(self.probes)}")
        return self

    def to_dict(self):
        return {"status": self.status, "lam_lo": self.lam_lo, "lam_hi": self.lam_hi,
                "probes": list(self.probes), "estimates": [e.to_dict() for e in self.estimates],
                "theta_lo": self.theta_lo, "theta_hi": self.theta_hi}


class BracketNotFound(RuntimeError):
    pass


def replicate_threshold(system, probes, origin, cap) -> int:
    """Index of the smallest probe at which the replicate survives to ``cap`` (len(probes) if none)."""
    lo, hi = 0, len(probes)
    while lo < hi:
        mid = (lo + hi) // 2
        if isinstance(survival_time(system, probes[mid], origin, cap), Censored):
            hi = mid
        else:
            lo = mid + 1
    return lo


def estimate_lambda_c(law, d, box, cap, n, theta_lo=0.01, theta_hi=0.2, probes=None, master_seed=0,
                      threads=1) -> LambdaBracket:
    """Finite-volume bracket for the critical rate from coupled survival estimates.

    Each replicate is one system at ``lambda_max = max(probes)``; survival is
    monotone in the rate on it, so a bisection over the sorted probes finds
    the replicate's threshold and the survival estimate at every probe
    follows.  ``lam_lo`` is the largest probe whose interval lies below
    ``theta_lo``; ``lam_hi`` the smallest one whose interval lies above
    ``theta_hi``.
    """
    if not theta_lo < theta_hi:
        raise ValueError("need theta_lo < theta_hi")
    probes = sorted(float(p) for p in (probes if probes is not None else np.linspace(0.0, 4.0, 17)))
    if probes[0] < 0:
        raise ValueError("probes must be nonnegative")
    lattice = _box_lattice(d, box)
    origin = (0,) * lattice.d

    def one(i):
        system = build_harris(lattice, (0.0, cap), law, probes[-1], replicate_seed(master_seed, OP_LAMBDA_C, i))
        return replicate_threshold(system, probes, origin, cap)

    thr = np.array(run_replicates(one, n, threads))
    ests = tuple(Estimate.proportion(thr <= j, master_seed) for j in range(len(probes)))
    below = [j for j, e in enumerate(ests) if e.ci_hi < theta_lo]
    above = [j for j, e in enumerate(ests) if e.ci_lo > theta_hi]
    lam_lo = probes[max(below)] if below else None
    lam_hi = probes[min(above)] if above else None
    if lam_lo is not None and lam_hi is not None:
        status = "resolved"
    elif lam_hi is not None and min(above) == 0:
        status = "degenerate"
    else:
        status = "unresolved"
    return LambdaBracket(status, lam_lo, lam_hi, tuple(probes), ests, theta_lo, theta_hi)


# ---- event catalog for correlation checks -----------------------------------

def event_extent(desc: dict) -> tuple[int, int, float]:
    """Site range and latest time an event descriptor touches: ``(x_lo, x_hi, t_max)``."""
    kind = desc["kind"]
    if kind in ("temporal", "spatial", "windowed"):
        a, b, S, T = desc["rect"]
        return int(a), int(b), float(T)
    if kind == "mark_free":
        S, T = desc["window"]
        return int(desc["site"]), int(desc["site"]), float(T)
    if kind == "chain":
        x0 = int(desc.get("x0", 0))
        _, (_, d1) = chain_windows(int(desc["j"]), desc["c"], desc["eps"], desc["T"], desc.get("origin_time", 0.0))
        return x0, x0 + int(desc["L"]), d1
    raise ValueError(f"unknown event kind {kind!r}")


def evaluate_event(system, lam, desc: dict) -> bool:
    kind = desc["kind"]
    if kind == "temporal":
        return has_temporal_crossing(system, lam, SpaceTimeRect.interval(*desc["rect"]))
    if kind == "spatial":
        return has_spatial_crossing(system, lam, SpaceTimeRect.interval(*desc["rect"]))
    if kind == "windowed":
        return windowed_temporal_crossing(system, lam, SpaceTimeRect.interval(*desc["rect"]), int(desc["w"]))
    if kind == "mark_free":
        S, T = desc["window"]
        x = int(desc["site"])
        return has_temporal_crossing(system, lam, SpaceTimeRect.interval(x, x, S, T))
    if kind == "chain":
        j = int(desc["j"])
        res = detect_chain(system, lam, j, desc["c"], desc["eps"], int(desc["L"]), desc["T"],
                           desc.get("origin_time", 0.0), int(desc.get("x0", 0)))
        return bool(res.events[j])
    raise ValueError(f"unknown event kind {kind!r}")


def chain_event(j: int, c: float, eps: float, L: int, T: float, origin_time: float = 0.0) -> dict:
    return {"kind": "chain", "j": j, "c": c, "eps": eps, "L": L, "T": T, "origin_time": origin_time}


@dataclass(frozen=True)
class FKGReport:
    p_a: Estimate
    p_b: Estimate
    p_ab: Estimate
    diff: float
    ci_lo: float
    ci_hi: float
    violation: bool

    def to_dict(self):
        return {"p_a": self.p_a.to_dict(), "p_b": self.p_b.to_dict(), "p_ab": self.p_ab.to_dict(),
                "diff": self.diff, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi, "violation": self.violation}


def covariance_interval(a: np.ndarray, b: np.ndarray, z: float = Z95) -> tuple[float, float, float]:
    """``P(AB) - P(A)P(B)`` with a delta-method interval."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.size
    pa, pb = a.mean(), b.mean()
    diff = float((a * b).mean() - pa * pb)
    psi = a * b - pb * a - pa * b
    se = float(psi.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return diff, diff - z * se, diff + z * se


def _events_lattice(specs):
    ext = [event_extent(s) for s in specs]
    lo = min(e[0] for e in ext)
    hi = max(e[1] for e in ext)
    return Lattice.interval(lo, hi), max(e[2] for e in ext)


def check_fkg(law: InterarrivalLaw, lam: float, event_pair, n: int, master_seed: int,
              threads: int = 1) -> FKGReport:
    """Estimate ``P(A and B) - P(A) P(B)`` for two increasing events; flag only a CI-excluded negative."""
    if not law.satisfies_hypothesis_A:
        raise HypothesisAError(f"{law!r} does not satisfy Hypothesis A")
    desc_a, desc_b = (event_pair["a"], event_pair["b"]) if isinstance(event_pair, dict) else event_pair
    lattice, t_max = _events_lattice([desc_a, desc_b])

    def one(i):
        system = build_harris(lattice, (0.0, t_max), law, lam, replicate_seed(master_seed, OP_FKG, i))
        return evaluate_event(system, lam, desc_a), evaluate_event(system, lam, desc_b)

    res = np.array(run_replicates(one, n, threads), dtype=bool).reshape(n, 2)
    diff, lo, hi = covariance_interval(res[:, 0], res[:, 1])
    return FKGReport(Estimate.proportion(res[:, 0], master_seed), Estimate.proportion(res[:, 1], master_seed),
                     Estimate.proportion(res[:, 0] & res[:, 1], master_seed), diff, lo, hi, bool(hi < 0))


@dataclass(frozen=True)
class BuildChainReport:
    m: int
    p_all: Estimate
    p_each: tuple
    p_temporal: Estimate | None
    product_lower: float
    lemma_lower: float
    corollary_lower: float | None
    product_holds: bool
    lemma_holds: bool
    corollary_holds: bool

    @property
    def violation(self) -> bool:
        return not (self.product_holds and self.lemma_holds and self.corollary_holds)

    def to_dict(self):
        return {"m": self.m, "p_all": self.p_all.to_dict(), "p_each": [e.to_dict() for e in self.p_each],
                "p_temporal": self.p_temporal.to_dict() if self.p_temporal else None,
                "product_lower": self.product_lower, "lemma_lower": self.lemma_lower,
                "corollary_lower": self.corollary_lower, "product_holds": self.product_holds,
                "lemma_holds": self.lemma_holds, "corollary_holds": self.corollary_holds,
                "violation": self.violation}


def check_build_chain(law: InterarrivalLaw, lam: float, m: int, c: float, eps: float, L: int, T: float,
                      n: int, master_seed: int = 0, threads: int = 1) -> BuildChainReport:
    """Check ``P(A_0..A_m) >= prod P(A_i) >= P(A_0)^(m+1)`` and the temporal-crossing
    bound ``P(A_0)^((8/3) m + 2)`` for ``[0, L] x [eps, eps + m T]``.

    Lower bounds are evaluated at the lower confidence limits of the factors
    and a bound counts as holding when the upper limit of the left side
    reaches it.
    """
    if not law.satisfies_hypothesis_A:
        raise HypothesisAError(f"{law!r} does not satisfy Hypothesis A")
    _, (_, chain_end) = chain_windows(m, c, eps, T)
    t_max = max(chain_end, eps + m * T)
    lattice = Lattice.interval(0, L)

    def one(i):
        system = build_harris(lattice, (0.0, t_max), law, lam, replicate_seed(master_seed, OP_CHAIN, i))
        res = detect_chain(system, lam, m, c, eps, L, T)
        if res.truncated:
            raise RuntimeError("chain exceeds the horizon")
        temporal = m >= 1 and has_temporal_crossing(system, lam, SpaceTimeRect.interval(0, L, eps, eps + m * T))
        return res.events + [temporal]

    res = np.array(run_replicates(one, n, threads), dtype=bool).reshape(n, m + 2)
    each = tuple(Estimate.proportion(res[:, j], master_seed) for j in range(m + 1))
    p_all = Estimate.proportion(res[:, :m + 1].all(axis=1), master_seed)
    product_lower = float(np.prod([e.ci_lo for e in each]))
    lemma_lower = each[0].ci_lo ** (m + 1)
    p_temp = Estimate.proportion(res[:, m + 1], master_seed) if m >= 1 else None
    cor_lower = each[0].ci_lo ** (8 * m / 3 + 2) if m >= 1 else None
    return BuildChainReport(
        m, p_all, each, p_temp, product_lower, lemma_lower, cor_lower,
        p_all.ci_hi >= product_lower, p_all.ci_hi >= lemma_lower,
        True if p_temp is None else p_temp.ci_hi >= cor_lower)


# ---- gap events and the recursion --------------------------------------------

@dataclass(frozen=True)
class GapScan:
    n_values: tuple
    estimates: tuple
    slope: float | None
    intercept: float | None
    eps0: float
    censored: bool

    def to_dict(self):
        return {"n_values": list(self.n_values), "estimates": [e.to_dict() for e in self.estimates],
                "slope": self.slope, "intercept": self.intercept, "eps0": self.eps0, "censored": self.censored}


def gap_indicators(params: MultiscaleParams, law, n_value: int, nrep: int, master_seed: int, threads=1) -> np.ndarray:
    """Replicate indicators of ``T_n <= 2^k`` for renewal trains started at 0."""
    k = params.k
    W = math.floor(2.0 ** (n_value * params.beta))
    block = 2.0 ** (n_value - k)
    last_odd = 2 ** k if (2 ** k) % 2 else 2 ** k - 1
    horizon = last_odd * block
    lattice = Lattice.interval(0, W)

    def one(i):
        system = build_harris(lattice, (0.0, horizon), law, 0.0, replicate_seed(master_seed, OP_GAP, i, n_value))
        return stopping_index_Tn(system, n_value, k, params.beta, max_index=2 ** k) <= 2 ** k

    return np.array(run_replicates(one, nrep, threads), dtype=bool)


def fit_log2_slope(xs, freqs):
    xs = np.asarray(xs, dtype=float)
    f = np.asarray(freqs, dtype=float)
    ok = f > 0
    if ok.sum() < 2:
        return None, None
    slope, intercept = np.polyfit(xs[ok], np.log2(f[ok]), 1)
    return float(slope), float(intercept)


def estimate_gap_prob(params: MultiscaleParams, law: InterarrivalLaw, n_values, nrep: int,
                      master_seed: int = 0, threads: int = 1) -> GapScan:
    """Frequency of ``T_n <= 2^k`` per ``n`` and the least-squares slope of its log2 against n."""
    alpha = getattr(law, "alpha", math.inf)
    eps0 = params.eps0(alpha) if math.isfinite(alpha) else math.inf
    ests = tuple(Estimate.proportion(gap_indicators(params, law, nv, nrep, master_seed, threads), master_seed)
                 for nv in n_values)
    censored = any(e.mean == 0 for e in ests)
    slope, icpt = fit_log2_slope(n_values, [e.mean for e in ests])
    return GapScan(tuple(int(v) for v in n_values), ests, slope, icpt, eps0, censored)


@dataclass(frozen=True)
class RecursionReport:
    n: int
    k: int
    P_n: PrResult
    P_nk: PrResult
    P_nk1: PrResult
    gap: Estimate
    C2: float
    C2_lo: float
    C2_hi: float

    def to_dict(self):
        return {"n": self.n, "k": self.k, "P_n": self.P_n.to_dict(), "P_nk": self.P_nk.to_dict(),
                "P_nk1": self.P_nk1.to_dict(), "gap": self.gap.to_dict(),
                "C2": self.C2, "C2_lo": self.C2_lo, "C2_hi": self.C2_hi}


def _safe_ratio(num, den):
    num = max(num, 0.0)
    if den <= 0:
        return 0.0 if num == 0 else math.inf
    return num / den


def check_recursion(params: MultiscaleParams, law: InterarrivalLaw, lam: float, n: int, nrep: int,
                    master_seed: int = 0, start_policies=None, threads: int = 1) -> RecursionReport:
    """Smallest constant making ``P_n <= gap + C (P_{n-k-1} v P_{n-k})^2`` hold at the point estimates.

    Purely diagnostic; the interval ``[C2_lo, C2_hi]`` comes from interval
    arithmetic on the four estimates.
    """
    k = params.k
    if not n > k + 1:
        raise ValueError("need n > k + 1")

    def pr(r):
        p = params.with_r(r)
        pols = start_policies if start_policies is not None else default_start_policies(r)
        return estimate_Pr(p, law, lam, nrep, pols, master_seed, threads=threads)

    P_n, P_nk, P_nk1 = pr(n), pr(n - k), pr(n - k - 1)
    gap = Estimate.proportion(gap_indicators(params, law, n, nrep, master_seed, threads), master_seed)
    den = max(P_nk.best.mean, P_nk1.best.mean) ** 2
    c2 = _safe_ratio(P_n.best.mean - gap.mean, den)
    c2_lo = _safe_ratio(P_n.best.ci_lo - gap.ci_hi, max(P_nk.best.ci_hi, P_nk1.best.ci_hi) ** 2)
    c2_hi = _safe_ratio(P_n.best.ci_hi - gap.ci_lo, max(P_nk.best.ci_lo, P_nk1.best.ci_lo) ** 2)
    return RecursionReport(n, k, P_n, P_nk, P_nk1, gap, c2, c2_lo, c2_hi)


__all__ = [
    "Estimate", "MultiscaleParams", "wilson_interval", "run_replicates", "replicate_seed",
    "estimate_survival", "survival_indicators", "estimate_Pr", "pr_indicators", "PrResult",
    "default_start_policies", "branching_bound", "BranchingBound", "straddle_lengths",
    "generation_census", "GenerationCensus", "census_check", "CensusCheck", "estimate_lambda_c",
    "LambdaBracket", "BracketNotFound", "check_fkg", "FKGReport", "covariance_interval", "chain_event",
    "evaluate_event", "event_extent", "check_build_chain", "BuildChainReport", "estimate_gap_prob",
    "gap_indicators", "GapScan", "fit_log2_slope", "check_recursion", "RecursionReport",
]
