import math

import numpy as np
import pytest
from conftest import make_h1, random_small_system
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from rcpsim.estimators import (OP_PR, OP_SURVIVAL, BracketNotFound, Estimate, MultiscaleParams, branching_bound,
                               census_check, chain_event, check_build_chain, check_fkg, check_recursion,
                               covariance_interval, estimate_gap_prob, estimate_lambda_c, estimate_Pr,
                               estimate_survival, fit_log2_slope, generation_census, pr_indicators, replicate_seed,
                               run_replicates, survival_indicators, wilson_interval)
from rcpsim.graphical import Lattice, StartPolicy, build_harris
from rcpsim.renewal import Exponential, HypothesisAError, ShiftedPareto, UniformLaw

# ---- intervals ------------------------------------------------------------------


def test_wilson_zero_successes_closed_form():
    z = stats.norm.ppf(0.975)
    for n in (10, 50, 1000):
        lo, hi = wilson_interval(0, n)
        assert lo == 0.0 and hi == pytest.approx(z * z / (n + z * z), rel=1e-12)


@given(n=st.integers(1, 5000), frac=st.floats(0, 1))
def test_proportion_interval_contains_mean(n, frac):
    k = int(round(frac * n))
    e = Estimate.proportion(np.arange(n) < k)
    assert 0.0 <= e.ci_lo <= e.mean <= e.ci_hi <= 1.0


@given(xs=st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=200))
def test_mean_interval_contains_mean(xs):
    e = Estimate.sample_mean(xs)
    assert e.ci_lo <= e.mean + 1e-9 * max(1.0, abs(e.mean)) and e.mean <= e.ci_hi + 1e-9 * max(1.0, abs(e.mean))


def test_t_interval_frozen_value():
    e = Estimate.sample_mean([1.0, 2.0, 3.0, 4.0])
    assert e.mean == 2.5
    assert (e.ci_lo, e.ci_hi) == pytest.approx((0.445739743239121, 4.554260256760879), rel=1e-12)


@pytest.mark.parametrize("p", [0.01, 0.1, 0.5])
def test_wilson_calibration(p):
    n, trials = 500, 1000
    exact = sum(stats.binom.pmf(k, n, p) for k in range(n + 1)
                if wilson_interval(k, n)[0] <= p <= wilson_interval(k, n)[1])
    assert exact >= 0.93
    rng = np.random.default_rng(123)
    ks = rng.binomial(n, p, trials)
    cover = np.mean([wilson_interval(int(k), n)[0] <= p <= wilson_interval(int(k), n)[1] for k in ks])
    assert cover >= 0.93


def test_covariance_interval_matches_direct_formula():
    rng = np.random.default_rng(3)
    a = rng.random(5000) < 0.3
    b = (rng.random(5000) < 0.5) | a
    diff, lo, hi = covariance_interval(a, b)
    assert diff == pytest.approx(np.cov(a, b, ddof=0)[0, 1], abs=1e-12)
    assert lo < diff < hi


def test_run_replicates_order_and_threads():
    serial = run_replicates(lambda i: i * i, 50, 1)
    assert serial == [i * i for i in range(50)] == run_replicates(lambda i: i * i, 50, 6)


# ---- survival ---------------------------------------------------------------------


def test_survival_rate_zero_is_first_mark_beyond_cap():
    law, n, cap, seed = ShiftedPareto(1.5, 1.0), 200, 5.0, 31
    est = estimate_survival(law, 0.0, 1, 3, cap, n, seed)
    lattice = Lattice.interval(-3, 3)
    expect = 0
    for i in range(n):
        sys_ = build_harris(lattice, (0.0, cap), law, 0.0, replicate_seed(seed, OP_SURVIVAL, i))
        expect += sys_.marks_of(lattice.index(0)).size == 0
    assert est.mean == expect / n and est.mean > 0


def test_survival_grid_monotone_exactly():
    ind = survival_indicators(Exponential(1.0), [0.5, 1.0, 2.0], 1, 30, 30.0, 100, 8)
    assert np.all(np.diff(ind.astype(int), axis=1) >= 0)
    ests = estimate_survival(Exponential(1.0), [0.5, 1.0, 2.0], 1, 30, 30.0, 100, 8)
    assert ests[0].mean <= ests[1].mean <= ests[2].mean


def test_survival_deterministic_and_thread_independent():
    args = (ShiftedPareto(1.5, 1.0), [0.5, 1.5], 1, 15, 15.0, 60, 4)
    a = estimate_survival(*args, threads=1)
    b = estimate_survival(*args, threads=4)
    assert a == b == estimate_survival(*args)


def test_survival_in_two_dimensions():
    e = estimate_survival(Exponential(1.0), 0.0, 2, 2, 3.0, 50, 1)
    assert 0.0 < e.mean < 0.2  # only the origin's first mark matters


# ---- crossing probabilities ---------------------------------------------------------


def test_Pr_rate_zero_is_mark_free_timeline():
    params = MultiscaleParams(beta=0.5, r=4)
    law, n, seed = ShiftedPareto(1.5, 1.0), 150, 9
    res = estimate_Pr(params, law, 0.0, n, [StartPolicy()], seed)
    W, length = params.width(), params.length()
    expect = 0
    for i in range(n):
        sys_ = build_harris(Lattice.interval(0, W), (0.0, length), law, 0.0, replicate_seed(seed, OP_PR, i, 4, 0))
        expect += any(sys_.marks_of(x).size == 0 for x in range(W + 1))
    assert res.best.mean == expect / n and res.best_policy == "all-at-0"


def test_Pr_coupled_in_rate():
    params = MultiscaleParams(beta=0.5, r=5)
    ind = pr_indicators(params, ShiftedPareto(1.5, 1), [0.1, 0.5, 1.0, 2.0], 80, StartPolicy.uniform(8), 2)
    assert np.all(np.diff(ind.astype(int), axis=1) >= 0)


def test_Pr_reports_every_policy():
    params = MultiscaleParams(beta=0.5, r=4)
    res = estimate_Pr(params, ShiftedPareto(2.0, 1.0), 0.3, 40, master_seed=1)
    assert set(res.per_policy) == {"all-at-0", "uniform-offset-4", "uniform-offset-8", "uniform-offset-16"}
    assert res.best.mean == max(e.mean for e in res.per_policy.values())


def test_multiscale_params():
    p = MultiscaleParams(beta=0.5, r=10, k=3)
    assert p.width() == 32 and p.length() == 1024.0 and p.eps0(2.0) == 0.5
    with pytest.raises(ValueError):
        p.eps0(1.4)
    with pytest.raises(ValueError):
        MultiscaleParams(beta=1.0)


# ---- branching comparison -----------------------------------------------------------


def test_branching_bound_exponential():
    grid = [0.5, 1.0, 2.0, 4.0, 8.0]
    bb = branching_bound(Exponential(1.0), 1, grid, 40_000, 5)
    assert abs(bb.C.mean - 2.0) < 0.05 and abs(bb.lambda0 - 0.25) < 0.01
    for t, e in zip(grid, bb.per_t):
        assert abs(e.mean - (2 - math.exp(-t))) < 3 * e.se
    assert bb.lambda0_lo <= bb.lambda0 <= bb.lambda0_hi


@pytest.mark.parametrize("rate", [0.5, 2.0])
def test_branching_bound_envelope_other_rates(rate):
    bb = branching_bound(Exponential(rate), 1, [0.5, 1.0, 4.0, 16.0], 40_000, 6)
    assert bb.C.mean <= 2 / rate + 3 * bb.C.se


def test_branching_bound_uniform_matches_renewal_equation():
    # E|I_t| for Uniform(0, 2) at t in {0.5, 1, 2, 4, 8} from the renewal equation; max at t = 1
    oracle_C = 1.3512787121256913
    bb = branching_bound(UniformLaw(2.0), 1, [0.5, 1.0, 2.0, 4.0, 8.0], 40_000, 7)
    assert bb.C.ci_lo - 2 * bb.C.se <= oracle_C <= bb.C.ci_hi + 2 * bb.C.se


def test_branching_bound_needs_second_moment():
    with pytest.raises(ValueError, match="second moment"):
        branching_bound(ShiftedPareto(1.5, 1.0), 1, [1.0], 10, 0)


def test_census_rate_zero_and_h1():
    sys_ = build_harris(Lattice.interval(-5, 5), (0.0, 20.0), Exponential(), 1.0, 3)
    c = generation_census(sys_, 0.0, 0)
    assert c.intervals.tolist() == [1] and c.arrows.tolist() == [0]
    c = generation_census(make_h1(), 1.0, 0)
    assert c.intervals.tolist() == [1, 1] and c.arrows.tolist() == [1, 0] and c.total_intervals == 2


@given(seed=st.integers(0, 2 ** 32 - 1), lam=st.floats(0, 1))
def test_census_branching_property(seed, lam):
    rng = np.random.default_rng(seed)
    sys_, _, _ = random_small_system(rng, n_sites=4)
    c = generation_census(sys_, lam, 1, float(rng.uniform(0, 3)))
    zero = np.flatnonzero(c.intervals == 0)
    assert zero.size == 0 or np.all(c.intervals[zero[0]:] == 0)


def test_census_check_small():
    chk = census_check(Exponential(1.0), 0.1, 1, 30, 30.0, 200, 2, C=2.0)
    assert all(chk.holds) and chk.bound == pytest.approx(0.4)
    assert chk.mean_intervals[0] == 1.0


# ---- critical value bracket ------------------------------------------------------------


def test_lambda_c_bracket_exponential():
    bb = branching_bound(Exponential(1.0), 1, [0.5, 1, 2, 4, 8], 20_000, 1)
    br = estimate_lambda_c(Exponential(1.0), 1, 40, 40.0, 400, probes=np.arange(0.0, 4.01, 0.25), master_seed=2)
    assert br.status == "resolved" and br.lam_lo < br.lam_hi
    assert br.lam_hi > bb.lambda0
    assert br.estimates[0].mean == 0.0
    means = [e.mean for e in br.estimates]
    assert means == sorted(means)
    br.require()


def test_lambda_c_degenerate_for_long_lived_timelines():
    br = estimate_lambda_c(ShiftedPareto(5.0, 100.0), 1, 20, 20.0, 200, probes=[0.0, 0.5, 1.0], master_seed=3)
    assert br.status == "degenerate" and br.lam_hi == 0.0
    with pytest.raises(BracketNotFound):
        br.require()


def test_lambda_c_impossible_thresholds():
    br = estimate_lambda_c(Exponential(1.0), 1, 10, 10.0, 50, theta_lo=0.0, theta_hi=1.0, probes=[0, 1, 2, 4],
                           master_seed=1)
    assert br.status == "unresolved"
    with pytest.raises(ValueError):
        estimate_lambda_c(Exponential(1.0), 1, 10, 10.0, 50, theta_lo=0.3, theta_hi=0.2)


# ---- correlation inequalities ------------------------------------------------------------


def test_fkg_identical_events():
    ev = chain_event(0, 2 / 3, 2.0, 2, 32.0)
    rep = check_fkg(ShiftedPareto(1.5, 1.0), 0.5, (ev, ev), 300, 1)
    p = rep.p_a.mean
    assert rep.diff == pytest.approx(p - p * p, abs=1e-12) and rep.diff >= 0 and not rep.violation


def test_fkg_independent_timelines_at_rate_zero():
    a = {"kind": "mark_free", "site": 0, "window": [0.0, 3.0]}
    b = {"kind": "mark_free", "site": 2, "window": [0.0, 3.0]}
    rep = check_fkg(ShiftedPareto(1.5, 1.0), 0.0, {"a": a, "b": b}, 2000, 5)
    assert rep.ci_lo <= 0.0 <= rep.ci_hi and not rep.violation
    assert 0.1 < rep.p_a.mean < 0.4


def test_fkg_event_catalog_and_law_check():
    a = {"kind": "temporal", "rect": [0, 3, 0.0, 10.0]}
    b = {"kind": "windowed", "rect": [0, 3, 0.0, 10.0], "w": 2}
    rep = check_fkg(ShiftedPareto(2.0, 1.0), 0.5, (a, b), 200, 2)
    assert not rep.violation and rep.p_ab.mean == rep.p_b.mean  # windowed implies full
    s = {"kind": "spatial", "rect": [0, 3, 0.0, 10.0]}
    assert not check_fkg(ShiftedPareto(2.0, 1.0), 0.5, (a, s), 200, 2).violation
    with pytest.raises(HypothesisAError):
        check_fkg(UniformLaw(2.0), 0.5, (a, a), 10, 0)


def test_build_chain_single_event():
    rep = check_build_chain(ShiftedPareto(2.0, 1.0), 0.5, 0, 2 / 3, 2.0, 2, 32.0, 300, 4)
    assert rep.p_all == rep.p_each[0] and rep.p_temporal is None and not rep.violation
    assert rep.product_lower == rep.lemma_lower


def test_build_chain_rate_zero_degenerate():
    rep = check_build_chain(ShiftedPareto(2.0, 1.0), 0.0, 2, 2 / 3, 2.0, 3, 32.0, 200, 4)
    assert rep.p_all.mean == 0 and all(e.mean == 0 for e in rep.p_each) and not rep.violation


def test_build_chain_small():
    rep = check_build_chain(ShiftedPareto(1.5, 1.0), 0.3, 2, 2 / 3, 2.0, 4, 32.0, 500, 6)
    assert not rep.violation


# ---- gaps and recursion -------------------------------------------------------------------


def test_gap_scan_exponential_decays_fast():
    scan = estimate_gap_prob(MultiscaleParams(beta=0.5, k=3), Exponential(1.0), [4, 5, 6], 2000, 1)
    assert scan.slope is not None and scan.slope < -2 and not scan.censored
    assert math.isinf(scan.eps0)


def test_gap_scan_censored_flag():
    scan = estimate_gap_prob(MultiscaleParams(beta=0.5, k=3), Exponential(1.0), [5, 8], 100, 1)
    assert scan.censored and scan.slope is None and scan.estimates[-1].mean == 0


def test_gap_scan_requires_tail_exponent_above_one_plus_beta():
    with pytest.raises(ValueError):
        estimate_gap_prob(MultiscaleParams(beta=0.5, k=3), ShiftedPareto(1.4, 1.0), [6], 10, 1)


def test_log2_fit():
    slope, icpt = fit_log2_slope([1, 2, 3], [0.5, 0.25, 0.125])
    assert slope == pytest.approx(-1.0) and icpt == pytest.approx(0.0, abs=1e-12)
    assert fit_log2_slope([1, 2], [0.5, 0.0]) == (None, None)


def test_recursion_rate_zero_and_domain():
    p = MultiscaleParams(beta=0.5, k=2)
    rep = check_recursion(p, ShiftedPareto(2.0, 1.0), 0.0, 6, 200, 3, [StartPolicy()])
    for e in (rep.P_n.best, rep.P_nk.best, rep.P_nk1.best, rep.gap):
        assert 0.0 <= e.ci_lo <= e.mean <= e.ci_hi <= 1.0
    assert rep.C2_lo <= rep.C2 <= rep.C2_hi or math.isinf(rep.C2_hi)
    with pytest.raises(ValueError):
        check_recursion(p, ShiftedPareto(2.0, 1.0), 0.0, 3, 10, 3)
