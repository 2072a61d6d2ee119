import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from rcpsim.renewal import (DEFAULT_EPS_H, Exponential, HazardField, HypothesisAError, RenewalTrain, ShiftedPareto,
                            TieError, UniformLaw, Weibull, coupled_trains, hazard, law_from_dict, sample_marks,
                            sample_train, sample_train_by_thinning, write_trains_csv)

DHR_LAWS = [Exponential(1.0), Exponential(3.0), ShiftedPareto(2.0, 1.0), ShiftedPareto(1.5, 1.0),
            ShiftedPareto(0.8, 2.0), Weibull(0.5, 1.0), Weibull(1.0, 2.0)]


@pytest.mark.parametrize("law,t,expected", [
    (Exponential(1.0), 7.3, 1.0),
    (ShiftedPareto(2.0, 1.0), 1.0, 1.0),
    (Weibull(0.5, 1.0), 4.0, 0.25),
])
def test_hazard_closed_forms(law, t, expected):
    assert hazard(law, t) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("law", DHR_LAWS + [UniformLaw(2.0), Weibull(2.0, 1.0)])
def test_hazard_is_density_over_survivor(law):
    t = np.linspace(0.05, 1.9, 40)
    assert np.allclose(law.hazard(t), law.pdf(t) / law.sf(t), rtol=1e-10)


def test_hazard_undefined_where_cdf_reaches_one():
    with pytest.raises(ValueError, match="F\\(t\\) = 1"):
        UniformLaw(2.0).hazard(2.0)
    with pytest.raises(ValueError):
        Exponential().hazard(-1.0)


@pytest.mark.parametrize("law", DHR_LAWS)
def test_hazard_nonincreasing_on_dense_grid(law):
    t = np.linspace(1e-6, 50.0, 5000)
    assert np.all(np.diff(law.hazard(t)) <= 1e-15)


@given(alpha=st.floats(0.2, 6.0), scale=st.floats(0.1, 10.0), s=st.floats(0, 100), dt=st.floats(0, 100))
def test_pareto_hazard_monotone_property(alpha, scale, s, dt):
    law = ShiftedPareto(alpha, scale)
    assert law.hazard(s) >= law.hazard(s + dt)


@given(shape=st.floats(0.1, 1.0), scale=st.floats(0.1, 10.0), s=st.floats(1e-3, 100), dt=st.floats(0, 100))
def test_weibull_dhr_hazard_monotone_property(shape, scale, s, dt):
    law = Weibull(shape, scale)
    assert law.satisfies_hypothesis_A
    assert law.hazard(s) >= law.hazard(s + dt) * (1 - 1e-12)


def test_hypothesis_A_flags():
    assert Exponential().satisfies_hypothesis_A
    assert ShiftedPareto(1.5, 1).satisfies_hypothesis_A
    assert Weibull(0.7, 1).satisfies_hypothesis_A and Weibull(1.0, 1).satisfies_hypothesis_A
    assert not Weibull(1.5, 1).satisfies_hypothesis_A
    assert not UniformLaw(1).satisfies_hypothesis_A


@pytest.mark.parametrize("law,finite2", [
    (Exponential(), True), (Weibull(0.5), True), (UniformLaw(2.0), True),
    (ShiftedPareto(2.5, 1), True), (ShiftedPareto(2.0, 1), False), (ShiftedPareto(1.5, 1), False),
])
def test_second_moment_flags(law, finite2):
    assert law.has_finite_moment(2) is finite2


@pytest.mark.parametrize("law", DHR_LAWS + [UniformLaw(2.0)])
def test_distribution_invariants(law):
    t = np.linspace(0, 200, 2001)
    F = law.cdf(t)
    assert F[0] == 0.0 and np.all(np.diff(F) >= 0) and np.all(law.pdf(t) >= 0)
    assert law.cdf(1e12) == pytest.approx(1.0, abs=1e-3)
    v = np.linspace(0.01, 1.0, 50)
    assert np.allclose(law.sf(law.isf(v)), v, rtol=1e-9)


def test_law_descriptor_round_trip():
    desc = {"kind": "shifted_pareto", "alpha": 1.5, "scale": 1.0}
    law = law_from_dict(desc)
    assert law == ShiftedPareto(1.5, 1.0) and law.to_dict() == desc
    with pytest.raises(ValueError, match="unknown law kind"):
        law_from_dict({"kind": "gamma"})
    with pytest.raises(ValueError, match="unexpected parameters"):
        law_from_dict({"kind": "exponential", "alpha": 2})


def test_direct_sampler_mean_interarrival():
    train = sample_train(Exponential(1.0), 0.0, 1e4, 3)
    assert abs(train.interarrivals.mean() - 1.0) < 0.05
    assert train.marks[0] > 0 and train.marks[-1] <= 1e4


def test_empty_window_and_determinism():
    assert len(sample_train(ShiftedPareto(1.5, 1), 5.0, 5.0, 1)) == 0
    a = sample_train(Weibull(0.5, 1), 0.0, 500.0, 42)
    b = sample_train(Weibull(0.5, 1), 0.0, 500.0, 42)
    assert a == b and np.array_equal(a.marks, b.marks)
    with pytest.raises(ValueError):
        sample_train(Exponential(), 2.0, 1.0, 0)


def test_train_rejects_ties_and_bad_marks():
    with pytest.raises(TieError):
        RenewalTrain(0.0, np.array([1.0, 1.0]), 5.0)
    with pytest.raises(ValueError):
        RenewalTrain(0.0, np.array([0.0, 1.0]), 5.0)


def test_sample_marks_matches_per_row_structure(rng):
    starts = np.array([0.0, -3.0, 2.0, 9.5])
    ptr, marks = sample_marks(ShiftedPareto(1.5, 1.0), starts, 10.0, rng)
    assert ptr[0] == 0 and ptr[-1] == marks.size
    for i, s in enumerate(starts):
        row = marks[ptr[i]:ptr[i + 1]]
        assert np.all(row > s) and np.all(row <= 10.0) and np.all(np.diff(row) > 0)


def thinned_interarrivals(law, n, seed):
    """``n`` consecutive interarrivals of one thinned train (i.i.d. by the restart property)."""
    field = HazardField.for_law(law, seed, 0)
    horizon = 4.0 * n * law.typical_interarrival()
    iv = sample_train_by_thinning(law, 0.0, horizon, field).interarrivals
    assert iv.size >= n
    return iv[:n]


@pytest.mark.parametrize("law", [Exponential(1.0), ShiftedPareto(1.5, 1.0)])
def test_thinning_matches_direct_sampler_ks(law):
    n = 20_000
    thin = thinned_interarrivals(law, n, 99)
    direct = law.sample(n, np.random.default_rng(5))
    assert stats.ks_2samp(thin, direct).pvalue > 0.01


def test_thinning_empty_field_gives_empty_train():
    field = HazardField.from_points([1.0, 2.0], [5.0, 5.0], u_cap=10.0)
    tr = sample_train_by_thinning(ShiftedPareto(2.0, 1.0), 0.0, 10.0, field)
    assert len(tr) == 0


def test_thinning_hand_field():
    # hazard 2/(1+t) restarted at each accepted mark
    field = HazardField.from_points([1.0, 1.5, 3.0], [0.9, 1.5, 0.4], u_cap=2.0)
    tr = sample_train_by_thinning(ShiftedPareto(2.0, 1.0), 0.0, 10.0, field)
    # 1.0: 0.9 <= h(1) = 1; 1.5: 1.5 > h(0.5) = 4/3; 3.0: 0.4 <= h(2) = 2/3
    assert tr.marks.tolist() == [1.0, 3.0]


def test_field_is_reproducible_and_poisson():
    f1 = HazardField(11, 3, 2.0)
    f2 = HazardField(11, 3, 2.0)
    t1, u1 = f1.points(0.0, 1000.0)
    t2, u2 = f2.points(500.0, 1000.0)
    sel = t1 >= 500.0
    assert np.array_equal(t1[sel], t2) and np.array_equal(u1[sel], u2)
    counts = [HazardField(s, 0, 1.0).points(0.0, 50.0)[0].size for s in range(400)]
    assert abs(np.mean(counts) - 50.0) < 3 * math.sqrt(50.0 / 400)
    assert np.all(u1 < 2.0) and np.all(u1 >= 0)


def test_thinning_rejects_non_dhr_law():
    with pytest.raises(HypothesisAError):
        sample_train_by_thinning(UniformLaw(2.0), 0.0, 1.0, HazardField(0, 0, 1.0))
    with pytest.raises(HypothesisAError):
        coupled_trains(Weibull(2.0, 1.0), 0.0, 1.0, HazardField(0, 0, 1.0))


def test_thinning_field_ceiling_checked():
    with pytest.raises(ValueError, match="ceiling"):
        sample_train_by_thinning(Exponential(3.0), 0.0, 1.0, HazardField(0, 0, 1.0))


def test_weibull_hybrid_sampler_mean():
    law = Weibull(0.5, 1.0)  # mean 2
    field = HazardField.for_law(law, 8, 0)
    tr = sample_train_by_thinning(law, 0.0, 40_000.0, field)
    iv = tr.interarrivals
    assert abs(iv.mean() - law.mean) < 4 * iv.std() / math.sqrt(iv.size)
    assert DEFAULT_EPS_H == 1e-6


@pytest.mark.parametrize("law", [ShiftedPareto(1.5, 1.0), Exponential(1.0), ShiftedPareto(2.0, 0.5)])
@pytest.mark.parametrize("seed", range(5))
def test_coupled_trains_containment(law, seed):
    field = HazardField.for_law(law, seed, 0)
    early, late = coupled_trains(law, 0.0, 1.0, field, horizon=100.0)
    tail = set(early.marks[early.marks >= 1.0].tolist())
    assert tail <= set(late.marks.tolist())


def test_coupled_trains_equal_starts_identical():
    field = HazardField.for_law(ShiftedPareto(1.5, 1.0), 4, 0)
    a, b = coupled_trains(ShiftedPareto(1.5, 1.0), 2.0, 2.0, field, horizon=80.0)
    assert a == b


def test_coupled_trains_order_checked():
    with pytest.raises(ValueError):
        coupled_trains(Exponential(), 2.0, 1.0, HazardField(0, 0, 1.0))


def test_trains_csv(tmp_path):
    tr = RenewalTrain(0.0, np.array([0.5, 1.25]), 2.0)
    path = tmp_path / "t.csv"
    write_trains_csv(path, [(3, tr)], {"master_seed": 7})
    assert path.read_text().splitlines() == ["site,mark_time,master_seed", "3,0.5,7", "3,1.25,7"]
