import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rcpsim.graphical import (CapacityError, CouplingRangeError, DumpError, Lattice, StartPolicy, active_arrows,
                              build_harris, dump_system, load_system, system_from_events)
from rcpsim.renewal import Exponential, ShiftedPareto, TieError, Weibull


def test_lattice_basics():
    lat = Lattice((0, -1), (2, 1))
    assert lat.d == 2 and lat.n_sites == 9 and lat.shape == (3, 3)
    src, dst = lat.edges
    # 2 * (number of undirected nearest-neighbour pairs) = 2 * (2*3 + 3*2)
    assert src.size == 24
    for a, b in zip(src, dst):
        assert np.abs(lat.coords[a] - lat.coords[b]).sum() == 1
    assert lat.coord(lat.index((1, 0))) == (1, 0)
    one = Lattice.interval(-3, 3)
    assert one.coord(0) == -3 and one.index(3) == 6
    with pytest.raises(ValueError):
        Lattice((2,), (1,))


def test_arrow_counts_poisson_mean():
    sys_ = build_harris(Lattice.interval(0, 100), (0.0, 100.0), Exponential(), 1.0, 17)
    counts = sys_.arrow_counts()
    assert counts.size == 200
    assert abs(counts.mean() - 100.0) < 3 * math.sqrt(100.0 / 200)


def test_zero_rate_ceiling_means_no_arrows():
    sys_ = build_harris(Lattice.interval(0, 10), (0.0, 50.0), Exponential(), 0.0, 1)
    assert sys_.arrow_time.size == 0 and sys_.marks.size > 0


def test_build_is_bit_reproducible():
    args = (Lattice.interval(-5, 5), (0.0, 30.0), ShiftedPareto(1.5, 1.0), 2.0, 99)
    a, b = build_harris(*args), build_harris(*args)
    assert a.same_realization(b)
    c = build_harris(*args[:4], 100)
    assert not a.same_realization(c)


def test_trains_independent_of_rate_ceiling():
    lat = Lattice.interval(0, 8)
    a = build_harris(lat, (0.0, 40.0), Exponential(), 0.5, 3)
    b = build_harris(lat, (0.0, 40.0), Exponential(), 3.0, 3)
    assert np.array_equal(a.marks, b.marks) and np.array_equal(a.mark_ptr, b.mark_ptr)


def test_system_is_immutable():
    sys_ = build_harris(Lattice.interval(0, 3), (0.0, 10.0), Exponential(), 1.0, 0)
    with pytest.raises(ValueError):
        sys_.marks[0] = 1.0
    with pytest.raises(Exception):
        sys_.lambda_max = 3.0


def test_active_arrows_extremes_and_range():
    sys_ = build_harris(Lattice.interval(0, 10), (0.0, 20.0), Exponential(), 2.0, 5)
    assert active_arrows(sys_, 2.0).times.size == sys_.arrow_time.size
    assert active_arrows(sys_, 0.0).times.size == 0
    with pytest.raises(CouplingRangeError):
        active_arrows(sys_, 2.5)


@given(seed=st.integers(0, 2 ** 32), l1=st.floats(0, 1), l2=st.floats(0, 1))
def test_active_sets_nested(seed, l1, l2):
    lo, hi = sorted((l1, l2))
    sys_ = build_harris(Lattice.interval(0, 6), (0.0, 10.0), Exponential(), 1.0, seed)
    assert active_arrows(sys_, lo).as_set() <= active_arrows(sys_, hi).as_set()


def test_disjoint_edge_counts_uncorrelated():
    lat = Lattice.interval(0, 3)
    a, b = [], []
    for s in range(1000):
        c = build_harris(lat, (0.0, 5.0), Exponential(), 1.0, s).arrow_counts()
        a.append(c[0])
        b.append(c[-1])
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) < 3 / math.sqrt(1000)


def test_start_policies():
    rng = np.random.default_rng(0)
    assert np.all(StartPolicy().starts(4, 0.0, rng) == 0.0)
    u = StartPolicy.uniform(8.0).starts(1000, 0.0, rng)
    assert np.all((u >= -8.0) & (u < 0.0))
    assert StartPolicy.uniform(8.0).label() == "uniform-offset-8"
    with pytest.raises(ValueError):
        StartPolicy("explicit", 0.0, (0.5,))
    sys_ = build_harris(Lattice.interval(0, 4), (0.0, 30.0), ShiftedPareto(1.5, 1), 1.0, 2, StartPolicy.uniform(16.0))
    assert np.all(sys_.site_starts < 0)
    for i in range(5):
        assert np.all(sys_.marks_of(i) > sys_.site_starts[i])


def test_capacity_cap(monkeypatch):
    with pytest.raises(CapacityError, match="RCP_MAX_EVENTS"):
        build_harris(Lattice.interval(0, 1000), (0.0, 1000.0), Exponential(), 5.0, 0, event_cap=10_000)
    monkeypatch.setenv("RCP_MAX_EVENTS", "100")
    with pytest.raises(CapacityError):
        build_harris(Lattice.interval(0, 10), (0.0, 10.0), Exponential(), 1.0, 0)


def test_thinning_built_trains():
    sys_ = build_harris(Lattice.interval(0, 3), (0.0, 50.0), Weibull(0.7, 1.0), 1.0, 4, train_method="thinning")
    assert sys_.marks.size > 0
    assert sys_.same_realization(build_harris(Lattice.interval(0, 3), (0.0, 50.0), Weibull(0.7, 1.0), 1.0, 4,
                                              train_method="thinning"))


def test_hand_system_and_ties():
    sys_ = system_from_events(Lattice.interval(0, 1), (0.0, 4.0), {0: [3.0], 1: [0.5, 2.0]}, [(0, 1, 1.0)])
    assert sys_.marks_of(1).tolist() == [0.5, 2.0]
    assert active_arrows(sys_, 1.0).as_set() == {(0, 1, 1.0)}
    with pytest.raises(TieError):
        system_from_events(Lattice.interval(0, 1), (0.0, 4.0), {}, [(0, 1, 1.0), (0, 1, 1.0)])
    with pytest.raises(TieError):
        system_from_events(Lattice.interval(0, 2), (0.0, 4.0), {}, [(0, 1, 1.0), (2, 1, 1.0)]).sorted_active(1.0)
    with pytest.raises(ValueError, match="no edge"):
        system_from_events(Lattice.interval(0, 2), (0.0, 4.0), {}, [(0, 2, 1.0)])


def test_dump_round_trip(tmp_path):
    sys_ = build_harris(Lattice((0, 0), (3, 2)), (0.0, 12.0), ShiftedPareto(1.5, 1.0), 1.5, 8, StartPolicy.uniform(4))
    path = tmp_path / "s.bin"
    dump_system(sys_, path, {"note": "x"})
    back, summary = load_system(path)
    assert back.same_realization(sys_) and summary == {"note": "x"}
    assert back.law == sys_.law and back.start_policy == sys_.start_policy


def test_dump_errors(tmp_path):
    sys_ = build_harris(Lattice.interval(0, 3), (0.0, 5.0), Exponential(), 1.0, 1)
    path = tmp_path / "s.bin"
    dump_system(sys_, path)
    data = path.read_bytes()
    (tmp_path / "trunc.bin").write_bytes(data[:-8])
    with pytest.raises(DumpError, match="length"):
        load_system(tmp_path / "trunc.bin")
    (tmp_path / "short.bin").write_bytes(data[:12])
    with pytest.raises(DumpError):
        load_system(tmp_path / "short.bin")
    bad = bytearray(data)
    bad[7] = 9  # version field
    (tmp_path / "v.bin").write_bytes(bytes(bad))
    with pytest.raises(DumpError, match="version 9 .*version 1"):
        load_system(tmp_path / "v.bin")
    (tmp_path / "junk.bin").write_bytes(b"not a dump at all")
    with pytest.raises(DumpError):
        load_system(tmp_path / "junk.bin")
