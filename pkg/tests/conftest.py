import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rcpsim.graphical import Lattice, system_from_events

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def make_h1():
    """Sites {0, 1}; arrow 0->1 at t=1; marks {3} and {0.5, 2}; horizon [0, 4]."""
    return system_from_events(Lattice.interval(0, 1), (0.0, 4.0), {0: [3.0], 1: [0.5, 2.0]}, [(0, 1, 1.0)])


def make_h2():
    """Three sites where only the zig-zag 0 -> 1 -> 0 survives to t = 10."""
    marks = {0: [4.0], 1: [1.0, 8.0], 2: [3.0]}
    return system_from_events(Lattice.interval(0, 2), (0.0, 10.0), marks, [(0, 1, 2.0), (1, 0, 6.0)])


def make_corridor():
    """Six sites where the only bottom-to-top path runs through sites 1..4."""
    marks = {0: [1.0], 1: [2.0], 2: [0.5, 3.0], 3: [0.5, 4.0], 4: [0.5], 5: [1.0]}
    arrows = [(1, 2, 1.0), (2, 3, 2.5), (3, 4, 3.5)]
    return system_from_events(Lattice.interval(0, 5), (0.0, 10.0), marks, arrows)


def make_double_staircase():
    """Diagonal crossings out (0 -> 1) and back (1 -> 0) for c=2/3, T=12, eps=0.5."""
    marks = {0: [5.0, 20.0], 1: [1.0, 12.0]}
    return system_from_events(Lattice.interval(0, 1), (0.0, 20.0), marks, [(0, 1, 2.0), (1, 0, 10.0)])


@pytest.fixture
def h1():
    return make_h1()


@pytest.fixture
def h2():
    return make_h2()


@pytest.fixture
def corridor():
    return make_corridor()


@pytest.fixture
def double_staircase():
    return make_double_staircase()


def random_small_system(rng, max_events=12, n_sites=None, horizon=10.0):
    """A 1-d system with at most ``max_events`` marks plus arrows, arrows carrying random u."""
    n_sites = n_sites or int(rng.integers(2, 5))
    lattice = Lattice.interval(0, n_sites - 1)
    total = int(rng.integers(1, max_events + 1))
    n_arrows = int(rng.integers(0, total + 1))
    marks = {}
    for _ in range(total - n_arrows):
        x = int(rng.integers(n_sites))
        marks.setdefault(x, []).append(float(rng.uniform(0, horizon)))
    arrows = []
    for _ in range(n_arrows):
        x = int(rng.integers(n_sites))
        nbrs = [y for y in (x - 1, x + 1) if 0 <= y < n_sites]
        y = int(rng.choice(nbrs))
        arrows.append((x, y, float(rng.uniform(0, horizon)), float(1.0 - rng.random())))
    return system_from_events(lattice, (0.0, horizon), marks, arrows), marks, arrows


def active_triples(arrows, lam, lambda_max=1.0):
    return [(a, b, t) for a, b, t, u in arrows if u <= lam / lambda_max]


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)
