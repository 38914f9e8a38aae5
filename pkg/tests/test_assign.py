import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from langtrack.assign import assignment_cost, greedy_assignment, solve_assignment

from oracles import brute_force_assignment


def random_case(rng):
    n, m = rng.integers(0, 7, size=2)
    cost = rng.integers(0, 20, size=(n, m)).astype(float)
    forbidden = rng.random((n, m)) < 0.25
    gate = float(rng.integers(5, 25)) if rng.random() < 0.5 else None
    return cost, forbidden, gate


def test_matches_exhaustive_search():
    rng = np.random.default_rng(0)
    for _ in range(200):
        cost, forbidden, gate = random_case(rng)
        allowed = ~forbidden & (cost < gate if gate is not None else True)
        pairs = solve_assignment(cost, forbidden=forbidden, gate=gate)
        assert (len(pairs), assignment_cost(cost, pairs)) == brute_force_assignment(cost, allowed)
        assert all(allowed[r, c] for r, c in pairs)


def test_diagonal():
    assert solve_assignment([[0, 9], [9, 0]]) == [(0, 0), (1, 1)]


def test_everything_gated():
    assert solve_assignment([[3.0, 4.0], [5.0, 6.0]], gate=3.0) == []


def test_empty():
    assert solve_assignment(np.zeros((0, 4))) == []
    assert solve_assignment([]) == []


@pytest.mark.parametrize("bad", [[[1.0, float("nan")]], [[-1.0]], [1.0, 2.0]])
def test_rejects(bad):
    with pytest.raises(ValueError):
        solve_assignment(bad)


def test_prefers_cardinality_over_cost():
    # taking the cheap (0,0) edge alone would leave row 1 unmatched
    cost = np.array([[0.0, 1.0], [1.0, 99.0]])
    allowed_forbidden = np.array([[False, False], [False, True]])
    assert solve_assignment(cost, forbidden=allowed_forbidden) == [(0, 1), (1, 0)]


def test_greedy_takes_cheapest_first():
    cost = np.array([[1.0, 2.0], [1.5, 10.0]])
    assert greedy_assignment(cost, gate=5.0) == [(0, 0)]
    assert solve_assignment(cost, gate=5.0) == [(0, 1), (1, 0)]


def test_runtime():
    rng = np.random.default_rng(1)
    cases = [random_case(rng) for _ in range(200)]
    t0 = time.perf_counter()
    for cost, forbidden, gate in cases:
        solve_assignment(cost, forbidden=forbidden, gate=gate)
    assert time.perf_counter() - t0 < 5.0


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_one_to_one_and_sorted(n, m, seed):
    cost = np.random.default_rng(seed).random((n, m))
    pairs = solve_assignment(cost)
    assert len(pairs) == min(n, m)
    assert len({r for r, _ in pairs}) == len({c for _, c in pairs}) == len(pairs)
    assert pairs == sorted(pairs)
