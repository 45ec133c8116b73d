import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cesor.core import (EpisodeRecord, ReturnBatch, Source, Trajectory, cvar_of_samples,
                        effective_sample_size, empirical_quantile, quantile_rank, trajectory_return)

floats = st.floats(-1e6, 1e6, allow_nan=False)


def brute_quantile(values, alpha):
    # smallest v such that at least alpha of the sample is <= v
    n = len(values)
    for v in sorted(values):
        if sum(x <= v for x in values) >= alpha * n - 1e-9:
            return v


def test_trajectory_return_undiscounted_and_discounted():
    assert trajectory_return([1, 2, 3]) == 6.0
    assert trajectory_return([1, 1, 1], 0.5) == pytest.approx(1.75)
    with pytest.raises(ValueError):
        trajectory_return([])
    with pytest.raises(ValueError):
        trajectory_return([1.0], gamma=0.0)


def test_quantile_small_example():
    assert empirical_quantile([1, 2, 3, 4, 5], 0.4) == 2.0
    assert empirical_quantile([5, 4, 3, 2, 1], 1.0) == 5.0
    assert empirical_quantile([3.0], 0.01) == 3.0


def test_quantile_rank_floating_point_edge():
    # 0.07 * 100 is 7.000000000000001 in binary
    assert quantile_rank(100, 0.07) == 7
    assert quantile_rank(400, 0.05) == 20
    assert quantile_rank(10, 0.001) == 1


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5])
def test_quantile_rejects_bad_alpha(alpha):
    with pytest.raises(ValueError):
        empirical_quantile([1, 2, 3], alpha)


def test_quantile_rejects_empty():
    with pytest.raises(ValueError):
        empirical_quantile([], 0.5)


@settings(max_examples=200, deadline=None)
@given(st.lists(floats, min_size=1, max_size=60), st.floats(0.001, 1.0))
def test_quantile_matches_brute_force(values, alpha):
    assert empirical_quantile(values, alpha) == brute_quantile(values, alpha)


def test_cvar_of_range():
    assert cvar_of_samples(np.arange(100), 0.1) == pytest.approx(4.5)


def test_cvar_at_one_is_mean(rng):
    x = rng.normal(size=500)
    assert cvar_of_samples(x, 1.0) == pytest.approx(x.mean())


@settings(max_examples=100, deadline=None)
@given(st.lists(floats, min_size=1, max_size=60), st.floats(0.001, 1.0))
def test_cvar_bounded_by_quantile_and_minimum(values, alpha):
    c = cvar_of_samples(values, alpha)
    assert min(values) - 1e-6 <= c <= empirical_quantile(values, alpha) + 1e-6


def test_effective_sample_size():
    assert effective_sample_size([2, 1, 1]) == pytest.approx(16 / 6)
    assert effective_sample_size(np.ones(7)) == pytest.approx(7.0)
    with pytest.raises(ValueError):
        effective_sample_size([1.0, 0.0])
    with pytest.raises(ValueError):
        effective_sample_size([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=50))
def test_effective_sample_size_between_one_and_n(w):
    n_eff = effective_sample_size(w)
    assert 1.0 - 1e-9 <= n_eff <= len(w) + 1e-9


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory([], [], [])
    with pytest.raises(ValueError):
        Trajectory([[0.0], [1.0]], [0], [1.0])
    t = Trajectory([[0.0], [1.0]], [0, 1], [1.0, 2.0])
    assert t.length == 2


def test_records_enforce_weight_rules():
    t = Trajectory([[0.0]], [0], [1.0])
    with pytest.raises(ValueError):
        EpisodeRecord(np.zeros(1), t, 1.0, weight=0.0, source=Source.SHIFTED)
    with pytest.raises(ValueError):
        EpisodeRecord(np.zeros(1), t, 1.0, weight=2.0, source=Source.REFERENCE)


def test_batch_order_and_views():
    t = Trajectory([[0.0]], [0], [1.0])
    ref = EpisodeRecord(np.array([1.0]), t, 1.0)
    shifted = EpisodeRecord(np.array([2.0]), t, -3.0, 2.5, Source.SHIFTED)
    batch = ReturnBatch([ref, shifted], 1, 1)
    assert batch.returns.tolist() == [1.0, -3.0]
    assert batch.weights.tolist() == [1.0, 2.5]
    assert batch.reference_returns.tolist() == [1.0]
    assert batch.contexts.tolist() == [[1.0], [2.0]]
    with pytest.raises(ValueError):
        ReturnBatch([shifted, ref], 1, 1)
    with pytest.raises(ValueError):
        ReturnBatch([ref], 1, 1)


def test_quantile_is_an_order_statistic(rng):
    x = rng.normal(size=1001)
    q = empirical_quantile(x, 0.05)
    assert q in x
    assert np.sum(x <= q) == math.ceil(0.05 * 1001)


def test_cvar_of_distinct_sample_averages_worst_k(rng):
    x = rng.permutation(1000).astype(float)
    assert cvar_of_samples(x, 0.05) == pytest.approx(np.arange(50).mean())


def test_ties_at_the_quantile_join_the_tail():
    assert cvar_of_samples([0.0, 1.0, 1.0, 1.0, 5.0], 0.4) == pytest.approx(0.75)


@settings(max_examples=100, deadline=None)
@given(st.lists(floats, min_size=1, max_size=60), st.floats(0.001, 1.0))
def test_cvar_at_most_mean(values, alpha):
    assert cvar_of_samples(values, alpha) <= np.mean(values) + 1e-6 * (1 + np.max(np.abs(values)))


@settings(max_examples=100, deadline=None)
@given(st.lists(floats, min_size=1, max_size=60), st.floats(0.001, 1.0), st.floats(0.001, 1.0))
def test_quantile_monotone_in_alpha(values, a, b):
    lo, hi = sorted((a, b))
    assert empirical_quantile(values, lo) <= empirical_quantile(values, hi)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=50), st.floats(1e-3, 1e3))
def test_effective_sample_size_scale_invariant(w, c):
    assert effective_sample_size(np.multiply(w, c)) == pytest.approx(effective_sample_size(w), rel=1e-9)


def test_quantile_exhaustive_small_lists():
    import itertools
    alphas = [0.01, 0.1, 0.125, 0.2, 0.25, 1 / 3, 0.5, 0.6, 0.75, 0.9, 1.0]
    for n in range(1, 9):
        for values in itertools.product([0, 1, 2], repeat=n):
            for a in alphas:
                assert empirical_quantile(values, a) == brute_quantile(values, a)
