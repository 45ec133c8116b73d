import numpy as np
import pytest
from scipy import stats

from cesor.cem import (EPS_P, Bernoulli, BetaMean, Binomial, Categorical, CeState, ExponentialMean, Product,
                       ce_threshold, ce_update, distribution_from_dict, importance_weight, importance_weights,
                       sample_contexts, static_cem_run)


def test_bernoulli_one_gives_ones(rng):
    assert np.all(sample_contexts(Bernoulli(1.0), 100, rng) == 1.0)


def test_product_moments():
    rng = np.random.default_rng(0)
    n = 100_000
    C = sample_contexts(Product([Bernoulli(0.2), ExponentialMean(32.0)]), n, rng)
    assert C.shape == (n, 2)
    assert abs(C[:, 0].mean() - 0.2) < 3 * np.sqrt(0.16 / n)
    assert abs(C[:, 1].mean() - 32.0) < 3 * 32.0 / np.sqrt(n)


def test_beta_half_is_uniform():
    C = sample_contexts(BetaMean(0.5), 20_000, np.random.default_rng(1))[:, 0]
    assert stats.kstest(C, "uniform").pvalue > 0.01


def test_sampling_deterministic():
    d = Product([Bernoulli(0.3), ExponentialMean(5.0)])
    a = sample_contexts(d, 50, np.random.default_rng(9))
    b = sample_contexts(d, 50, np.random.default_rng(9))
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("bad", [lambda: Bernoulli(1.2), lambda: ExponentialMean(0.0), lambda: BetaMean(1.0),
                                 lambda: Binomial(0, 0.5), lambda: Binomial(5, 0.0),
                                 lambda: Categorical([0.5, 0.6]), lambda: Categorical([1.0, 0.0])])
def test_invalid_parameters(bad):
    with pytest.raises(ValueError):
        bad()


def test_log_densities_match_scipy(rng):
    x = rng.random(50)
    for m in (0.05, 0.5, 0.9):
        a, b = 2 * m, 2 - 2 * m
        np.testing.assert_allclose(BetaMean(m).log_density(x), stats.beta.logpdf(x, a, b), rtol=1e-10)
    y = rng.exponential(3.0, 50)
    np.testing.assert_allclose(ExponentialMean(3.0).log_density(y), stats.expon.logpdf(y, scale=3.0), rtol=1e-12)
    k = rng.integers(0, 31, 50).astype(float)
    np.testing.assert_allclose(Binomial(30, 0.2).log_density(k), stats.binom.logpmf(k, 30, 0.2), rtol=1e-10)
    c = rng.integers(0, 3, 50).astype(float)
    np.testing.assert_allclose(Categorical([0.2, 0.3, 0.5]).log_density(c), np.log(np.array([0.2, 0.3, 0.5])[c.astype(int)]))


def test_weight_identity_and_bernoulli_ratio():
    d = Product([Bernoulli(0.2), ExponentialMean(32.0)])
    C = d.sample(100, np.random.default_rng(0))
    assert np.all(importance_weights(d, d, C) == 1.0)
    assert importance_weight(Bernoulli(0.2), Bernoulli(0.5), [1.0]) == pytest.approx(0.4)


def test_weight_clipping():
    # exponential ratio at c = 0 is mu/mu0 = 100
    assert importance_weight(ExponentialMean(1.0), ExponentialMean(100.0), [0.0], clip=None) == pytest.approx(100.0)
    assert importance_weight(ExponentialMean(1.0), ExponentialMean(100.0), [0.0]) == 5.0
    assert importance_weight(ExponentialMean(100.0), ExponentialMean(1.0), [0.0]) == 0.2


def test_product_weight_multiplies_components():
    phi0 = Product([Bernoulli(0.2), ExponentialMean(32.0)])
    phi = Product([Bernoulli(0.5), ExponentialMean(40.0)])
    c = [1.0, 10.0]
    expected = 0.4 * (stats.expon.pdf(10.0, scale=32) / stats.expon.pdf(10.0, scale=40))
    assert importance_weight(phi0, phi, c, clip=None) == pytest.approx(expected, rel=1e-12)


def test_binomial_ratio_stable_for_long_episodes(rng):
    phi0, phi = Binomial(3600, 1 / 259200), Binomial(3600, 0.002)
    k = np.arange(0, 20, dtype=float)
    expected = np.exp(stats.binom.logpmf(k, 3600, 1 / 259200) - stats.binom.logpmf(k, 3600, 0.002))
    np.testing.assert_allclose(importance_weights(phi0, phi, k, clip=None), expected, rtol=1e-9)


def test_zero_density_denominator_is_an_error():
    with pytest.raises(ValueError):
        importance_weight(Bernoulli(0.2), Bernoulli(0.0), [1.0], clip=None)


@pytest.mark.parametrize("phi0,phi", [
    (Product([Bernoulli(0.2), ExponentialMean(32.0)]), Product([Bernoulli(1 - EPS_P), ExponentialMean(1e3)])),
    (BetaMean(0.5), BetaMean(EPS_P)),
    (Binomial(900, 1 / 259200), Binomial(900, 1 - EPS_P)),
    (Categorical([0.5, 0.5]), Categorical([EPS_P, 1 - EPS_P])),
])
def test_weights_finite_on_reference_draws(phi0, phi):
    C = phi0.sample(5000, np.random.default_rng(4))
    assert np.all(np.isfinite(phi.log_ratio(phi0, C)))
    w = importance_weights(phi0, phi, C)
    assert np.all((w >= 0.2) & (w <= 5.0))


def test_ce_threshold_examples():
    assert ce_threshold(np.arange(100), np.arange(-100, 100), 0.05, 0.2) == 4.0
    assert ce_threshold([2.0] * 5, [2.0] * 9, 0.1, 0.3) == 2.0
    # beta quantile of everything wins when it is larger
    assert ce_threshold([0, 1, 2, 3], [0, 1, 2, 3, 9, 9, 9, 9], 0.25, 0.5) == 3.0


def test_ce_update_bernoulli_weighted_mean():
    s = CeState(Bernoulli(0.2), Bernoulli(0.2))
    phi = ce_update(s, [[1.0], [0.0], [1.0], [1.0]], [1, 1, 2, 7], [0, 0, 0, 5], 0.0)
    assert phi.p == pytest.approx(0.75)


def test_ce_update_point_mass_clamped():
    s = CeState(Bernoulli(0.2), Bernoulli(0.2))
    assert ce_update(s, [[1.0], [0.0]], [1.0, 1.0], [0.0, 9.0], 0.0).p == 1 - EPS_P
    s = CeState(Bernoulli(0.2), Bernoulli(0.2))
    assert ce_update(s, [[0.0], [1.0]], [1.0, 1.0], [0.0, 9.0], 0.0).p == EPS_P


def test_ce_update_exponential_mean():
    s = CeState(ExponentialMean(32.0), ExponentialMean(32.0))
    assert ce_update(s, [[10.0], [50.0]], [1.0, 1.0], [0.0, 0.0], 0.0).mean == pytest.approx(30.0)


def test_ce_update_binomial_and_categorical():
    s = CeState(Binomial(10, 0.1), Binomial(10, 0.1))
    assert ce_update(s, [[2.0], [4.0]], [1.0, 3.0], [0, 0], 0).p == pytest.approx(0.35)
    s = CeState(Categorical([1 / 3] * 3), Categorical([1 / 3] * 3))
    probs = ce_update(s, [[0.0], [0.0], [2.0]], [1, 1, 2], [0, 0, 0], 0).probs
    raw = np.array([0.5, EPS_P, 0.5])
    np.testing.assert_allclose(probs, raw / raw.sum())


def test_ce_update_product_componentwise():
    d = Product([Bernoulli(0.2), ExponentialMean(32.0)])
    s = CeState(d, d)
    phi = ce_update(s, [[1.0, 10.0], [0.0, 30.0], [1.0, 90.0]], [1.0, 1.0, 1.0], [0, 0, 1], 0)
    np.testing.assert_allclose(phi.phi, [0.5, 20.0])


def test_ce_update_matches_weighted_mle_oracle(rng):
    # numerically maximise the weighted beta log-likelihood over the mean parameter
    C = rng.beta(0.4, 1.6, 300)
    w = rng.uniform(0.2, 5.0, 300)
    s = CeState(BetaMean(0.5), BetaMean(0.5))
    closed = ce_update(s, C[:, None], w, np.zeros(300), 0.0).mean
    grid = np.linspace(0.01, 0.99, 9801)
    ll = [np.dot(w, stats.beta.logpdf(C, 2 * m, 2 - 2 * m)) for m in grid]
    assert closed == pytest.approx(np.dot(w, C) / w.sum())
    # the moment update is not the exact beta MLE, but for this family it lands close
    assert abs(grid[int(np.argmax(ll))] - closed) < 0.05


def test_ce_update_empty_selection_keeps_phi():
    s = CeState(Bernoulli(0.2), Bernoulli(0.2))
    phi = ce_update(s, [[1.0]], [1.0], [5.0], 0.0)
    assert phi.p == 0.2 and s.empty_selection
    assert len(s.history) == 2


def test_ce_update_full_selection_is_mle_of_reference():
    estimates = []
    for seed in range(200):
        rng = np.random.default_rng(seed)
        d = ExponentialMean(32.0)
        C = d.sample(400, rng)
        s = CeState(d, d)
        estimates.append(ce_update(s, C, np.ones(400), np.zeros(400), np.inf).mean)
    assert abs(np.mean(estimates) - 32.0) < 3 * 32.0 / np.sqrt(400 * 200)


def test_ce_state_validation():
    with pytest.raises(ValueError):
        CeState(Bernoulli(0.2), ExponentialMean(1.0))
    with pytest.raises(ValueError):
        CeState(Bernoulli(0.2), Bernoulli(0.2), weight_clip=(2.0, 5.0))
    with pytest.raises(ValueError):
        CeState(Bernoulli(0.2), Bernoulli(0.2), beta_smooth=1.0)


def test_dict_round_trip():
    d = Product([Bernoulli(0.2), ExponentialMean(32.0), Binomial(900, 0.01), Categorical([0.3, 0.7]),
                 BetaMean(0.4)])
    e = distribution_from_dict(d.to_dict())
    np.testing.assert_array_equal(e.phi, d.phi)
    assert e.components[2].n_trials == 900
    with pytest.raises(ValueError):
        distribution_from_dict({"family": "gamma", "phi": [1.0]})


def test_static_cem_unreachable_target_follows_sample_quantile():
    rows = static_cem_run(BetaMean(0.5), lambda c: float(c[0]), -1.0, 500, 0.5, 4, np.random.default_rng(0))
    means = [r["phi"][0] for r in rows]
    assert all(b < a for a, b in zip(means, means[1:]))
    assert all(r["q"] > -1.0 for r in rows)


def test_static_cem_beta_toy_converges():
    hits = 0
    for seed in range(10):
        rows = static_cem_run(BetaMean(0.5), lambda c: float(c[0]), 0.1, 1000, 0.5, 3,
                              np.random.default_rng(seed), nu=0.2)
        hits += 0.03 <= rows[3]["sample_mean"] <= 0.07
    assert hits >= 9


def test_static_cem_zero_iterations_single_row():
    rows = static_cem_run(BetaMean(0.5), lambda c: float(c[0]), 0.1, 100, 0.5, 0, np.random.default_rng(0))
    assert len(rows) == 1 and rows[0]["phi"][0] == 0.5


def _tail_cross_entropy_traces(n_runs):
    tail = np.random.default_rng(99).random(200_000)
    tail = tail[tail <= 0.1]
    for seed in range(n_runs):
        rows = static_cem_run(BetaMean(0.5), lambda c: float(c[0]), 0.1, 1000, 0.5, 3,
                              np.random.default_rng(seed), nu=0.2)
        # cross-entropy of the tail sample under D_phi; KL differs by a constant
        yield [-BetaMean(r["phi"][0]).log_density(tail).mean() for r in rows]


def test_kl_to_reference_tail_drops_on_first_update():
    traces = list(_tail_cross_entropy_traces(20))
    assert sum(t[1] < t[0] for t in traces) >= 18


@pytest.mark.xfail(strict=True, reason="moment updates drive the mean to 0.05, past the likelihood optimum "
                                       "near 0.17, so the tail cross-entropy rises again by iteration 3")
def test_kl_to_reference_tail_non_increasing_three_iterations():
    good = sum(all(b <= a for a, b in zip(t, t[1:])) for t in _tail_cross_entropy_traces(20))
    assert good >= 18
