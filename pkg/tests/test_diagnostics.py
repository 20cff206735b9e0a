import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp

from spatialhmc import diagnostics as dg
from spatialhmc.errors import MismatchedObservations, NonFiniteLoglik, TooFewTailSamples
from spatialhmc.models import Dataset, Prior, Posterior, model_spec
from spatialhmc.nuts import DrawMatrix, Gaussian, SamplerConfig, run_chains


def ar1(rho, chains, n, seed):
    rng = np.random.default_rng(seed)
    x = np.empty((chains, n))
    x[:, 0] = rng.standard_normal(chains)
    e = rng.standard_normal((chains, n)) * math.sqrt(1 - rho**2)
    for t in range(1, n):
        x[:, t] = rho * x[:, t - 1] + e[:, t]
    return x


def gpd_sample(k, sigma, n, rng):
    u = rng.uniform(size=n)
    return sigma * (u ** (-k) - 1.0) / k if k != 0 else -sigma * np.log(u)


def test_iid_rhat():
    x = np.random.default_rng(0).standard_normal((4, 1000))
    assert dg.split_rhat(x) < 1.01


def test_separated_chains_rhat():
    rng = np.random.default_rng(1)
    x = np.vstack([rng.standard_normal(1000), 10 + rng.standard_normal(1000)])
    assert dg.split_rhat(x) > 1.5


def test_constant_draws_undefined():
    assert math.isnan(dg.split_rhat(np.ones((4, 100))))
    assert math.isnan(dg.ess_bulk(np.ones((1, 100))))
    with pytest.raises(ValueError):
        dg.split_rhat(np.zeros((2, 3)))


def test_split_detects_trend_within_chain():
    x = np.linspace(0, 5, 2000)[None] + 0.1 * np.random.default_rng(2).standard_normal((1, 2000))
    assert dg.split_rhat(x) > 1.5


@given(st.integers(0, 10_000), st.floats(-3, 3))
def test_rhat_invariant_under_monotone_transform(seed, shift):
    x = np.random.default_rng(seed).standard_normal((3, 60)) + np.array([[0.0], [0.3], [shift]])
    a = dg.split_rhat(x)
    assert abs(a - dg.split_rhat(np.exp(x))) < 1e-10
    assert abs(a - dg.split_rhat(x**3 + 2 * x)) < 1e-10
    assert abs(dg.ess_bulk(x) - dg.ess_bulk(np.exp(x))) < 1e-8


def test_iid_ess():
    vals = [dg.ess_bulk(np.random.default_rng(s).standard_normal((4, 1000))) for s in range(5)]
    assert abs(np.median(vals) - 4000) <= 400


def test_ar1_ess():
    rho = 0.9
    vals = [dg.ess_bulk(ar1(rho, 4, 4000, s)) for s in range(5)]
    analytic = 16000 * (1 - rho) / (1 + rho)
    assert abs(np.median(vals) - analytic) <= 0.25 * analytic


@given(st.integers(0, 10_000))
def test_ess_overcount_bound(seed):
    x = ar1(-0.9, 2, 300, seed)
    assert dg.ess_bulk(x) <= 1.5 * x.size + 1e-9


def test_efficiency():
    assert dg.efficiency(1000, 100) == 10.0
    assert dg.efficiency(1000, 200) == 5.0
    assert abs(dg.efficiency(1000, 100, log_scale=True) - math.log(10)) < 1e-15
    with pytest.raises(ValueError):
        dg.efficiency(1000, 0.0)


def test_convergence_report():
    dm = run_chains(SamplerConfig(chains=2, warmup=100, total_iter=300, seed=3),
                    Gaussian(np.zeros(3), np.ones(3)))
    rep = dg.convergence_report(dm)
    s = rep.summary()
    assert s["rhat"] == rep.max_rhat and s["min_ess"] == rep.min_ess
    assert s["efficiency"] == pytest.approx(rep.min_ess / dm.total_wall_time)
    assert len(rep.rows()) == 3
    sub = dg.convergence_report(dm, params=["x[1]"])
    assert sub.names == ["x[1]"]


def point_mass_gaussian():
    data = Dataset(y=np.zeros(5), X=np.ones((5, 1)), coords=np.random.default_rng(0).uniform(size=(5, 2)))
    post = Posterior(model_spec("gaussian"), data)
    draws = np.tile([0.0, math.log(1e-9)], (50, 1))
    return post, draws


def test_ppd_point_mass():
    post, draws = point_mass_gaussian()
    ppd = dg.posterior_predictive(post, draws, n_rep=20)
    assert abs(ppd.mean_ppd) < 1e-6
    assert ppd.replicates.shape == (20, 5)
    assert dg.posterior_predictive(post, draws, n_rep=1).replicates.shape == (1, 5)


def test_ppd_deterministic():
    post, draws = point_mass_gaussian()
    a = dg.posterior_predictive(post, draws, n_rep=5, seed=3)
    b = dg.posterior_predictive(post, draws, n_rep=5, seed=3)
    np.testing.assert_array_equal(a.replicates, b.replicates)


def test_gpd_recovers_half():
    ks = [dg.gpd_fit(gpd_sample(0.5, 1.0, 2000, np.random.default_rng(s)))[0] for s in range(5)]
    assert 0.4 <= np.median(ks) <= 0.6


def test_gpd_exponential_tail():
    ks = [dg.gpd_fit(gpd_sample(0.0, 1.0, 2000, np.random.default_rng(s)))[0] for s in range(5)]
    assert -0.1 <= np.median(ks) <= 0.1


def test_gpd_scale():
    fits = [dg.gpd_fit(gpd_sample(0.3, 2.0, 5000, np.random.default_rng(s)), prior_weight=0.0)
            for s in range(5)]
    k, sigma = np.median(fits, axis=0)
    assert abs(k - 0.3) < 0.05
    assert abs(sigma - 2.0) < 0.1


def test_gpd_too_few():
    with pytest.raises(TooFewTailSamples):
        dg.gpd_fit([1.0, 2.0, 3.0])


def test_gpd_quantile_inverts_cdf():
    k, sigma = 0.4, 1.5
    q = dg.gpd_quantile(np.array([0.1, 0.5, 0.9]), k, sigma)
    cdf = 1 - (1 + k * q / sigma) ** (-1 / k)
    np.testing.assert_allclose(cdf, [0.1, 0.5, 0.9], atol=1e-12)
    q0 = dg.gpd_quantile(0.5, 0.0, 1.0)
    assert abs(q0 - math.log(2)) < 1e-15


def test_khat_threshold():
    assert abs(dg.khat_threshold(2000) - (1 - 1 / math.log10(2000))) < 1e-15
    assert dg.khat_threshold(10**6) == 0.7
    assert abs(dg.khat_threshold(100) - 0.5) < 1e-15


def test_psis_constant_loglik():
    ll = np.full((400, 3), -1.7)
    rep = dg.psis_loo(ll)
    np.testing.assert_allclose(rep.elpd_i, -1.7, atol=1e-12)
    assert rep.k_status == ["not_estimable"] * 3
    assert math.isnan(rep.pareto_k_max)


@given(st.integers(0, 10_000))
def test_psis_without_smoothing_is_naive_is(seed):
    ll = np.random.default_rng(seed).normal(-1.0, 0.7, size=(300, 4))
    rep = dg.psis_loo(ll, smooth=False)
    naive = -(logsumexp(-ll, axis=0) - math.log(300))
    np.testing.assert_allclose(rep.elpd_i, naive, atol=1e-12)


def test_psis_weights_normalised():
    lw, k = dg.psis_smooth(np.random.default_rng(4).standard_normal(1000) * 2)
    assert abs(logsumexp(lw)) < 1e-12
    assert math.isfinite(k)


def test_psis_truncation_caps_weights():
    lr = np.random.default_rng(5).standard_t(1.5, size=2000)
    lw_t, _ = dg.psis_smooth(lr, truncate=True)
    lw_u, _ = dg.psis_smooth(lr, truncate=False)
    assert lw_t.max() - logsumexp(lw_t) <= lw_u.max() - logsumexp(lw_u) + 1e-12


def test_psis_rejects_nonfinite():
    ll = np.zeros((10, 2))
    ll[3, 1] = np.nan
    with pytest.raises(NonFiniteLoglik):
        dg.psis_loo(ll)


def test_compare_with_itself():
    ll = np.random.default_rng(6).normal(-1, 0.3, size=(500, 10))
    rep = dg.psis_loo(ll, name="a")
    rows = dg.loo_compare([rep, dg.psis_loo(ll, name="b")])
    for r in rows:
        assert r["elpd_diff"] == 0.0 and r["se_diff"] == 0.0


def test_compare_ranks_best_first():
    rng = np.random.default_rng(7)
    good = dg.psis_loo(rng.normal(-1.0, 0.3, size=(500, 10)), name="good")
    bad = dg.psis_loo(rng.normal(-2.0, 0.3, size=(500, 10)), name="bad")
    rows = dg.loo_compare([bad, good])
    assert rows[0]["model"] == "good"
    assert rows[0]["elpd_diff"] == 0.0 and rows[0]["se_diff"] == 0.0
    assert rows[1]["elpd_diff"] < 0 and rows[1]["se_diff"] > 0


def test_compare_mismatched():
    a = dg.psis_loo(np.zeros((50, 3)) - 1)
    b = dg.psis_loo(np.zeros((50, 4)) - 1)
    with pytest.raises(MismatchedObservations):
        dg.loo_compare([a, b])


@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_compare_invariant_to_common_shift(seed, c):
    rng = np.random.default_rng(seed)
    lls = [rng.normal(m, 0.4, size=(200, 6)) for m in (-1.0, -1.3, -0.8)]
    base = dg.loo_compare([dg.psis_loo(ll, name=str(i)) for i, ll in enumerate(lls)])
    shifted = dg.loo_compare([dg.psis_loo(ll + c, name=str(i)) for i, ll in enumerate(lls)])
    assert [r["model"] for r in base] == [r["model"] for r in shifted]
    for a, b in zip(base, shifted):
        assert abs(a["elpd_diff"] - b["elpd_diff"]) < 1e-8


@pytest.mark.parametrize("n", [4, 5, 6, 7, 9])
def test_short_chains(n):
    x = np.random.default_rng(n).standard_normal((2, n))
    assert 0 < dg.ess_bulk(x) <= 1.5 * x.size
    assert np.isfinite(dg.split_rhat(x))
