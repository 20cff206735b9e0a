import math

import numpy as np
import pytest

from spatialhmc import experiments as ex
from spatialhmc.diagnostics import convergence_report
from spatialhmc.errors import ConfigError
from spatialhmc.models import Posterior
from spatialhmc.nuts import DrawMatrix, SamplerConfig
from spatialhmc.simulate import SimulationConfig, simulate


def test_grid_points():
    np.testing.assert_array_equal(ex.grid_points(1), [[0.5, 0.5]])
    g = ex.grid_points(3)
    assert g.shape == (9, 2)
    np.testing.assert_allclose(np.unique(g[:, 0]), [1 / 6, 0.5, 5 / 6])
    with pytest.raises(ConfigError):
        ex.grid_points(0)


def fixed_draw_fit(spec_name, data, truth, theta):
    post = Posterior(ex.experiment_spec(spec_name, data.n), data)
    theta = np.asarray(theta, dtype=float)
    c, n = 2, 5
    draws = np.broadcast_to(theta, (c, n, len(theta))).copy()
    draws += 1e-9 * np.random.default_rng(0).standard_normal(draws.shape)
    z = np.zeros((c, n))
    dm = DrawMatrix(draws=draws, names=list(post.names), lp=z, divergent=z.astype(bool),
                    treedepth=z.astype(int), energy=z, accept_stat=z + 1, wall_time=np.ones(c))
    return ex.Fit(posterior=post, draws=dm, report=convergence_report(dm),
                  sampler=SamplerConfig(), truth=truth)


def test_noiseless_linear_surface_is_recovered():
    data, truth = simulate(SimulationConfig(n_locations=40, true_sigma=0.0, field_sigma=0.0,
                                            field_kind="tps_surface", n_holdout=25, seed=1))
    post = Posterior(ex.experiment_spec("mtps", data.n), data)
    theta = np.zeros(post.dim)
    theta[post.beta_slice] = [1.0, 2.0]
    fit = fixed_draw_fit("mtps", data, truth, theta)
    res = ex.predict_experiment(fit, grid_resolution=1)
    assert res.rmse < 1e-6
    assert res.grid.shape == (1, 2)
    assert res.grid_rmse < 1e-6


def test_predict_without_truth():
    data, _ = simulate(SimulationConfig(n_locations=20, seed=2))
    post = Posterior(ex.experiment_spec("mtps", data.n), data)
    fit = fixed_draw_fit("mtps", data, None, np.zeros(post.dim))
    res = ex.predict_experiment(fit, grid_resolution=2)
    assert math.isnan(res.rmse)
    assert res.grid_effect.shape == (4,)


def test_summaries_and_tables():
    data, truth = simulate(SimulationConfig(n_locations=30, seed=3, field_kind="tps_surface"))
    post = Posterior(ex.experiment_spec("mtps", data.n), data)
    theta = np.zeros(post.dim)
    theta[post.beta_slice] = [1.1, 1.9]
    fit = fixed_draw_fit("mtps", data, truth, theta)
    rows = ex.summarize_fit(fit, truth.config)
    assert [r["parameter"] for r in rows] == ["beta0", "beta1", "sigma"]
    assert abs(rows[0]["rel_error"] - 0.1) < 1e-6
    res = ex.ExperimentResult(sl="SL1", model="mtps", n=30, n_knots=fit.n_knots, rows=rows,
                              exec_time=2.0, convergence={"rhat": 1.0, "min_ess": 100.0},
                              efficiency=50.0)
    back = ex.ExperimentResult.from_dict(res.as_dict())
    assert back.estimate("beta1") == res.estimate("beta1")
    assert res.as_dict()["log_efficiency"] == pytest.approx(math.log(50.0))
    table = ex.table1_rows([res])
    assert len(table) == 3 and table[0]["sl"] == "SL1"
    md = ex.table1_markdown(table)
    assert md.count("\n") == 5
    series = ex.efficiency_series([res])
    assert series[0]["log_efficiency"] == pytest.approx(math.log(50.0))
    params = {r["parameter"] for r in fit.parameter_table()}
    assert {"beta[intercept]", "beta[x1]", "sigma"} <= params


def test_sl_simulation_settings():
    cfg = ex.sl_simulation("SL2", "mgrf")
    assert cfg.n_locations == 200 and cfg.field_kind == "matern_grf" and cfg.seed == 201
    assert ex.sl_simulation("SL2", "mtps").field_kind == "tps_surface"
    assert ex.sl_simulation("SL2", "mtps", seed=7).seed == 7


def test_run_experiment_small():
    res = ex.run_experiment("SL1", "mtps_fixed_knots",
                            sampler=SamplerConfig(chains=2, warmup=30, total_iter=60, seed=2),
                            n_holdout=5)
    assert res.n == 100 and res.n_knots == 30
    assert res.fit.draws.draws.shape[:2] == (2, 30)
    assert res.exec_time > 0 and res.efficiency > 0
    pred = ex.predict_experiment(res.fit, grid_resolution=1)
    assert np.isfinite(pred.rmse)
