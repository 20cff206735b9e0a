"""Simulation experiments, spatial prediction and report tables.

Each SL tag fixes the number of locations (SL1 = 100 … SL10 = 1000) and a
data seed; every model gets its own data set with a field of matching kind.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tps
from .diagnostics import convergence_report
from .errors import ConfigError
from .models import Posterior, model_spec
from .nuts import SamplerConfig, run_chains
from .simulate import SimulationConfig, SplineSurface, simulate, sl_size

EXPERIMENT_MODELS = ("mgrf", "mtps", "mtps_fixed_knots")
# field used for every SL data set; see SimulationConfig for the meaning
SL_FIELD = {"field_sigma": 0.3, "field_range": 0.2, "n_control": 5}
FIXED_KNOTS = 30


def sl_index(tag):
    return sl_size(tag) // 100


def data_seed(sl, model):
    """Seed of the simulated data for an (SL, model) pair.

    Both TPS variants share data so their fits are directly comparable.
    """
    offset = 1 if model == "mgrf" else 2
    return 100 * sl_index(sl) + offset


def sl_simulation(sl, model, seed=None, n_holdout=0):
    if model not in EXPERIMENT_MODELS:
        raise ConfigError(f"unknown experiment model {model!r}")
    kind = "matern_grf" if model == "mgrf" else "tps_surface"
    return SimulationConfig(n_locations=sl_size(sl), field_kind=kind,
                            seed=data_seed(sl, model) if seed is None else seed,
                            n_holdout=n_holdout, **SL_FIELD)


def experiment_spec(model, n):
    if model == "mtps":
        return model_spec("mtps", n_knots=tps.default_knot_count(n))
    if model == "mtps_fixed_knots":
        return model_spec("mtps_fixed_knots", n_knots=FIXED_KNOTS)
    return model_spec(model)


@dataclass
class Fit:
    """A posterior together with its draws and convergence report."""

    posterior: Posterior
    draws: object
    report: object
    sampler: SamplerConfig = None
    truth: object = None
    build_seconds: float = 0.0

    @property
    def spec(self):
        return self.posterior.spec

    @property
    def data(self):
        return self.posterior.data

    @property
    def n_knots(self):
        b = self.posterior.structures.basis
        return None if b is None else len(b.anchors)

    def natural_draws(self):
        """Pooled draws of the interpretable parameters (betas and hyperparameters)."""
        post = self.posterior
        flat = self.draws.flat()
        out = {}
        for j, nm in enumerate(post.data.x_names):
            out[f"beta[{nm}]"] = flat[:, j]
        out.update(post.constrained(flat))
        return out

    def parameter_table(self):
        rows = []
        idx = {n: i for i, n in enumerate(self.report.names)}
        for name, x in self.natural_draws().items():
            raw = name if name in idx else f"log_{name}"
            rows.append({
                "parameter": name,
                "mean": float(np.mean(x)),
                "sd": float(np.std(x, ddof=1)),
                "p25": float(np.percentile(x, 25)),
                "p75": float(np.percentile(x, 75)),
                "rhat": float(self.report.rhat[idx[raw]]) if raw in idx else float("nan"),
                "ess_bulk": float(self.report.ess_bulk[idx[raw]]) if raw in idx else float("nan"),
            })
        return rows


def fit_model(spec, data, sampler=None, truth=None):
    """Build the posterior and sample it; wall time covers sampling only."""
    sampler = sampler or SamplerConfig()
    t0 = time.perf_counter()
    post = Posterior(spec, data)
    build = time.perf_counter() - t0
    dm = run_chains(sampler, post)
    return Fit(posterior=post, draws=dm, report=convergence_report(dm), sampler=sampler,
               truth=truth, build_seconds=build)


@dataclass
class ExperimentResult:
    sl: str
    model: str
    n: int
    n_knots: int
    rows: list
    exec_time: float
    convergence: dict
    efficiency: float
    meta: dict = field(default_factory=dict)
    fit: Fit = field(default=None, repr=False)

    def as_dict(self):
        return {"sl": self.sl, "model": self.model, "n": self.n, "n_knots": self.n_knots,
                "rows": self.rows, "exec_time": self.exec_time,
                "convergence": self.convergence, "efficiency": self.efficiency,
                "log_efficiency": math.log(self.efficiency) if self.efficiency > 0 else None,
                "meta": self.meta}

    @classmethod
    def from_dict(cls, obj):
        return cls(sl=obj["sl"], model=obj["model"], n=obj["n"], n_knots=obj["n_knots"],
                   rows=obj["rows"], exec_time=obj["exec_time"],
                   convergence=obj["convergence"], efficiency=obj["efficiency"],
                   meta=obj.get("meta", {}))

    def estimate(self, parameter):
        for r in self.rows:
            if r["parameter"] == parameter:
                return r
        raise KeyError(parameter)


TRUTH_PARAMETERS = (("beta0", "beta[intercept]", "true_beta0"),
                    ("beta1", "beta[x1]", "true_beta1"),
                    ("sigma", "sigma", "true_sigma"))


def summarize_fit(fit, truth_config):
    natural = fit.natural_draws()
    rows = []
    for label, key, tkey in TRUTH_PARAMETERS:
        x = natural[key]
        mean = float(np.mean(x))
        rows.append({"parameter": label, "truth": truth_config[tkey], "mean": mean,
                     "p25": float(np.percentile(x, 25)), "p75": float(np.percentile(x, 75)),
                     "rel_error": abs(truth_config[tkey] - mean)})
    return rows


def run_experiment(sl, model, sampler=None, seed=None, n_holdout=0):
    """Simulate the SL data for ``model``, fit it and summarise parameter recovery."""
    sampler = sampler or SamplerConfig()
    cfg = sl_simulation(sl, model, seed=seed, n_holdout=n_holdout)
    data, truth = simulate(cfg)
    spec = experiment_spec(model, data.n)
    fit = fit_model(spec, data, sampler, truth=truth)
    rep = fit.report
    return ExperimentResult(
        sl=str(sl).upper(), model=model, n=data.n, n_knots=fit.n_knots,
        rows=summarize_fit(fit, truth.config), exec_time=fit.draws.total_wall_time,
        convergence=rep.summary(), efficiency=rep.efficiency,
        meta={"data_seed": cfg.seed, "sampler": sampler.__dict__, "spec": spec.describe()},
        fit=fit)


# --------------------------------------------------------------------------
# prediction


@dataclass
class PredictionResult:
    grid: np.ndarray
    grid_effect: np.ndarray
    holdout_pred: np.ndarray
    holdout_truth: np.ndarray
    rmse: float
    rmse_standardized: float
    grid_rmse: float = float("nan")

    def as_dict(self):
        return {"rmse": self.rmse, "rmse_standardized": self.rmse_standardized,
                "grid_rmse": self.grid_rmse, "n_grid": int(len(self.grid)),
                "n_holdout": int(len(self.holdout_pred))}


def grid_points(resolution):
    """Cell centres of a ``resolution x resolution`` grid on the unit square."""
    if resolution < 1:
        raise ConfigError("grid resolution must be at least 1")
    g = (np.arange(resolution) + 0.5) / resolution
    gx, gy = np.meshgrid(g, g)
    return np.column_stack([gx.ravel(), gy.ravel()])


def posterior_mean_field(fit, targets, max_draws=400):
    """Posterior-mean spatial effect at ``targets`` (thinned to ``max_draws``)."""
    flat = fit.draws.flat()
    step = max(1, len(flat) // max_draws)
    return fit.posterior.spatial_effect_at(flat[::step], targets).mean(axis=0)


def predict_experiment(fit, grid_resolution=20, truth=None):
    """Score the posterior-mean noiseless surface against the simulation truth.

    The error is measured at the withheld locations (``x1`` known there) and,
    when the truth field is a closed-form surface, on the grid.  The
    standardised RMSE divides by the standard deviation of the fitted data.
    """
    truth = truth or fit.truth
    grid = grid_points(grid_resolution)
    grid_effect = posterior_mean_field(fit, grid)
    flat = fit.draws.flat()
    beta = flat[:, fit.posterior.beta_slice].mean(axis=0)
    sd_y = float(np.std(fit.data.y, ddof=1))
    out = PredictionResult(grid=grid, grid_effect=grid_effect, holdout_pred=np.empty(0),
                           holdout_truth=np.empty(0), rmse=float("nan"),
                           rmse_standardized=float("nan"))
    if truth is None:
        return out
    if len(truth.holdout_coords):
        Xh = np.column_stack([np.ones(len(truth.holdout_x1)), truth.holdout_x1])
        pred = Xh @ beta + posterior_mean_field(fit, truth.holdout_coords)
        target = truth.holdout_mean()
        out.holdout_pred = pred
        out.holdout_truth = target
        out.rmse = float(np.sqrt(np.mean((pred - target) ** 2)))
        out.rmse_standardized = out.rmse / sd_y
    if truth.surface:
        surf = SplineSurface(**{k: np.asarray(v) if k in ("knots", "weights") else v
                                for k, v in truth.surface.items()})
        f_true = surf(grid)
        # the intercept absorbs any constant offset between the two fields
        shift = beta[0] - truth.config["true_beta0"]
        out.grid_rmse = float(np.sqrt(np.mean((grid_effect + shift - f_true) ** 2)))
    return out


# --------------------------------------------------------------------------
# reports


def table1_rows(results):
    rows = []
    for r in sorted(results, key=lambda r: (sl_index(r.sl), r.model)):
        for p in r.rows:
            rows.append({"sl": r.sl, "model": r.model, "n": r.n, "n_knots": r.n_knots,
                         "parameter": p["parameter"], "truth": p["truth"], "mean": p["mean"],
                         "p25": p["p25"], "p75": p["p75"], "rel_error": p["rel_error"],
                         "exec_time": r.exec_time, "rhat": r.convergence["rhat"],
                         "min_ess": r.convergence["min_ess"]})
    return rows


TABLE1_HEADER = ("sl", "model", "n", "n_knots", "parameter", "truth", "mean", "p25", "p75",
                 "rel_error", "exec_time", "rhat", "min_ess")


def table1_markdown(rows):
    head = "| SL | model | parameter | truth | mean | 25% | 75% | rel. error | time (s) | max Rhat |"
    lines = [head, "|" + "---|" * 10]
    for r in rows:
        lines.append(f"| {r['sl']} | {r['model']} | {r['parameter']} | {r['truth']:.2f} | "
                     f"{r['mean']:.3f} | {r['p25']:.3f} | {r['p75']:.3f} | {r['rel_error']:.3f} | "
                     f"{r['exec_time']:.1f} | {r['rhat']:.3f} |")
    return "\n".join(lines) + "\n"


def efficiency_series(results):
    """Efficiency series: log(min ESS / seconds) per SL and model."""
    return [{"sl": r.sl, "n": r.n, "model": r.model, "efficiency": r.efficiency,
             "log_efficiency": math.log(r.efficiency)}
            for r in sorted(results, key=lambda r: (r.model, sl_index(r.sl)))]
