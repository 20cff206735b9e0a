"""Fit directories: everything needed to rebuild a posterior and its draws.

Layout::

    config.ini        resolved model / sampler / data settings
    data.csv          copy of the input data
    truth.json        simulation truth, when the data came with one
    draws.csv         post-warmup draws plus sampler telemetry
    summary.json      parameter summaries, convergence, wall times
    convergence.csv   one row per sampled coordinate
"""

import shutil
from pathlib import Path

import numpy as np

from . import io
from .diagnostics import convergence_report
from .errors import ConfigError, InputNotFound
from .experiments import Fit
from .models import ModelSpec, Posterior, model_spec
from .nuts import DrawMatrix, SamplerConfig
from .simulate import Truth

MODEL_OPTIONS = {
    "n_knots": int, "rank": int, "knot_mode": str, "knot_seed": int, "penalty": bool,
    "coef_prior": bool, "fixed_lambda": float, "fixed_sigma": float,
    "mesh_extension": float, "parameterization": str, "coord_scale": float,
}
_SAMPLER_TYPES = {"chains": int, "warmup": int, "total_iter": int, "adapt_delta": float,
                  "max_treedepth": int, "seed": int, "init_radius": float, "n_jobs": int}
STRICT_RHAT = 1.05


def model_from_section(section):
    section = dict(section)
    try:
        name = section.pop("name")
    except KeyError:
        raise ConfigError("model section needs a name") from None
    overrides = {}
    for key, value in section.items():
        if key not in MODEL_OPTIONS:
            raise ConfigError(f"unknown model option {key!r}")
        if value in ("", "none", "None"):
            continue
        overrides[key] = io.parse_value(value, MODEL_OPTIONS[key], key)
    return model_spec(name, **overrides)


def model_section(spec):
    out = {"name": spec.name}
    for key in MODEL_OPTIONS:
        out[key] = getattr(spec, key)
    return out


def sampler_from_section(section):
    kwargs = {}
    for key, value in section.items():
        if key not in _SAMPLER_TYPES:
            raise ConfigError(f"unknown sampler option {key!r}")
        kwargs[key] = io.parse_value(value, _SAMPLER_TYPES[key], key)
    return SamplerConfig(**kwargs)


def sampler_section(cfg):
    return {key: getattr(cfg, key) for key in _SAMPLER_TYPES}


def load_data(path, factors=(), covariates=None):
    return io.read_dataset(path, factors=factors, covariates=covariates)[0]


def save_fit(fit, out_dir, data_path=None, factors=(), covariates=None, truth=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if data_path is not None:
        src = Path(data_path)
        if src.resolve() != (out / "data.csv").resolve():
            shutil.copyfile(src, out / "data.csv")
    truth = truth or fit.truth
    if isinstance(truth, Truth):
        io.write_json(out / "truth.json", truth.to_json())
    elif truth is not None:
        io.write_json(out / "truth.json", truth)
    data_section = {"path": "data.csv", "factors": list(factors)}
    if covariates is not None:
        data_section["covariates"] = list(covariates)
    io.write_config(out / "config.ini", {
        "model": model_section(fit.spec),
        "sampler": sampler_section(fit.sampler),
        "data": data_section,
    })
    fit.draws.to_csv(out / "draws.csv")
    rep = fit.report
    io.write_csv(out / "convergence.csv", ("parameter", "rhat", "ess_bulk"), rep.rows())
    summary = {
        "model": fit.spec.describe(),
        "sampler": sampler_section(fit.sampler),
        "convergence": rep.summary(),
        "parameters": fit.parameter_table(),
        "wall_time_seconds": [float(t) for t in fit.draws.wall_time],
        "total_wall_time_seconds": fit.draws.total_wall_time,
        "build_seconds": fit.build_seconds,
        "step_size": [float(s) for s in fit.draws.step_size],
        "divergences": int(np.sum(fit.draws.divergent)),
        "tps_prior_and_penalty": {"coef_prior": fit.spec.coef_prior, "penalty": fit.spec.penalty}
        if fit.spec.spatial_effect == "tps_lowrank" else None,
    }
    io.write_json(out / "summary.json", summary)
    return out


def load_fit(fit_dir):
    """Rebuild a :class:`~spatialhmc.experiments.Fit` from a fit directory."""
    d = Path(fit_dir)
    if not (d / "config.ini").exists():
        raise InputNotFound(f"{d} is not a fit directory (no config.ini)")
    cfg = io.read_config(d / "config.ini")
    spec = model_from_section(cfg["model"])
    sampler = sampler_from_section(cfg["sampler"])
    data_cfg = cfg.get("data", {})
    cov = data_cfg.get("covariates")
    data = load_data(d / data_cfg.get("path", "data.csv"),
                     factors=io.parse_list(data_cfg.get("factors")),
                     covariates=None if cov is None else io.parse_list(cov))
    post = Posterior(spec, data)
    summary = io.read_json(d / "summary.json")
    if not (d / "draws.csv").exists():
        raise InputNotFound(f"{d / 'draws.csv'} is missing")
    dm = DrawMatrix.from_csv(d / "draws.csv", wall_time=summary.get("wall_time_seconds"))
    if dm.names != post.names:
        raise ConfigError("draws.csv columns do not match the rebuilt model")
    truth = None
    if (d / "truth.json").exists():
        truth = read_truth(d / "truth.json")
    return Fit(posterior=post, draws=dm, report=convergence_report(dm), sampler=sampler,
               truth=truth)


def read_truth(path):
    """Simulation truth stored at ``path``, or ``None`` for other truth records."""
    obj = io.read_json(path)
    return Truth.from_json(obj) if "f" in obj else None


def converged(report, threshold=STRICT_RHAT):
    return bool(np.all(np.nan_to_num(report.rhat, nan=1.0) < threshold))


__all__ = ["save_fit", "load_fit", "model_from_section", "sampler_from_section",
           "read_truth", "converged", "ModelSpec"]
