"""Command-line interface.

Every subcommand reads and writes plain files (CSV, JSON, INI).  Errors are
reported on stderr as one JSON object with ``kind`` and ``message``; exit
codes are 0 on success, 2 for input errors, 3 for numerical failures and 4
when ``--strict`` convergence checks fail.
"""

import argparse
import json
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import io, store
from .diagnostics import convergence_report, loo_compare, posterior_predictive, psis_loo
from .errors import ConfigError, ConvergenceFailure, InputNotFound, SpatialError
from .experiments import (EXPERIMENT_MODELS, ExperimentResult, TABLE1_HEADER, efficiency_series,
                          fit_model, predict_experiment, run_experiment, table1_markdown,
                          table1_rows)
from .models import MODEL_NAMES
from .nuts import SamplerConfig
from .simulate import CpueConfig, SimulationConfig, simulate, synth_cpue

PAPER_SCALE_ITER = 4500
CPUE_FACTORS = ("year", "season", "destine")


def _emit(obj):
    print(json.dumps(obj, indent=2, default=io._json_default))


def _config_kwargs(section, cls):
    """Typed keyword arguments for dataclass ``cls`` from a config section."""
    types = {f.name: f.type for f in fields(cls)}
    defaults = {f.name: f.default for f in fields(cls)}
    out = {}
    for key, value in section.items():
        if key not in types:
            raise ConfigError(f"unknown option {key!r} for {cls.__name__}")
        kind = types[key]
        if isinstance(kind, str):
            kind = type(defaults[key])
        if kind is tuple:
            out[key] = tuple(float(v) for v in io.parse_list(value))
        else:
            out[key] = io.parse_value(value, kind, key)
    return out


# --------------------------------------------------------------------------
# simulate


def dataset_frame(data):
    frame = {"y": data.y, "s1": data.coords[:, 0], "s2": data.coords[:, 1]}
    for j, nm in enumerate(data.x_names):
        if nm != "intercept":
            frame[nm] = data.X[:, j]
    return frame


def cmd_simulate(args):
    cfg = io.read_config(args.config)
    section = dict(cfg.get("main", {}))
    for extra in ("simulation", "cpue"):
        section.update(cfg.get(extra, {}))
    kind = section.pop("kind", "linear")
    out = Path(args.out)
    if kind == "cpue":
        ccfg = CpueConfig(**_config_kwargs(section, CpueConfig))
        sim = synth_cpue(ccfg)
        frame = dict(sim.frame)
        # stored standardised so the CSV reproduces the generator's design
        depth = np.asarray(frame["depth"], dtype=float)
        frame["depth"] = (depth - depth.mean()) / max(depth.std(), 1e-12)
        io.write_dataset(out / "data.csv", frame,
                         ["y", "s1", "s2", "year", "season", "destine", "depth"])
        truth = {"kind": "cpue", "config": asdict(ccfg),
                 "year_effects": sim.year_effects, "site_coords": sim.site_coords,
                 "site_field": sim.site_field}
        io.write_json(out / "truth.json", truth)
        resolved = {"main": {"kind": "cpue", **asdict(ccfg)},
                    "data": {"factors": list(CPUE_FACTORS)}}
        n = sim.dataset.n
    elif kind == "linear":
        scfg = SimulationConfig(**_config_kwargs(section, SimulationConfig))
        data, truth = simulate(scfg)
        io.write_dataset(out / "data.csv", dataset_frame(data))
        io.write_json(out / "truth.json", truth.to_json())
        resolved = {"main": {"kind": "linear", **asdict(scfg)}, "data": {"factors": []}}
        n = data.n
    else:
        raise ConfigError(f"unknown simulation kind {kind!r}; use linear or cpue")
    io.write_config(out / "config.ini", resolved)
    _emit({"out": str(out), "kind": kind, "n": n})
    return 0


# --------------------------------------------------------------------------
# fit


def _sampler_from_args(args, base=None):
    base = base or SamplerConfig()
    updates = {}
    for flag, key in (("chains", "chains"), ("warmup", "warmup"), ("iter", "total_iter"),
                      ("adapt_delta", "adapt_delta"), ("max_treedepth", "max_treedepth"),
                      ("seed", "seed"), ("jobs", "n_jobs")):
        value = getattr(args, flag, None)
        if value is not None:
            updates[key] = value
    if getattr(args, "paper_scale", False) and "total_iter" not in updates:
        updates["total_iter"] = PAPER_SCALE_ITER
    return replace(base, **updates)


def _data_defaults(data_path):
    """Factor declarations from a config.ini written next to the data."""
    side = Path(data_path).parent / "config.ini"
    if side.exists():
        cfg = io.read_config(side)
        if "data" in cfg:
            return io.parse_list(cfg["data"].get("factors"))
    return []


def cmd_fit(args):
    data_path = Path(args.data)
    if not data_path.exists():
        raise InputNotFound(f"no such file: {data_path}")
    cfg = io.read_config(args.config) if args.config else {}
    model_section = dict(cfg.get("model", {}))
    if args.model:
        model_section["name"] = args.model
    if "name" not in model_section:
        raise ConfigError("a model name is required (--model or [model] name)")
    spec = store.model_from_section(model_section)
    sampler = _sampler_from_args(args, store.sampler_from_section(cfg.get("sampler", {})))

    data_cfg = cfg.get("data", {})
    if args.factors is not None:
        factors = io.parse_list(args.factors)
    elif "factors" in data_cfg:
        factors = io.parse_list(data_cfg["factors"])
    else:
        factors = _data_defaults(data_path)
    covariates = io.parse_list(data_cfg["covariates"]) if "covariates" in data_cfg else None
    data = store.load_data(data_path, factors=factors, covariates=covariates)

    truth_path = data_path.parent / "truth.json"
    truth_obj = io.read_json(truth_path) if truth_path.exists() else None
    sim_truth = store.read_truth(truth_path) if truth_obj is not None else None

    fit = fit_model(spec, data, sampler, truth=sim_truth)
    store.save_fit(fit, args.out, data_path=data_path, factors=factors,
                   covariates=covariates, truth=sim_truth or truth_obj)
    summary = fit.report.summary()
    _emit({"out": str(args.out), "model": spec.name, "convergence": summary})
    if args.strict and not store.converged(fit.report):
        raise ConvergenceFailure(f"max Rhat {fit.report.max_rhat:.3f} >= {store.STRICT_RHAT}")
    return 0


# --------------------------------------------------------------------------
# diagnose / ppd / predict


def cmd_diagnose(args):
    fit = store.load_fit(args.fit)
    rep = convergence_report(fit.draws)
    io.write_csv(Path(args.fit) / "convergence.csv", ("parameter", "rhat", "ess_bulk"), rep.rows())
    out = {"fit": str(args.fit), "convergence": rep.summary(),
           "parameters": fit.parameter_table()}
    io.write_json(Path(args.fit) / "diagnose.json", out)
    _emit(out["convergence"])
    if args.strict and not store.converged(rep):
        raise ConvergenceFailure(f"max Rhat {rep.max_rhat:.3f} >= {store.STRICT_RHAT}")
    return 0


def cmd_ppd(args):
    fit = store.load_fit(args.fit)
    ppd = posterior_predictive(fit.posterior, fit.draws, n_rep=args.reps, seed=args.seed)
    reps = ppd.replicates
    rows = [{"replicate": i, "mean": float(r.mean()),
             "sd": float(r.std(ddof=1)) if len(r) > 1 else 0.0} for i, r in enumerate(reps)]
    io.write_csv(Path(args.fit) / "ppd.csv", ("replicate", "mean", "sd"), rows)
    summary = {"model": fit.spec.name, **ppd.as_dict()}
    io.write_json(Path(args.fit) / "ppd_summary.json", summary)
    print("| model | mean data | mean ppd | sd data | sd ppd |")
    print("|---|---|---|---|---|")
    print(f"| {fit.spec.name} | {ppd.mean_data:.2f} | {ppd.mean_ppd:.2f} | "
          f"{ppd.sd_data:.2f} | {ppd.sd_ppd:.2f} |")
    return 0


def cmd_predict(args):
    fit = store.load_fit(args.fit)
    res = predict_experiment(fit, grid_resolution=args.grid)
    rows = [{"s1": g[0], "s2": g[1], "effect": e} for g, e in zip(res.grid, res.grid_effect)]
    io.write_csv(Path(args.fit) / "predictions.csv", ("s1", "s2", "effect"), rows)
    out = res.as_dict()
    io.write_json(Path(args.fit) / "prediction.json", out)
    _emit(out)
    return 0


# --------------------------------------------------------------------------
# compare


COMPARE_HEADER = ("model", "elpd_loo", "p_loo", "elpd_diff", "se_diff", "pareto_k_max")


def compare_fits(fit_dirs, sqrt_jacobian=True):
    reports = []
    for d in fit_dirs:
        fit = store.load_fit(d)
        ll = fit.posterior.pointwise_loglik(fit.draws.flat(), sqrt_jacobian=sqrt_jacobian)
        reports.append(psis_loo(ll, name=Path(d).name or fit.spec.name))
    return loo_compare(reports), reports


def compare_markdown(rows):
    lines = ["| model | elpd_loo | p_loo | elpd_diff | se_diff | max k-hat |",
             "|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r['model']} | {r['elpd_loo']:.2f} | {r['p_loo']:.2f} | "
                     f"{r['elpd_diff']:.2f} | {r['se_diff']:.2f} | {r['pareto_k_max']:.2f} |")
    return "\n".join(lines) + "\n"


def cmd_compare(args):
    rows, reports = compare_fits(args.fits, sqrt_jacobian=not args.no_jacobian)
    text = compare_markdown(rows)
    if args.out:
        out = Path(args.out)
        io.write_csv(out / "compare.csv", COMPARE_HEADER, rows)
        io.atomic_write_text(out / "compare.md", text)
        io.write_json(out / "loo.json", {r.name: r.summary() for r in reports})
    print(text, end="")
    return 0


# --------------------------------------------------------------------------
# experiments and reports


def cmd_experiment(args):
    sampler = _sampler_from_args(args)
    res = run_experiment(args.sl, args.model, sampler=sampler, seed=args.data_seed,
                         n_holdout=args.holdout)
    out = Path(args.out)
    fit = res.fit
    out.mkdir(parents=True, exist_ok=True)
    io.write_dataset(out / "data.csv", dataset_frame(fit.data))
    store.save_fit(fit, out, truth=fit.truth)
    record = res.as_dict()
    if args.holdout:
        pred = predict_experiment(fit, grid_resolution=args.grid)
        record["prediction"] = pred.as_dict()
    io.write_json(out / "experiment.json", record)
    _emit({k: record[k] for k in ("sl", "model", "n", "n_knots", "exec_time", "efficiency")})
    return 0


def load_experiments(root):
    root = Path(root)
    if not root.is_dir():
        raise InputNotFound(f"no such directory: {root}")
    found = sorted(root.rglob("experiment.json"))
    if not found:
        raise InputNotFound(f"no experiment.json files under {root}")
    return [ExperimentResult.from_dict(io.read_json(p)) for p in found]


def cmd_report(args):
    results = load_experiments(args.experiments)
    rows = table1_rows(results)
    out = Path(args.out or args.experiments)
    io.atomic_write_text(out / "table1.md", table1_markdown(rows))
    io.write_csv(out / "table1.csv", TABLE1_HEADER, rows)
    series = efficiency_series(results)
    io.write_csv(out / "efficiency.csv", ("sl", "n", "model", "efficiency", "log_efficiency"),
                 series)
    print(table1_markdown(rows), end="")
    return 0


# --------------------------------------------------------------------------
# parser


def _add_sampler_flags(p):
    p.add_argument("--chains", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--iter", type=int, help="iterations per chain including warmup")
    p.add_argument("--adapt-delta", dest="adapt_delta", type=float)
    p.add_argument("--max-treedepth", dest="max_treedepth", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="worker processes for chains")
    p.add_argument("--paper-scale", action="store_true",
                   help=f"use {PAPER_SCALE_ITER} iterations per chain")


def build_parser():
    parser = argparse.ArgumentParser(prog="spatialhmc",
                                     description="Bayesian spatial models sampled with NUTS.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a data set from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model to a CSV data set")
    p.add_argument("--model", choices=MODEL_NAMES)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--factors", help="comma-separated factor columns")
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true")
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", help="convergence report for a fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("ppd", help="posterior predictive summary")
    p.add_argument("--fit", required=True)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ppd)

    p = sub.add_parser("compare", help="PSIS-LOO comparison of fits")
    p.add_argument("--fits", nargs="+", required=True)
    p.add_argument("--no-jacobian", action="store_true",
                   help="leave sqrt-response densities on the transformed scale")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("predict", help="posterior-mean spatial prediction")
    p.add_argument("--fit", required=True)
    p.add_argument("--grid", type=int, default=20)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="tables from experiment directories")
    p.add_argument("--experiments", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("experiment", help="simulate, fit and summarise one SL setting")
    p.add_argument("--sl", required=True)
    p.add_argument("--model", required=True, choices=EXPERIMENT_MODELS)
    p.add_argument("--out", required=True)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--holdout", type=int, default=0)
    p.add_argument("--grid", type=int, default=20)
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpatialError as exc:
        print(json.dumps({"kind": exc.kind, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(json.dumps({"kind": "InputNotFound", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
