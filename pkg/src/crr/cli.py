"""Command-line entry points: fit, infer, simulate, are, screen.

Configuration lives in a TOML file with optional [solver], [clime] and
[boot] tables; unknown keys are rejected by name. Every JSON report embeds
a provenance block (resolved config, package version, seed) and per-stage
timings; numeric output is deterministic given the config and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .bootstrap import bootstrap, build_sci, pair_scores
from .efficiency import (
    CauchyLaw,
    MixtureNormalLaw,
    NormalLaw,
    are_vs_composite,
    are_vs_cqr,
    are_vs_huber,
    are_vs_ols,
)
from .kernels import KernelSpec, LossConfig
from .precision import clime_rows, debias, default_gamma, hessian
from .simulate import (
    Scenario,
    kendall_screen,
    kendall_tau,
    parse_index_spec,
    run_scenario,
)
from .solver import (
    Dataset,
    PenaltySpec,
    default_lambda_grid,
    fit,
    select_lambda_cv,
    select_lambda_hbic,
    standardize,
)

__all__ = ["main", "load_csv", "save_dataset", "RunConfig"]


class StageError(Exception):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage


class _Timer:
    def __init__(self):
        self.timings = {}

    def stage(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.timings[name] = time.perf_counter() - t0
        return out


# ---------------------------------------------------------------- csv i/o

def _read_table(path):
    """Parse a headed CSV into (column names, float matrix), validating
    every cell; errors name the offending data row (1-based) and column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: file is empty")
        header = [c.strip() for c in header]
        rows = []
        for rnum, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ValueError(
                    f"{path}: row {rnum} has {len(rec)} cells, expected {len(header)}"
                )
            vals = []
            for cname, cell in zip(header, rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: non-numeric value {cell!r} at row {rnum}, "
                        f"column {cname!r}"
                    )
                if not math.isfinite(v):
                    raise ValueError(
                        f"{path}: non-finite value at row {rnum}, column {cname!r}"
                    )
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def load_csv(path, standardize_data=False):
    """Load a dataset: one column named 'y' (case-insensitive) is the
    response, the remaining numeric columns are predictors in file order."""
    data, _ = load_csv_named(path, standardize_data)
    return data


def load_csv_named(path, standardize_data=False):
    header, mat = _read_table(path)
    y_cols = [k for k, c in enumerate(header) if c.lower() == "y"]
    if len(y_cols) != 1:
        raise ValueError(f"{path}: expected exactly one 'y' column, found {len(y_cols)}")
    k = y_cols[0]
    predictors = [c for i, c in enumerate(header) if i != k]
    X = np.delete(mat, k, axis=1)
    data = Dataset(X, mat[:, k])
    if standardize_data:
        data = standardize(data)
    return data, predictors


def save_dataset(path, data: Dataset, columns=None):
    """Write a dataset back to CSV at full float precision."""
    columns = columns or [f"x{j + 1}" for j in range(data.p)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y"] + list(columns))
        for i in range(data.n):
            writer.writerow(
                [f"{data.Y[i]:.17g}"] + [f"{v:.17g}" for v in data.X[i]]
            )


# ---------------------------------------------------------------- config

_SCHEMA = {
    "": {"kernel", "h", "standardize", "seed", "threads"},
    "solver": {
        "penalty", "lambda", "a", "R", "lambda_select", "grid_size",
        "grid_min_ratio", "folds", "max_pairs", "tol", "max_iter",
    },
    "clime": {"gamma", "tol", "max_iter"},
    "boot": {"B", "alpha", "G", "studentized"},
}

_DEFAULTS = {
    "kernel": "epanechnikov",
    "h": 1.0,
    "standardize": False,
    "seed": 0,
    "threads": 0,
    "solver.penalty": "lasso",
    "solver.lambda": None,
    "solver.a": None,
    "solver.R": None,
    "solver.lambda_select": None,
    "solver.grid_size": 50,
    "solver.grid_min_ratio": 0.01,
    "solver.folds": 10,
    "solver.max_pairs": None,
    "solver.tol": 1e-7,
    "solver.max_iter": 5000,
    "clime.gamma": None,
    "clime.tol": None,
    "clime.max_iter": None,
    "boot.B": 500,
    "boot.alpha": 0.05,
    "boot.G": "all",
    "boot.studentized": True,
}


class RunConfig:
    """Flat, validated view of the TOML config; values under dotted keys."""

    def __init__(self, values):
        self.values = dict(_DEFAULTS)
        self.values.update(values)
        if self.values["solver.lambda_select"] is None:
            self.values["solver.lambda_select"] = (
                "fixed" if self.values["solver.lambda"] is not None else "cv"
            )

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_file(cls, path):
        if path is None:
            return cls({})
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        flat = {}
        for key, val in raw.items():
            if isinstance(val, dict):
                if key not in _SCHEMA or key == "":
                    raise ValueError(f"unknown config table [{key}]")
                for sub, v in val.items():
                    if sub not in _SCHEMA[key]:
                        raise ValueError(f"unknown config key {key}.{sub}")
                    flat[f"{key}.{sub}"] = v
            else:
                if key not in _SCHEMA[""]:
                    raise ValueError(f"unknown config key {key}")
                flat[key] = val
        return cls(flat)

    def echo(self):
        return {k: self.values[k] for k in sorted(self.values)}


def _threads(cfg_val):
    env = os.environ.get("CRR_THREADS")
    if env:
        return max(1, int(env))
    if cfg_val and int(cfg_val) > 0:
        return int(cfg_val)
    return os.cpu_count() or 1


def _provenance(cfg: RunConfig, seed):
    return {"config": cfg.echo(), "version": __version__, "seed": seed}


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        if math.isnan(f):
            return "nan"
        return f
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonify(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- stages

def _loss_config(cfg: RunConfig) -> LossConfig:
    return LossConfig(KernelSpec(cfg["kernel"]), float(cfg["h"]))


def _select_lambda(data, lcfg, cfg: RunConfig):
    rule = cfg["solver.lambda_select"]
    fam = cfg["solver.penalty"]
    if rule == "fixed":
        lam = cfg["solver.lambda"]
        if lam is None:
            raise ValueError("lambda_select='fixed' needs solver.lambda")
        return float(lam)
    grid = default_lambda_grid(
        data, lcfg, size=int(cfg["solver.grid_size"]),
        min_ratio=float(cfg["solver.grid_min_ratio"]),
    )
    if rule == "cv":
        return select_lambda_cv(
            data, lcfg, fam, grid, folds=int(cfg["solver.folds"]),
            a=cfg["solver.a"], l1_radius=cfg["solver.R"],
        )
    if rule == "hbic":
        return select_lambda_hbic(
            data, lcfg, fam, grid, a=cfg["solver.a"], l1_radius=cfg["solver.R"]
        )
    raise ValueError(f"unknown lambda_select {rule!r}")


def _fit_stage(data, lcfg, cfg, lam):
    pen = PenaltySpec(cfg["solver.penalty"], lam, a=cfg["solver.a"], l1_radius=cfg["solver.R"])
    max_pairs = cfg["solver.max_pairs"]
    return fit(
        data, lcfg, pen,
        tol=float(cfg["solver.tol"]), max_iter=int(cfg["solver.max_iter"]),
        max_pairs=int(max_pairs) if max_pairs else None, seed=int(cfg["seed"]),
    )


# ---------------------------------------------------------------- commands

def cmd_fit(args):
    cfg = RunConfig.from_file(args.config)
    seed = int(args.seed if args.seed is not None else cfg["seed"])
    cfg.values["seed"] = seed
    timer = _Timer()
    data, names = timer.stage("load", load_csv_named, args.data, cfg["standardize"])
    lcfg = _loss_config(cfg)
    lam = timer.stage("select_lambda", _select_lambda, data, lcfg, cfg)
    fr = timer.stage("fit", _fit_stage, data, lcfg, cfg, lam)
    report = {
        "provenance": _provenance(cfg, seed),
        "lambda_used": fr.lambda_used,
        "converged": fr.converged,
        "iterations": fr.iterations,
        "objective_value": fr.objective_value,
        "beta_hat": dict(zip(names, fr.beta_hat)),
        "support": [names[j] for j in np.nonzero(fr.beta_hat)[0]],
        "timings": timer.timings,
    }
    _write_json(args.out, report)
    print(f"fit: lambda={fr.lambda_used:.6g} support={len(report['support'])} -> {args.out}")
    return 0


def cmd_infer(args):
    cfg = RunConfig.from_file(args.config)
    seed = int(args.seed if args.seed is not None else cfg["seed"])
    cfg.values["seed"] = seed
    alpha = float(args.alpha if args.alpha is not None else cfg["boot.alpha"])
    g_spec = args.G if args.G is not None else cfg["boot.G"]
    timer = _Timer()
    data, names = timer.stage("load", load_csv_named, args.data, cfg["standardize"])
    lcfg = _loss_config(cfg)
    lam = timer.stage("select_lambda", _select_lambda, data, lcfg, cfg)
    fr = timer.stage("fit", _fit_stage, data, lcfg, cfg, lam)
    J = timer.stage("hessian", hessian, data, lcfg, fr.residuals)
    gamma = cfg["clime.gamma"]
    gamma = float(gamma) if gamma else default_gamma(J, data.n)
    prec = timer.stage(
        "clime", clime_rows, J, gamma, threads=_threads(cfg["threads"]),
        tol=cfg["clime.tol"], max_iter=cfg["clime.max_iter"],
    )
    deb = timer.stage("debias", debias, fr, prec, data, lcfg)
    agg = timer.stage("pair_scores", pair_scores, data, lcfg, fr.residuals)
    G = timer.stage("parse_G", _parse_g, g_spec, data.p)
    boot = timer.stage(
        "bootstrap", bootstrap, prec, agg, data.n, G, alpha,
        B=int(cfg["boot.B"]), studentized=bool(cfg["boot.studentized"]), seed=seed,
    )
    sci = timer.stage("build_sci", build_sci, deb, boot)

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "name", "beta_tilde", "lower", "upper", "excludes_zero"])
        for i, k in enumerate(sci.G):
            writer.writerow([
                int(k) + 1, names[int(k)],
                f"{sci.beta_tilde[i]:.17g}", f"{sci.lower[i]:.17g}",
                f"{sci.upper[i]:.17g}", int(sci.excludes_zero[i]),
            ])
    report = {
        "provenance": _provenance(cfg, seed),
        "alpha": alpha,
        "lambda_used": fr.lambda_used,
        "converged": fr.converged,
        "gamma_used": prec.gamma_n,
        "gamma_inflated_rows": prec.inflated_rows,
        "max_violation": prec.max_violation,
        "q_star": boot.Q_star,
        "studentized": boot.studentized,
        "beta_hat": dict(zip(names, fr.beta_hat)),
        "beta_tilde": dict(zip(names, deb.beta_tilde)),
        "significant": [names[int(k)] for i, k in enumerate(sci.G) if sci.excludes_zero[i]],
        "timings": timer.timings,
    }
    report_path = args.report or (os.path.splitext(args.out)[0] + ".json")
    _write_json(report_path, report)
    print(
        f"infer: {len(sci.G)} intervals at alpha={alpha:g}, "
        f"{int(sci.excludes_zero.sum())} exclude zero -> {args.out}"
    )
    return 0


def _parse_g(spec, p):
    if isinstance(spec, str) and "," in spec:
        spec = [int(tok) for tok in spec.split(",") if tok.strip()]
    return parse_index_spec(spec, p)


_ERROR_KEYS = {
    "error", "error_sigma", "error_scale", "error_w", "error_sigma1", "error_sigma2",
}
_SCENARIO_KEYS = {
    "id", "n", "p", "sigma", "rho", "band_offdiag", "penalty", "lambda_select",
    "lambda", "reps", "B", "alpha", "seed", "kernel", "h", "folds", "grid_size",
    "grid_min_ratio", "gamma", "studentized", "G", "beta_true",
} | _ERROR_KEYS


def _error_law(table):
    kind = table.get("error", "normal")
    if kind == "normal":
        return NormalLaw(sigma=float(table.get("error_sigma", 1.0)))
    if kind == "mixture":
        return MixtureNormalLaw(
            w=float(table.get("error_w", 0.95)),
            sigma1=float(table.get("error_sigma1", 1.0)),
            sigma2=float(table.get("error_sigma2", 100.0)),
        )
    if kind == "cauchy":
        return CauchyLaw(scale=float(table.get("error_scale", 1.0)))
    raise ValueError(f"unknown error law {kind!r}")


def _scenario_from_table(table):
    unknown = set(table) - _SCENARIO_KEYS
    if unknown:
        raise ValueError(f"unknown scenario key {sorted(unknown)[0]!r}")
    if "id" not in table:
        raise ValueError("each [[scenario]] needs an 'id'")
    return Scenario(
        n=int(table.get("n", 100)),
        p=int(table.get("p", 50)),
        sigma_kind=table.get("sigma", "toeplitz"),
        rho=float(table.get("rho", 0.5)),
        band_offdiag=float(table.get("band_offdiag", 0.48)),
        error=_error_law(table),
        beta_true=table.get("beta_true"),
        G=table.get("G", "1..5"),
        penalty=table.get("penalty", "lasso"),
        lambda_select=table.get("lambda_select", "cv"),
        lambda_fixed=table.get("lambda"),
        reps=int(table.get("reps", 200)),
        B=int(table.get("B", 300)),
        alpha=float(table.get("alpha", 0.05)),
        seed=int(table.get("seed", 0)),
        kernel=table.get("kernel", "epanechnikov"),
        h=float(table.get("h", 1.0)),
        cv_folds=int(table.get("folds", 10)),
        grid_size=int(table.get("grid_size", 20)),
        grid_min_ratio=float(table.get("grid_min_ratio", 0.15)),
        gamma=table.get("gamma"),
        studentized=bool(table.get("studentized", True)),
        scenario_id=str(table["id"]),
    )


def cmd_simulate(args):
    with open(args.scenarios, "rb") as fh:
        raw = tomllib.load(fh)
    tables = raw.get("scenario")
    if not tables:
        raise ValueError(f"{args.scenarios}: no [[scenario]] tables")
    extra = set(raw) - {"scenario"}
    if extra:
        raise ValueError(f"unknown config table [{sorted(extra)[0]}]")
    scenarios = [_scenario_from_table(t) for t in tables]
    ids = [sc.scenario_id for sc in scenarios]
    if len(set(ids)) != len(ids):
        raise ValueError("scenario ids must be unique")

    done = set()
    if os.path.exists(args.out):
        with open(args.out, newline="") as fh:
            done = {row["scenario_id"] for row in csv.DictReader(fh)}
    new_file = not os.path.exists(args.out)
    workers = args.workers or _threads(0)

    sidecar_path = os.path.splitext(args.out)[0] + ".json"
    sidecar = {}
    if os.path.exists(sidecar_path):
        with open(sidecar_path) as fh:
            sidecar = json.load(fh)

    ran = 0
    with open(args.out, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(["scenario_id", "cr", "al", "mc_se", "reps", "failures"])
        for sc in scenarios:
            if sc.scenario_id in done:
                print(f"simulate: {sc.scenario_id} already present, skipping")
                continue
            t0 = time.perf_counter()
            report = run_scenario(sc, workers=workers)
            writer.writerow([
                sc.scenario_id, f"{report.cr:.17g}", f"{report.al:.17g}",
                f"{report.mc_se:.17g}", report.reps_completed, report.failures,
            ])
            fh.flush()
            sidecar[sc.scenario_id] = {
                "settings": {
                    k: _jsonify(v) for k, v in vars(sc).items() if k != "error"
                } | {"error": type(sc.error).__name__, "error_params": vars(sc.error)},
                "cr": report.cr,
                "al": report.al,
                "mc_se": report.mc_se,
                "reps_completed": report.reps_completed,
                "failures": report.failures,
                "invalid": report.invalid,
                "version": __version__,
                "wall_seconds": time.perf_counter() - t0,
            }
            _write_json(sidecar_path, sidecar)
            flag = " INVALID" if report.invalid else ""
            print(
                f"simulate: {sc.scenario_id} cr={report.cr:.3f} al={report.al:.3f} "
                f"({report.reps_completed} reps, {report.failures} failures){flag}"
            )
            ran += 1
    print(f"simulate: {ran} scenario(s) run -> {args.out}")
    return 0


def cmd_are(args):
    law = {
        "normal": lambda: NormalLaw(sigma=args.sigma),
        "mixture": lambda: MixtureNormalLaw(w=args.mix_w, sigma1=args.mix_sigma1, sigma2=args.mix_sigma2),
        "cauchy": lambda: CauchyLaw(scale=args.scale),
    }[args.error]()
    lcfg = LossConfig(KernelSpec(args.kernel), args.h)
    if args.target == "ols":
        rep = are_vs_ols(law, lcfg)
    elif args.target == "huber":
        rep = are_vs_huber(law, lcfg, args.tau)
    elif args.target == "cqr":
        rep = are_vs_cqr(law, lcfg)
    else:
        rep = are_vs_composite(law, lcfg)
    payload = {
        "target": rep.target,
        "error": args.error,
        "kernel": args.kernel,
        "h": rep.h_used,
        "tau": rep.tau,
        "numerator": rep.numerator,
        "denominator_sq": rep.denominator_sq,
        "are_value": rep.are_value,
        "extras": rep.extras,
        "version": __version__,
    }
    text = json.dumps(_jsonify(payload), indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    val = "inf" if math.isinf(rep.are_value) else f"{rep.are_value:.4f}"
    print(f"are({args.error} vs {args.target}) = {val}", file=sys.stderr)
    return 0


def cmd_screen(args):
    timer = _Timer()
    data, names = timer.stage("load", load_csv_named, args.data, False)
    keep = timer.stage("screen", kendall_screen, data, args.keep)
    taus = {int(j): kendall_tau(data.X[:, int(j)], data.Y) for j in keep}
    reduced = Dataset(data.X[:, keep], data.Y)
    save_dataset(args.out, reduced, columns=[names[int(j)] for j in keep])
    _write_json(
        os.path.splitext(args.out)[0] + ".json",
        {
            "kept_columns": [names[int(j)] for j in keep],
            "tau": {names[int(j)]: taus[int(j)] for j in keep},
            "provenance": {
                "config": {"data": args.data, "keep": args.keep},
                "version": __version__,
                "seed": None,
            },
            "timings": timer.timings,
        },
    )
    print(f"screen: kept {args.keep} of {data.p} predictors -> {args.out}")
    return 0


# ---------------------------------------------------------------- parser

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="crr",
        description="Penalized convoluted rank regression and simultaneous inference",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="penalized fit, JSON report")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--config", default=None)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--seed", type=int, default=None)
    p_fit.set_defaults(func=cmd_fit)

    p_inf = sub.add_parser("infer", help="fit + debias + simultaneous intervals")
    p_inf.add_argument("--data", required=True)
    p_inf.add_argument("--config", default=None)
    p_inf.add_argument("--alpha", type=float, default=None)
    p_inf.add_argument("--G", default=None, help='"all", "1..k", or comma list of 1-based indices')
    p_inf.add_argument("--out", required=True, help="interval table CSV")
    p_inf.add_argument("--report", default=None, help="JSON report path (default: out with .json)")
    p_inf.add_argument("--seed", type=int, default=None)
    p_inf.set_defaults(func=cmd_infer)

    p_sim = sub.add_parser("simulate", help="run coverage scenarios")
    p_sim.add_argument("--scenarios", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--workers", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_are = sub.add_parser("are", help="relative-efficiency calculator")
    p_are.add_argument("--error", choices=["normal", "mixture", "cauchy"], required=True)
    p_are.add_argument("--kernel", default="epanechnikov")
    p_are.add_argument("--h", type=float, default=1.0)
    p_are.add_argument("--target", choices=["ols", "huber", "cqr", "composite"], required=True)
    p_are.add_argument("--tau", type=float, default=3.0)
    p_are.add_argument("--sigma", type=float, default=1.0)
    p_are.add_argument("--scale", type=float, default=1.0)
    p_are.add_argument("--mix-w", type=float, default=0.95)
    p_are.add_argument("--mix-sigma1", type=float, default=1.0)
    p_are.add_argument("--mix-sigma2", type=float, default=100.0)
    p_are.add_argument("--out", default=None)
    p_are.set_defaults(func=cmd_are)

    p_scr = sub.add_parser("screen", help="rank-correlation predictor screening")
    p_scr.add_argument("--data", required=True)
    p_scr.add_argument("--keep", type=int, required=True)
    p_scr.add_argument("--out", required=True)
    p_scr.set_defaults(func=cmd_screen)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"crr {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"crr {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
