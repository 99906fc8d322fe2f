"""Command-line front end.

Every subcommand accepts ``--config FILE.json``; keys are the long option
names (dashes or underscores). Explicit flags override the file, unknown keys
are rejected. Errors go to stderr as ``wavecqr-error[<kind>]: <message>`` and
map to exit codes 1 (usage), 2 (data) and 3 (non-convergence under
``--strict``).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as wio
from . import socp
from .admm import SolverConfig, fit, kkt_residual
from .experiment import CRITERIA, ExperimentConfig, run_experiment
from .metrics import evaluate_fit
from .model import DimensionError, PenaltySpec, QuantileLevels, build_design, predict_quantile, reconstruct_betas
from .prox import SingularSystemError
from .simgen import SimConfig, gen_dataset
from .tuning import METHOD_RATIOS, default_grid, grid_search, stability_select

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3
SIMULATED_SOURCE = "wavecqr simulate"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _report(kind: str, message: str) -> None:
    print(f"wavecqr-error[{kind}]: {message}", file=sys.stderr)


def _warn(message: str) -> None:
    print(f"wavecqr-warning: {message}", file=sys.stderr)


# defaults live here rather than in argparse so that a config file can sit between them and the flags
SOLVER_DEFAULTS = {"eta": 1.0, "eta1": 1.0, "eps_abs": 1e-4, "eps_rel": 1e-2, "max_outer": 5000,
                   "max_inner": 200, "warm_start": True, "polish": True, "strict": False, "trace": None}
DEFAULTS = {
    "simulate": {"n": 200, "snr": 5.0, "noise": "normal", "seed": 0, "grid_len": 256, "filter": "sym6",
                 "out": None},
    "fit": {"data": None, "out": None, "lambda1": 0.0, "lambda2": 0.0, "tau": None, "K": None,
            "filter": "sym6", **SOLVER_DEFAULTS},
    "tune": {"data": None, "tune_data": None, "out": None, "method": "qSGL", "criterion": "gic",
             "n_lambda": 30, "min_ratio": 1e-3, "ratio": None, "tau": None, "K": None, "filter": "sym6",
             **SOLVER_DEFAULTS},
    "evaluate": {"fit": None, "truth": None, "data": None, "out": None, "filter": None},
    "export-socp": {"data": None, "out": None, "lambda1": 0.0, "lambda2": 0.0, "tau": None, "K": None,
                    "filter": "sym6"},
    "stability-select": {"data": None, "out": None, "method": "qSGL", "B": 100, "threshold": 1e-5, "seed": 0,
                         "jobs": None, "n_lambda": 30, "min_ratio": 1e-3, "tau": None, "K": None,
                         "filter": "sym6", **SOLVER_DEFAULTS},
    "reproduce": {"target": "table1-row", "out": None, "n": 200, "noise": "normal", "snr": 5.0, "reps": 20,
                  "method": "qSGL", "criterion": "gic", "seed": 0, "jobs": None, "n_lambda": 30,
                  "min_ratio": 1e-3, "tau": None, "grid_len": 256, "filter": "sym6", **SOLVER_DEFAULTS},
}
REQUIRED = {"simulate": ("out",), "fit": ("data", "out"), "tune": ("data", "out"),
            "evaluate": ("fit", "truth"), "export-socp": ("data", "out"), "stability-select": ("data", "out"),
            "reproduce": ("out",)}


def _add_solver(p):
    g = p.add_argument_group("solver")
    g.add_argument("--eta", type=float, help="outer augmented-Lagrangian penalty (default 1)")
    g.add_argument("--eta1", type=float, help="inner augmented-Lagrangian penalty (default 1)")
    g.add_argument("--eps-abs", type=float, help="absolute stopping tolerance (default 1e-4)")
    g.add_argument("--eps-rel", type=float, help="relative stopping tolerance (default 1e-2)")
    g.add_argument("--max-outer", type=int, help="outer iteration limit (default 5000)")
    g.add_argument("--max-inner", type=int, help="inner iterations per outer step (default 200)")
    g.add_argument("--no-warm-start", dest="warm_start", action="store_const", const=False,
                   help="restart the inner loop from zero at every outer step")
    g.add_argument("--no-polish", dest="polish", action="store_const", const=False,
                   help="skip the active-set refinement after convergence")
    g.add_argument("--strict", action="store_const", const=True,
                   help="exit with status 3 when a fit does not converge")
    g.add_argument("--trace", help="write one JSON line per outer iteration to this file")


def _add_levels(p, default_note="9 equally spaced levels, or 0.5 for simulated data"):
    p.add_argument("--tau", type=float, action="append", help=f"quantile level, repeatable (default: {default_note})")
    p.add_argument("--K", type=int, help="use K equally spaced levels k/(K+1)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wavecqr", description="Wavelet-based penalized composite quantile regression "
                                             "with multiple functional predictors.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    def cmd(name, help_):
        s = sub.add_parser(name, help=help_, description=help_, argument_default=None)
        s.add_argument("--config", help="JSON file with option values (flags take precedence)")
        return s

    s = cmd("simulate", "Draw a seeded dataset from the simulation design and write it as CSV.")
    s.add_argument("--n", type=int, help="number of observations (default 200)")
    s.add_argument("--snr", type=float, help="signal-to-noise ratio |mean signal| / noise scale (default 5)")
    s.add_argument("--noise", help="1-4 or normal|mixture|t3|cauchy (default normal)")
    s.add_argument("--seed", type=int, help="random seed (default 0)")
    s.add_argument("--grid-len", type=int, help="samples per curve, a power of two (default 256)")
    s.add_argument("--filter", help="wavelet filter used for the true slopes (default sym6)")
    s.add_argument("--out", help="output directory")

    s = cmd("fit", "Fit one penalized model and write coefficients, slope curves and diagnostics.")
    s.add_argument("--data", help="dataset directory (curves.csv, scalars.csv, response.csv)")
    s.add_argument("--out", help="output directory")
    s.add_argument("--lambda1", type=float, help="L1 penalty weight (default 0)")
    s.add_argument("--lambda2", type=float, help="group L2 penalty weight (default 0)")
    s.add_argument("--filter", help="wavelet filter: haar, sym6, daubechies-k (default sym6)")
    _add_levels(s)
    _add_solver(s)

    s = cmd("tune", "Fit a warm-started lambda path and select lambda by GIC or a tuning set.")
    s.add_argument("--data", help="training dataset directory")
    s.add_argument("--tune-data", help="tuning dataset directory (required for --criterion validation)")
    s.add_argument("--out", help="output directory")
    s.add_argument("--method", choices=sorted(METHOD_RATIOS), help="qSGL, qL or qGL (default qSGL)")
    s.add_argument("--criterion", choices=CRITERIA, help="gic or validation (default gic)")
    s.add_argument("--n-lambda", type=int, help="grid size (default 30)")
    s.add_argument("--min-ratio", type=float, help="smallest grid value relative to lambda_max (default 1e-3)")
    s.add_argument("--ratio", type=float, help="override lambda1/lambda2 (default from --method)")
    s.add_argument("--filter", help="wavelet filter (default sym6)")
    _add_levels(s)
    _add_solver(s)

    s = cmd("evaluate", "Score a fit against known true slopes (and a dataset for prediction error).")
    s.add_argument("--fit", help="directory written by fit or tune")
    s.add_argument("--truth", help="directory written by simulate (truth.csv)")
    s.add_argument("--data", help="dataset for prediction error (default: the truth directory)")
    s.add_argument("--filter", help="wavelet filter (default: the one recorded by the fit)")
    s.add_argument("--out", help="JSON report path (default: print to stdout)")

    s = cmd("export-socp", "Write the second-order cone form of one penalized problem.")
    s.add_argument("--data", help="dataset directory")
    s.add_argument("--out", help="output file")
    s.add_argument("--lambda1", type=float, help="L1 penalty weight (default 0)")
    s.add_argument("--lambda2", type=float, help="group L2 penalty weight (default 0)")
    s.add_argument("--filter", help="wavelet filter (default sym6)")
    _add_levels(s)

    s = cmd("stability-select", "Bootstrap, tune each refit by GIC and keep predictors by median slope norm.")
    s.add_argument("--data", help="dataset directory")
    s.add_argument("--out", help="output directory")
    s.add_argument("--method", choices=sorted(METHOD_RATIOS), help="qSGL, qL or qGL (default qSGL)")
    s.add_argument("--B", type=int, help="bootstrap resamples (default 100)")
    s.add_argument("--threshold", type=float, help="median norm cut-off (default 1e-5)")
    s.add_argument("--seed", type=int, help="master seed (default 0)")
    s.add_argument("--jobs", type=int, help="worker processes (default: available cores)")
    s.add_argument("--n-lambda", type=int, help="grid size (default 30)")
    s.add_argument("--min-ratio", type=float, help="smallest grid value relative to lambda_max (default 1e-3)")
    s.add_argument("--filter", help="wavelet filter (default sym6)")
    _add_levels(s)
    _add_solver(s)

    s = cmd("reproduce", "Monte Carlo reproduction of one simulation-table row.")
    s.add_argument("target", nargs="?", choices=["table1-row"], help="what to reproduce (table1-row)")
    s.add_argument("--out", help="output directory")
    s.add_argument("--n", type=int, help="training size; tuning n and test 10n are drawn too (default 200)")
    s.add_argument("--noise", help="1-4 or normal|mixture|t3|cauchy (default normal)")
    s.add_argument("--snr", type=float, help="signal-to-noise ratio (default 5)")
    s.add_argument("--reps", type=int, help="Monte Carlo repetitions (default 20)")
    s.add_argument("--method", help="comma-separated subset of qSGL,qL,qGL (default qSGL)")
    s.add_argument("--criterion", help="comma-separated subset of gic,validation (default gic)")
    s.add_argument("--seed", type=int, help="master seed (default 0)")
    s.add_argument("--jobs", type=int, help="worker processes (default: available cores)")
    s.add_argument("--n-lambda", type=int, help="grid size (default 30)")
    s.add_argument("--min-ratio", type=float, help="smallest grid value relative to lambda_max (default 1e-3)")
    s.add_argument("--grid-len", type=int, help="samples per curve (default 256)")
    s.add_argument("--filter", help="wavelet filter (default sym6)")
    s.add_argument("--tau", type=float, action="append", help="quantile level, repeatable (default 0.5)")
    _add_solver(s)
    return p


def resolve(command: str, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags; unknown config keys are a usage error."""
    cfg = dict(DEFAULTS[command])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        for key, val in loaded.items():
            k = key.replace("-", "_")
            if k not in cfg:
                raise UsageError(f"unknown config key {key!r} for {command}")
            cfg[k] = val
    for key, val in vars(args).items():
        if key in cfg and val is not None:
            cfg[key] = val
    missing = [k for k in REQUIRED[command] if not cfg.get(k)]
    if missing:
        raise UsageError(f"{command} needs --{missing[0].replace('_', '-')}")
    return cfg


def _solver(cfg: dict) -> SolverConfig:
    try:
        return SolverConfig(eta=float(cfg["eta"]), eta1=float(cfg["eta1"]), eps_abs=float(cfg["eps_abs"]),
                            eps_rel=float(cfg["eps_rel"]), max_outer=int(cfg["max_outer"]),
                            max_inner=int(cfg["max_inner"]), warm_start=bool(cfg["warm_start"]),
                            polish=bool(cfg["polish"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _levels(cfg: dict, simulated: bool) -> QuantileLevels:
    try:
        if cfg.get("tau"):
            taus = cfg["tau"] if isinstance(cfg["tau"], list) else [cfg["tau"]]
            return QuantileLevels(sorted(float(t) for t in taus))
        if cfg.get("K"):
            return QuantileLevels.equally_spaced(int(cfg["K"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return QuantileLevels([0.5]) if simulated else QuantileLevels.equally_spaced(9)


def _is_simulated(directory) -> bool:
    try:
        prov, *_ = wio.read_csv(Path(directory) / "response.csv")
    except wio.DataFormatError:
        return False
    return prov.get("source") == SIMULATED_SOURCE


def _input_dir(path) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise wio.DataFormatError(p, "input directory does not exist")
    return p


def _output_dir(path) -> Path:
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise UsageError(f"output path {p} exists and is not a directory")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _provenance(command: str, cfg: dict) -> dict:
    # output locations are left out so identical runs write identical files anywhere
    clean = {k: v for k, v in cfg.items() if k not in ("config", "out", "trace")}
    return {"command": command, "config": clean}


def _trace_sink(cfg):
    return open(cfg["trace"], "w") if cfg.get("trace") else None


def _check_converged(fits, cfg) -> int:
    bad = [f for f in fits if not f.converged]
    if not bad:
        return EXIT_OK
    msg = f"{len(bad)} of {len(fits)} fits stopped at the iteration limit without meeting the tolerances"
    if cfg.get("strict"):
        _report("solver", msg)
        return EXIT_SOLVER
    _warn(msg)
    return EXIT_OK


def _write_fit(out: Path, fr, taus, filt: str, prov: dict, extra: dict) -> None:
    wio.write_coefficients(out / "coefficients.csv", fr.params, taus.taus, prov)
    wio.write_curves(out / "beta.csv", reconstruct_betas(fr.params, filt), prov)
    diag = {"provenance": prov, "filter": filt, "taus": taus.taus, **fr.summary(), **extra}
    wio.write_json(out / "diagnostics.json", diag)


def cmd_simulate(cfg: dict) -> int:
    try:
        sc = SimConfig(n=int(cfg["n"]), snr=float(cfg["snr"]), noise=str(cfg["noise"]), seed=int(cfg["seed"]),
                       N=int(cfg["grid_len"]), filter=str(cfg["filter"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _output_dir(cfg["out"])
    sim = gen_dataset(sc)
    prov = {**_provenance("simulate", cfg), "source": SIMULATED_SOURCE, "seed": sc.seed}
    wio.write_dataset(out, sim.data, prov)
    wio.write_truth(out, sim.beta_true, sim.theta_true, sim.gamma_true, sim.sigma, sim.alpha_true, prov,
                    extra={"provenance": prov, "signal_mean": float(np.mean(sim.noiseless_response))})
    return EXIT_OK


def cmd_fit(cfg: dict) -> int:
    data_dir = _input_dir(cfg["data"])
    data = wio.read_dataset(data_dir)
    taus = _levels(cfg, _is_simulated(data_dir))
    solver = _solver(cfg)
    try:
        pen = PenaltySpec(float(cfg["lambda1"]), float(cfg["lambda2"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _output_dir(cfg["out"])
    design = build_design(data, cfg["filter"])
    trace = _trace_sink(cfg)
    try:
        fr = fit(design, data.response, taus, pen, solver, trace=trace)
    finally:
        if trace:
            trace.close()
    kkt = kkt_residual(fr.params, design, data.response, taus, pen)
    prov = _provenance("fit", {**cfg, "tau": list(taus.taus)})
    _write_fit(out, fr, taus, cfg["filter"], prov, {"kkt_residual": kkt})
    return _check_converged([fr], cfg)


def cmd_tune(cfg: dict) -> int:
    data_dir = _input_dir(cfg["data"])
    train = wio.read_dataset(data_dir)
    tune = wio.read_dataset(_input_dir(cfg["tune_data"])) if cfg.get("tune_data") else None
    if cfg["criterion"] not in CRITERIA or cfg["method"] not in METHOD_RATIOS:
        raise UsageError("unknown method or criterion")
    if cfg["criterion"] == "validation" and tune is None:
        raise UsageError("--criterion validation needs --tune-data")
    taus = _levels(cfg, _is_simulated(data_dir))
    solver = _solver(cfg)
    out = _output_dir(cfg["out"])
    design = build_design(train, cfg["filter"])
    ratio = None if cfg.get("ratio") is None else float(cfg["ratio"])
    grid = default_grid(design, train.response, taus, cfg["method"], cfg["criterion"],
                        int(cfg["n_lambda"]), float(cfg["min_ratio"]), ratio=ratio)
    d_tune = build_design(tune, cfg["filter"]) if tune is not None else None
    res = grid_search(design, d_tune, grid, taus, solver, cfg["filter"], y_train=train.response,
                      y_tune=tune.response if tune is not None else None, method=cfg["method"])
    best = res.best
    prov = _provenance("tune", {**cfg, "tau": list(taus.taus)})
    wio.write_records(out / "path.csv", res.path, prov)
    sel = {"provenance": prov, "criterion": res.criterion, "index": res.index,
           "lambda1": res.lambda1, "lambda2": res.lambda2, "ratio": grid.ratio}
    wio.write_json(out / "selection.json", sel)
    _write_fit(out, best, taus, cfg["filter"], prov, {"selection": sel})
    return _check_converged(res.fits, cfg)


def cmd_evaluate(cfg: dict) -> int:
    fit_dir = _input_dir(cfg["fit"])
    truth_dir = _input_dir(cfg["truth"])
    params, taus = wio.read_coefficients(fit_dir / "coefficients.csv")
    filt = cfg.get("filter")
    if not filt:
        diag_path = fit_dir / "diagnostics.json"
        filt = json.loads(diag_path.read_text()).get("filter", "sym6") if diag_path.exists() else "sym6"
    beta_true, theta_true, _ = wio.read_truth(truth_dir)
    data = wio.read_dataset(_input_dir(cfg["data"]) if cfg.get("data") else truth_dir)
    if beta_true.shape != (params.m, params.N):
        raise DimensionError(f"truth is {beta_true.shape[0]} x {beta_true.shape[1]}, fit is {params.m} x {params.N}")
    design = build_design(data, filt)
    k_mid = int(np.argmin(np.abs(taus - 0.5)))
    rep = evaluate_fit(params.theta, reconstruct_betas(params, filt), beta_true, theta_true,
                       predict_quantile(params, design, k_mid), data.response)
    report = {"provenance": _provenance("evaluate", cfg), "filter": filt, **rep.as_dict()}
    if cfg.get("out"):
        wio.write_json(cfg["out"], report)
    else:
        sys.stdout.write(wio.dumps_json(report))
    return EXIT_OK


def cmd_export_socp(cfg: dict) -> int:
    data_dir = _input_dir(cfg["data"])
    data = wio.read_dataset(data_dir)
    taus = _levels(cfg, _is_simulated(data_dir))
    try:
        pen = PenaltySpec(float(cfg["lambda1"]), float(cfg["lambda2"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    problem = socp.build_socp(build_design(data, cfg["filter"]), data.response, taus, pen)
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    socp.export(problem, cfg["out"])
    return EXIT_OK


def _jobs(cfg) -> int:
    j = cfg.get("jobs")
    return int(j) if j else (os.cpu_count() or 1)


def cmd_stability(cfg: dict) -> int:
    data_dir = _input_dir(cfg["data"])
    data = wio.read_dataset(data_dir)
    taus = _levels(cfg, _is_simulated(data_dir))
    solver = _solver(cfg)
    if int(cfg["B"]) < 1:
        raise UsageError("--B must be at least 1")
    out = _output_dir(cfg["out"])
    rep = stability_select(data, taus, cfg["method"], int(cfg["B"]), float(cfg["threshold"]), int(cfg["seed"]),
                           solver, cfg["filter"], int(cfg["n_lambda"]), float(cfg["min_ratio"]), _jobs(cfg))
    prov = _provenance("stability-select", {**cfg, "tau": list(taus.taus), "jobs": None})
    wio.write_records(out / "boxplot.csv", rep.boxplot_rows(), prov)
    norm_rows = [{"resample": b + 1, **{f"norm_{l + 1}": rep.norms[b, l] for l in range(data.m)}}
                 for b in range(rep.norms.shape[0])]
    wio.write_records(out / "norms.csv", norm_rows, prov)
    wio.write_json(out / "selection.json", {
        "provenance": prov, "selected": [l + 1 for l in rep.selected], "medians": rep.medians,
        "threshold": rep.threshold, "degenerate_resamples": [b + 1 for b in rep.degenerate],
    })
    if rep.degenerate:
        _warn(f"{len(rep.degenerate)} bootstrap resamples had a constant response and were skipped")
    return EXIT_OK


def _split_list(value, allowed, what):
    items = value if isinstance(value, list) else [v.strip() for v in str(value).split(",") if v.strip()]
    for v in items:
        if v not in allowed:
            raise UsageError(f"unknown {what} {v!r}; choose from {', '.join(allowed)}")
    if not items:
        raise UsageError(f"no {what} given")
    return tuple(items)


def cmd_reproduce(cfg: dict) -> int:
    methods = _split_list(cfg["method"], tuple(METHOD_RATIOS), "method")
    criteria = _split_list(cfg["criterion"], CRITERIA, "criterion")
    taus = tuple(_levels(cfg, True).taus)
    try:
        ec = ExperimentConfig(n=int(cfg["n"]), snr=float(cfg["snr"]), noise=str(cfg["noise"]),
                              reps=int(cfg["reps"]), methods=methods, criteria=criteria, taus=taus,
                              seed=int(cfg["seed"]), N=int(cfg["grid_len"]), filter=str(cfg["filter"]),
                              n_lambda=int(cfg["n_lambda"]), min_ratio=float(cfg["min_ratio"]),
                              solver=_solver(cfg))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _output_dir(cfg["out"])
    res = run_experiment(ec, _jobs(cfg))
    # parallelism does not change results, so it stays out of the provenance
    prov = {"command": "reproduce", "target": cfg["target"], "config": ec.as_dict(), "seed": ec.seed}
    wio.write_records(out / "reps.csv", res.rows, prov)
    wio.write_records(out / "aggregate.csv", res.aggregate(), prov)
    failed = [r for r in res.rows if not r["converged"]]
    if failed:
        msg = f"{len(failed)} selected fits did not converge"
        if cfg.get("strict"):
            _report("solver", msg)
            return EXIT_SOLVER
        _warn(msg)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "tune": cmd_tune, "evaluate": cmd_evaluate,
            "export-socp": cmd_export_socp, "stability-select": cmd_stability, "reproduce": cmd_reproduce}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        _report("usage", str(exc))
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except SingularSystemError as exc:
        _report("data", str(exc))
        return EXIT_DATA
    except (wio.DataFormatError, DimensionError, socp.ParseError) as exc:
        _report("data", str(exc))
        return EXIT_DATA
    except ValueError as exc:
        _report("data", str(exc))
        return EXIT_DATA
    except OSError as exc:
        _report("io", f"{exc.filename or ''} {exc.strerror or exc}".strip())
        return EXIT_DATA


def main() -> None:
    sys.exit(run())

