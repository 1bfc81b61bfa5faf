"""Command-line interface: ``lagr fit | simulate | oracle | predict``.

Every subcommand writes a ``manifest.json`` that echoes the fully resolved
configuration.  Passing it back with ``--manifest`` reruns the command with
the same settings; flags given explicitly on the command line still win.
"""
import argparse
import datetime
import os
import sys
import time

import numpy as np

from . import __version__
from ._backend import BACKEND
from .errors import LagrError
from .io import (BOSTON_SCHEMA, PATH_COLUMNS, PREDICTION_COLUMNS, REPLICATE_COLUMNS, STUDY_COLUMNS,
                 SURFACE_COLUMNS, DatasetSchema, FORMAT_VERSION, default_output_dir, file_sha256, load_dataset,
                 read_json, read_points, read_scenario_file, resolve_input, write_csv, write_json,
                 write_study, write_study_replicates, write_surface, write_tuning_path)
from .kernels import BandwidthSpec, KernelSpec
from .surface import FitConfig, default_workers, fit_surface
from .tuning import GridSpec

# fields that legitimately differ between otherwise identical runs
RUNTIME_KEYS = ("timestamp", "elapsed_seconds", "workers")
# manifest keys that are not command parameters
_NOT_PARAMS = {"command", "manifest", "func", "workers", "output_dir", "seed_given"}


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("%r is not an integer" % text) from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1, got %d" % v)
    return v


def _lambda(text):
    if text == "aic":
        return text
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("lambda must be 'aic' or a number, got %r" % text) from None
    if not v >= 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError("lambda must be finite and >= 0, got %r" % text)
    return v


def _common(p):
    p.add_argument("--output-dir", default=None,
                   help="output directory (default: $LAGR_OUTPUT_DIR or ./lagr-output)")
    p.add_argument("--seed", type=int, default=1, help="random seed (recorded in the manifest)")
    p.add_argument("--workers", type=_positive_int, default=None,
                   help="worker processes (default: available CPUs); 1 runs sequentially")
    p.add_argument("--manifest", default=None, help="rerun with the configuration stored in a manifest.json")


def _fit_options(p):
    p.add_argument("--input", default="@boston", help="CSV path, or @boston for the bundled data")
    p.add_argument("--x-col", default=None)
    p.add_argument("--y-col", default=None)
    p.add_argument("--response", default=None)
    p.add_argument("--covariates", default=None, help="comma-separated covariate columns")
    p.add_argument("--kernel", default="epanechnikov", choices=["epanechnikov"])
    p.add_argument("--bandwidth-mode", default="nearest_neighbor", choices=["nearest_neighbor", "fixed"])
    p.add_argument("--bandwidth", type=float, default=0.26,
                   help="nearest-neighbour target ratio or fixed bandwidth")
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--lambda", dest="lam", type=_lambda, default="aic", help="'aic' or a fixed penalty")
    p.add_argument("--grid-points", type=_positive_int, default=50)
    p.add_argument("--grid-ratio", type=float, default=1e-3)
    p.add_argument("--family", default="gaussian", choices=["gaussian", "poisson", "binomial"])
    p.add_argument("--method", default="lagr", choices=["lagr", "vcr"])
    p.add_argument("--standardize", dest="standardize", action="store_true", default=True,
                   help="fit on unit-variance covariates (default)")
    p.add_argument("--no-standardize", dest="standardize", action="store_false")
    p.add_argument("--eval-points", default=None,
                   help="CSV with u,v columns; default is the observation locations")


def build_parser():
    parser = argparse.ArgumentParser(prog="lagr", description="Local adaptive grouped regularization")
    parser.add_argument("--version", action="version", version="lagr %s" % __version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a coefficient surface")
    _fit_options(p)
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict the response at new points from local fits")
    _fit_options(p)
    p.add_argument("--at", required=False, default=None,
                   help="CSV with u, v and one column per covariate")
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="run the simulation study")
    p.add_argument("--spec", required=False, default=None, help="scenario file with a [study] section")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", help="empirical oracle-property diagnostics")
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--lambda-rule", default="aic", help="'aic', a fixed number, or 'rate:ALPHA' for n**ALPHA")
    p.add_argument("--ns", default="100,200,400", help="comma-separated sample sizes")
    p.add_argument("--replicates", type=_positive_int, default=200)
    p.add_argument("--surface-replicates", type=_positive_int, default=5)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--sigma-eps", type=float, default=0.5)
    p.add_argument("--truth-covariance", default="gaussian", choices=["exponential", "gaussian"])
    _common(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def _params(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_PARAMS}


def _out_dir(args):
    d = args.output_dir or default_output_dir()
    os.makedirs(d, exist_ok=True)
    return d


def _workers(args):
    return args.workers or default_workers()


def _manifest(args, extra, started):
    doc = {
        "lagr_version": __version__,
        "format_version": FORMAT_VERSION,
        "command": args.command,
        "config": _params(args),
        "seed": args.seed,
        "backend": BACKEND,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "elapsed_seconds": time.time() - started,
        "workers": _workers(args),
    }
    doc.update(extra)
    return doc


def _load(args):
    path = resolve_input(args.input)
    if args.input == "@boston" and args.x_col is None and args.covariates is None:
        schema = BOSTON_SCHEMA
    else:
        if not (args.x_col and args.y_col and args.response and args.covariates):
            raise LagrError("--x-col, --y-col, --response and --covariates are required for a custom input")
        schema = DatasetSchema(args.x_col, args.y_col, args.response,
                               tuple(c.strip() for c in args.covariates.split(",") if c.strip()))
    return load_dataset(path, schema), schema, path


def _config(args):
    KernelSpec(args.kernel)
    bw = BandwidthSpec(args.bandwidth_mode, args.bandwidth)
    return FitConfig(bw, gamma=args.gamma, lam=args.lam, grid=GridSpec(args.grid_points, args.grid_ratio),
                     family=args.family, method=args.method, keep_path=True, standardize=args.standardize)


def _report_failures(failures, stream=None):
    stream = stream or sys.stderr
    for i, loc, msg in failures:
        print("location %d at (%s, %s) failed: %s" % (i, loc[0], loc[1], msg), file=stream)


def cmd_fit(args):
    started = time.time()
    ds, schema, path = _load(args)
    cfg = _config(args)
    locs = None
    if args.eval_points:
        pts = read_points(args.eval_points)
        locs = np.array([[r["u"], r["v"]] for r in pts])
    surf = fit_surface(ds, cfg, locs, workers=_workers(args))
    out = _out_dir(args)
    write_surface(os.path.join(out, "surface.csv"), surf)
    write_tuning_path(os.path.join(out, "tuning_path.csv"), surf)
    extra = {
        "input": {"path": args.input, "sha256": file_sha256(path), "n": ds.n,
                  "schema": {"x_col": schema.x_col, "y_col": schema.y_col, "response_col": schema.response_col,
                             "covariate_cols": list(schema.covariate_cols)}},
        "outputs": {"surface.csv": list(SURFACE_COLUMNS), "tuning_path.csv": list(PATH_COLUMNS)},
        "n_locations": int(surf.locations.shape[0]),
        "failures": [{"index": i, "location": list(loc), "error": msg} for i, loc, msg in surf.failures],
    }
    write_json(os.path.join(out, "manifest.json"), _manifest(args, extra, started))
    _report_failures(surf.failures)
    print("fit %d locations, %d failed; results in %s" % (surf.locations.shape[0], len(surf.failures), out))
    return 1 if surf.failures else 0


def cmd_predict(args):
    started = time.time()
    if not args.at:
        raise LagrError("predict needs --at with a CSV of u, v and covariate columns")
    ds, schema, path = _load(args)
    pts = read_points(args.at)
    names = ds.covariate_names[1:]
    missing = [c for c in names if c not in pts[0]]
    if missing:
        raise LagrError("%s is missing covariate column(s) %s" % (args.at, ", ".join(missing)))
    locs = np.array([[r["u"], r["v"]] for r in pts])
    X = np.array([[1.0] + [r[c] for c in names] for r in pts])
    cfg = _config(args)
    surf = fit_surface(ds, cfg, locs, workers=_workers(args))
    failed = {f[0] for f in surf.failures}
    rows = []
    for i in range(locs.shape[0]):
        if i in failed:
            continue
        # evaluated at its own centre the local fit reduces to x'beta
        rows.append((locs[i, 0], locs[i, 1], float(X[i] @ surf.beta[i]), bool(surf.converged[i])))
    out = _out_dir(args)
    write_csv(os.path.join(out, "predictions.csv"), PREDICTION_COLUMNS, rows)
    extra = {"input": {"path": args.input, "sha256": file_sha256(path), "n": ds.n},
             "points": {"path": args.at, "sha256": file_sha256(args.at), "m": len(pts)},
             "outputs": {"predictions.csv": list(PREDICTION_COLUMNS)},
             "failures": [{"index": i, "location": list(loc), "error": msg} for i, loc, msg in surf.failures]}
    write_json(os.path.join(out, "manifest.json"), _manifest(args, extra, started))
    _report_failures(surf.failures)
    return 1 if surf.failures else 0


def cmd_simulate(args):
    from dataclasses import replace

    from .simulation import run_study

    started = time.time()
    if not args.spec:
        raise LagrError("simulate needs --spec with a scenario file")
    settings, options = read_scenario_file(args.spec)
    if args.seed_given:
        settings = [replace(s, seed=args.seed) for s in settings]
        options["seed"] = args.seed
    else:
        args.seed = options["seed"]
    reports = run_study(settings, options["methods"], workers=_workers(args), gamma=options["gamma"])
    out = _out_dir(args)
    write_study(os.path.join(out, "study.csv"), reports)
    write_study_replicates(os.path.join(out, "study_replicates.csv"), reports)
    failures = [{"n": r.spec.subsample_n, "rho": r.spec.rho, "sigma_eps": r.spec.sigma_eps, "method": r.method,
                 "replicate": f[0], "index": f[1], "error": f[3]} for r in reports for f in r.failures]
    extra = {"scenario": options, "spec_sha256": file_sha256(args.spec), "n_settings": len(settings),
             "outputs": {"study.csv": list(STUDY_COLUMNS), "study_replicates.csv": list(REPLICATE_COLUMNS)},
             "failures": failures}
    write_json(os.path.join(out, "manifest.json"), _manifest(args, extra, started))
    print("%d settings x %d methods; results in %s" % (len(settings), len(options["methods"]), out))
    return 0


def cmd_oracle(args):
    from .simulation import oracle_check

    started = time.time()
    try:
        ns = tuple(int(v) for v in args.ns.split(",") if v.strip())
    except ValueError:
        raise LagrError("--ns must be a comma-separated list of integers") from None
    rep = oracle_check(args.gamma, args.lambda_rule, ns, args.replicates, args.seed,
                       args.surface_replicates, args.rho, args.sigma_eps, args.truth_covariance,
                       workers=_workers(args))
    out = _out_dir(args)
    doc = {"gamma": rep.gamma, "gamma_ok": rep.gamma_ok, "gamma_message": rep.gamma_message,
           "lambda_rule": rep.lambda_rule, "levels": rep.levels, "settings": rep.settings,
           "zero_freq_gap_ok": rep.gap_ok()}
    write_json(os.path.join(out, "oracle_report.json"), doc)
    write_json(os.path.join(out, "manifest.json"),
               _manifest(args, {"outputs": {"oracle_report.json": sorted(doc)}}, started))
    if not rep.gamma_ok:
        print("warning: " + rep.gamma_message, file=sys.stderr)
    for lv in rep.levels:
        print("n=%d  zero-freq beta1=%.3f beta4=%.3f gap=%.3f  T mean=%.3f var=%.3f (%d reps)"
              % (lv["n"], lv["zero_freq_beta1"], lv["zero_freq_beta4"], lv["zero_freq_gap"],
                 lv["t_mean"], lv["t_var"], lv["t_count"]))
    print("zero-frequency gap >= 0.5 at every n: %s" % ("yes" if rep.gap_ok() else "no"))
    return 0


def _apply_manifest(parser, argv):
    """Reparse ``argv`` with the stored configuration as defaults."""
    args = parser.parse_args(argv)
    if not args.manifest:
        return args
    doc = read_json(args.manifest)
    if doc.get("command") != args.command:
        raise LagrError("manifest %s is for %r, not %r" % (args.manifest, doc.get("command"), args.command))
    stored = dict(doc.get("config", {}))
    stored.setdefault("seed", doc.get("seed", 1))
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**stored)
    return parser.parse_args(argv)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _apply_manifest(parser, argv)
        args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
        return args.func(args)
    except LagrError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except ValueError as exc:  # input/configuration errors derive from ValueError
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
