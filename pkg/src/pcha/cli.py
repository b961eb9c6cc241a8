"""Command-line interface: ``pcha fit`` and ``pcha study``.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as pio
from .basis import OracleCapError
from .causal import counterfactual_means, plugin_ate
from .experiments import PRESETS, STUDIES, resolve_config, run_study
from .losses import LossKind, RiskState, recode_binary, risk
from .model_selection import cv_select, default_grid, make_folds
from .pc import PCWorkingModel, beta_stats_streaming, beta_vector
from .solvers import Mode, SolverConfig, fit_mode
from .svg import slopes_svg

log = logging.getLogger("pcha")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _threads(value):
    if value is not None:
        t = value
    else:
        env = os.environ.get("PCHA_THREADS")
        if env is None or env.strip() == "":
            return 1
        try:
            t = int(env)
        except ValueError:
            raise UsageError(f"PCHA_THREADS must be an integer, got {env!r}") from None
    if t < 1:
        raise UsageError("thread count must be >= 1")
    return t


def _preset(value):
    if value not in PRESETS:
        raise argparse.ArgumentTypeError(
            f"invalid preset {value!r}; available presets: {', '.join(PRESETS)}")
    return value


def build_parser():
    p = _Parser(prog="pcha", description="PC-HAR / PC-HAL / PC-HAGL estimators and studies.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    f = sub.add_parser("fit", help="cross-validated fit on a CSV file")
    f.add_argument("train", help="training CSV with a header row")
    f.add_argument("--response", default="y", help="response column (default: y)")
    f.add_argument("--treatment", default=None,
                   help="0/1 treatment column, placed last in the covariate vector")
    f.add_argument("--covariates", default=None,
                   help="comma-separated covariate columns (default: all others)")
    f.add_argument("--mode", choices=[m.value for m in Mode], default="hal")
    f.add_argument("--loss", choices=[k.value for k in LossKind], default="mse")
    f.add_argument("--folds", type=int, default=5)
    f.add_argument("--seed", type=int, default=1)
    f.add_argument("--grid", default=None, help="comma-separated regularization values")
    f.add_argument("--grid-size", type=int, default=20)
    f.add_argument("--reg", type=float, default=None,
                   help="fixed regularization value (skips cross-validation)")
    f.add_argument("--max-degree", type=int, default=None)
    f.add_argument("--test", default=None, help="CSV to predict on")
    f.add_argument("--predictions", default=None,
                   help="predictions CSV path (default: <test stem>.predictions.csv)")
    f.add_argument("--summary", default=None, help="summary JSON path (default: stdout)")
    f.add_argument("--emit-beta", default=None, metavar="PATH",
                   help="write the full spline coefficient vector beta(alpha) as CSV")
    f.add_argument("--threads", type=int, default=None)

    s = sub.add_parser("study", help="run a simulation study")
    s.add_argument("study", choices=STUDIES)
    s.add_argument("--preset", type=_preset, default="desk")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--replicates", type=int, default=None)
    s.add_argument("--config", default=None, help="JSON file of configuration overrides")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="configuration override (value parsed as JSON when possible)")
    s.add_argument("--out-dir", default=".")
    s.add_argument("--svg", action="store_true", help="also write a log-log SVG")
    s.add_argument("--threads", type=int, default=None)
    return p


# --- fit ---------------------------------------------------------------------

def _covariates(header, args, path):
    reserved = {args.response} | ({args.treatment} if args.treatment else set())
    if args.covariates:
        names = [c.strip() for c in args.covariates.split(",") if c.strip()]
        for c in names:
            if c not in header:
                raise pio.InputError(f"{path}: missing column {c!r}")
    else:
        names = [h for h in header if h not in reserved]
    if args.treatment:
        names = [c for c in names if c != args.treatment] + [args.treatment]
    if not names:
        raise pio.InputError(f"{path}: no covariate columns")
    return names


def _matrix(header, table, names, path):
    return np.column_stack([pio.column(header, table, c, path) for c in names])


def _parse_grid(text):
    try:
        grid = np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise UsageError(f"--grid must be comma-separated numbers, got {text!r}") from None
    if grid.size == 0 or np.any(grid <= 0):
        raise UsageError("--grid values must be positive")
    return np.sort(grid)[::-1]


def cmd_fit(args):
    threads = _threads(args.threads)
    header, table = pio.read_table(args.train)
    y = pio.column(header, table, args.response, args.train)
    names = _covariates(header, args, args.train)
    X = _matrix(header, table, names, args.train)
    kind = LossKind(args.loss)
    if args.treatment:
        a = pio.column(header, table, args.treatment, args.train)
        if not np.isin(a, (0.0, 1.0)).all():
            raise pio.InputError(f"{args.train}: treatment column must be coded 0/1")
    y_fit = recode_binary(y) if kind == LossKind.LOGISTIC else y

    config = SolverConfig()
    model = PCWorkingModel.build(X, max_degree=args.max_degree)
    summary = {"mode": args.mode, "loss": kind.value, "n": int(X.shape[0]),
               "d": int(X.shape[1]), "covariates": names, "response": args.response,
               "rank": int(model.rank), "seed": args.seed}
    if args.reg is not None:
        if args.reg <= 0:
            raise UsageError("--reg must be positive")
        est = fit_mode(model, y_fit, args.mode, kind, args.reg, config=config)
        summary["cv"] = None
    else:
        if args.grid is not None:
            grid = _parse_grid(args.grid)
        else:
            if args.grid_size < 1:
                raise UsageError("--grid-size must be >= 1")
            grid = default_grid(model, size=args.grid_size)
        plan = make_folds(X.shape[0], args.folds, args.seed, grid)
        cv = cv_select(X, y_fit, args.mode, kind, plan, config=config,
                       max_degree=args.max_degree, full_model=model, threads=threads)
        est = cv.refit
        summary["cv"] = {"folds": args.folds, "grid": cv.grid.tolist(),
                         "mean_risk": [None if not np.isfinite(v) else float(v)
                                       for v in cv.mean_risk]}
    alpha = est.alpha
    stats = beta_stats_streaming(model, alpha)
    state = RiskState(model.Z, y_fit, est.intercept)
    summary.update({
        "selected_reg": float(est.diagnostics.get("lambda_har", est.reg_value)),
        "intercept": float(est.intercept),
        "alpha_l1": float(np.abs(alpha).sum()),
        "alpha_l2": float(np.linalg.norm(alpha)),
        "beta_l1": float(stats.l1),
        "J_n": int((np.abs(alpha) > 1e-10).sum()),
        "training_risk": risk(state, kind, alpha),
    })
    if Mode(args.mode) == Mode.HAGL:
        summary["constraint_residual"] = float(est.diagnostics.get("constraint_residual", 0.0))
        summary["constraint_C"] = float(est.reg_value)
        summary["converged"] = bool(est.diagnostics.get("converged", False))
    if args.treatment:
        W = X[:, :-1]
        mu1, mu0 = counterfactual_means(est, W)
        summary["plugin_ate"] = plugin_ate(mu1, mu0)

    if args.emit_beta:
        model.spec._check_cap()  # oracle-cap rule: full beta only for N <= cap
        beta = beta_vector(model, alpha)
        subs = model.spec.subsets
        knot = np.repeat(np.arange(model.n), len(subs))
        sub_lbl = np.array([":".join(str(j + 1) for j in s) for s in subs] * model.n)
        pio.write_columns(args.emit_beta, ["index", "knot", "subset", "beta"],
                          [np.arange(beta.size), knot, sub_lbl, beta])
        summary["beta_path"] = str(args.emit_beta)

    if args.test:
        th, tt = pio.read_table(args.test)
        Xt = _matrix(th, tt, names, args.test)
        pred = est.predict(Xt)
        out = args.predictions or str(Path(args.test).with_suffix("")) + ".predictions.csv"
        cols, vals = ["prediction"], [pred]
        if kind == LossKind.LOGISTIC:
            cols.append("probability")
            vals.append(est.predict_proba(Xt))
        pio.write_columns(out, cols, vals)
        summary["predictions_path"] = out

    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.summary:
        Path(args.summary).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- study -------------------------------------------------------------------

def _parse_overrides(args):
    over = {}
    if args.config:
        try:
            over.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(over, dict):
            raise UsageError("config file must hold a JSON object")
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            over[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            over[k.strip()] = v
    for key in ("study", "preset", "seed"):
        if key in over:
            raise UsageError(f"{key!r} is set by the command line, not by overrides")
    if args.replicates is not None:
        over["replicates"] = args.replicates
    return over


def _print_study(result, out):
    for s in result.slopes:
        out.write(f"slope {s['mode']:<5} {s['metric']:<18} d={s['d']:<3} "
                  f"{s['slope']: .4f} (se {s['stderr']:.4f})\n")
    tables = result.summary.get("tables")
    if tables:
        for mode, row in tables.items():
            for variant, vals in row.items():
                cells = " ".join(f"{k}={vals[k]:.4f}" for k in vals)
                out.write(f"ate {mode:<5} {variant:<20} {cells}\n")


def cmd_study(args):
    threads = _threads(args.threads)
    over = _parse_overrides(args)
    over["threads"] = threads
    try:
        config = resolve_config(args.study, args.preset, seed=args.seed, **over)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    result = run_study(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{config.study}_{config.preset}_seed{config.seed}"
    (out_dir / f"{stem}.csv").write_text(result.to_csv(), encoding="utf-8")
    (out_dir / f"{stem}.json").write_text(result.to_json(), encoding="utf-8")
    if args.svg and result.slopes:
        (out_dir / f"{stem}.svg").write_text(slopes_svg(result.slopes), encoding="utf-8")
    _print_study(result, sys.stdout)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit":
            return cmd_fit(args)
        return cmd_study(args)
    except (UsageError, pio.InputError, OracleCapError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        sys.stderr.write(f"runtime failure: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
