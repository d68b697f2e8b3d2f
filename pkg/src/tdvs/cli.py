"""Command-line interface: CSV in, reproducible JSON documents out.

Every output embeds a manifest of the resolved configuration and the
input digest, and all floats are written with 17 significant digits, so
a rerun with the same seed produces a byte-identical file regardless of
the thread count.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .cis import SelectionConfig, tdvs_select
from .em import EMConfig, FitError, fit
from .model import Dataset, Hyperparams
from .simulation import run_study, scenario_preset
from .tuning import TuningGrid, cv_tune_t0

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class InputError(ValueError):
    """Bad input file or invalid option combination."""


def _render(value, indent=0):
    """JSON text with floats at 17 significant digits (bit-exact reruns)."""
    pad = " " * indent
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f'{pad}  {json.dumps(str(k))}: {_render(v, indent + 2)}'
                 for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        if len(value) == 0:
            return "[]"
        items = [f"{pad}  {_render(v, indent + 2)}" for v in value]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if v != v or v in (float("inf"), float("-inf")):
            return json.dumps(None)
        return format(v, ".17g")
    if isinstance(value, np.ndarray):
        return _render(value.tolist(), indent)
    return json.dumps(value)


def write_document(doc, path):
    text = _render(doc) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def load_csv(path, response_column, has_header=True):
    """Read a numeric CSV into a Dataset.

    The response column may be named (requires a header) or given as a
    0-based index.  Any missing or non-numeric cell is an error naming
    its row and column.  Returns (dataset, digest, response_name).
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise InputError(f"{path}: file is empty")
    header = None
    if has_header:
        header = [name.strip() for name in rows[0]]
        rows = rows[1:]
    ncol = len(rows[0]) if rows else (len(header) if header else 0)
    if ncol < 2:
        raise InputError(f"{path}: need at least a response and one covariate")

    if isinstance(response_column, str) and not response_column.lstrip("-").isdigit():
        if header is None:
            raise InputError("response column given by name but the file has no header")
        try:
            resp_idx = header.index(response_column)
        except ValueError:
            raise InputError(
                f"response column {response_column!r} not in header {header}") from None
    else:
        resp_idx = int(response_column)
        if not (0 <= resp_idx < ncol):
            raise InputError(f"response column index {resp_idx} out of range "
                             f"(file has {ncol} columns)")

    matrix = np.empty((len(rows), ncol))
    for i, row in enumerate(rows):
        rownum = i + 2 if has_header else i + 1
        if len(row) != ncol:
            raise InputError(f"{path}: row {rownum} has {len(row)} cells, "
                             f"expected {ncol}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                raise InputError(f"{path}: missing value at row {rownum}, "
                                 f"column {j + 1}")
            try:
                matrix[i, j] = float(cell)
            except ValueError:
                raise InputError(f"{path}: non-numeric value {cell!r} at row "
                                 f"{rownum}, column {j + 1}") from None
    if not np.all(np.isfinite(matrix)):
        i, j = np.argwhere(~np.isfinite(matrix))[0]
        rownum = int(i) + (2 if has_header else 1)
        raise InputError(f"{path}: non-finite value at row {rownum}, "
                         f"column {int(j) + 1}")
    keep = [j for j in range(ncol) if j != resp_idx]
    names = tuple(header[j] for j in keep) if header else None
    try:
        data = Dataset(matrix[:, keep], matrix[:, resp_idx], names)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    resp_name = header[resp_idx] if header else f"column {resp_idx}"
    return data, _file_digest(path), resp_name


def _default_threads():
    env = os.environ.get("TDVS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"TDVS_THREADS is not an integer: {env!r}") from None
    return max(1, os.cpu_count() or 1)


def _manifest(command, args, **extra):
    doc = {"tool": "tdvs", "version": __version__, "command": command}
    doc.update(extra)
    # thread count deliberately omitted: it cannot affect results
    return doc


def _fit_payload(result):
    return {
        "beta0": result.params.beta0,
        "beta": list(result.params.beta),
        "nu": result.params.nu,
        "gamma": result.params.gamma,
        "theta": result.params.theta,
        "inclusion_probs": list(result.inclusion_probs),
        "iterations": result.iterations,
        "converged": result.converged,
        "final_marginal_log_posterior": result.final_marginal_log_posterior,
        "objective_trace": list(result.objective_trace),
    }


def _selection_payload(result, column_names):
    trace = {}
    for key, value in result.stage_trace.items():
        trace[key] = value
    return {
        "selected_indices": list(result.selected_indices),
        "selected_names": ([column_names[j] for j in result.selected_indices]
                           if column_names else None),
        "stage_trace": trace,
        "fit": _fit_payload(result.fit),
    }


def _add_io_args(sub, with_output=True):
    sub.add_argument("--input", required=True, help="CSV file path")
    sub.add_argument("--response", required=True,
                     help="response column name or 0-based index")
    sub.add_argument("--no-header", action="store_true",
                     help="the CSV has no header row")
    if with_output:
        sub.add_argument("--output", default=None,
                         help="output file ('-' or omitted for stdout)")


def _add_fit_args(sub):
    sub.add_argument("--t0", type=float, default=10.0, help="spike rate")
    sub.add_argument("--t1", type=float, default=1.0, help="slab rate")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--max-iter", type=int, default=500)
    sub.add_argument("--tol", type=float, default=1e-7)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tdvs",
        description="Variable selection for modal regression with "
                    "half-t mixture errors")
    parser.add_argument("--version", action="version",
                        version=f"tdvs {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p_fit = subs.add_parser("fit", help="fit the model once")
    _add_io_args(p_fit)
    _add_fit_args(p_fit)

    p_sel = subs.add_parser("select", help="run the selection pipeline")
    _add_io_args(p_sel)
    _add_fit_args(p_sel)
    p_sel.add_argument("--permutations", type=int, default=200)
    p_sel.add_argument("--alpha", type=float, default=0.05)
    p_sel.add_argument("--prescreen", choices=("auto", "on", "off"),
                       default="auto",
                       help="auto enables pre-screening iff p > n")
    p_sel.add_argument("--group-size", type=int, default=4)
    p_sel.add_argument("--b1", type=int, default=20,
                       help="group-stage permutations")
    p_sel.add_argument("--b2", type=int, default=20,
                       help="individual-stage permutations")
    p_sel.add_argument("--alpha0", type=float, default=0.3)
    p_sel.add_argument("--threads", type=int, default=None)
    p_sel.add_argument("--tune-t0", default=None, metavar="GRID",
                       help="comma-separated t0 grid to tune by "
                            "cross-validation (overrides --t0)")

    p_sim = subs.add_parser("simulate", help="run a replicated study")
    p_sim.add_argument("--scenario", required=True,
                       help="preset name, e.g. table1-mixhat")
    p_sim.add_argument("--replicates", type=int, default=50)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--threads", type=int, default=None)
    p_sim.add_argument("--output", default=None)
    p_sim.add_argument("--t0", type=float, default=10.0)
    p_sim.add_argument("--t1", type=float, default=1.0)
    p_sim.add_argument("--permutations", type=int, default=200)
    p_sim.add_argument("--alpha", type=float, default=0.05)
    p_sim.add_argument("--prescreen", choices=("auto", "on", "off"),
                       default="auto")
    p_sim.add_argument("--tune-t0", default=None, metavar="GRID",
                       help="tune t0 per replicate on this grid "
                            "(default: tune iff p > n)")

    p_tune = subs.add_parser("tune", help="cross-validate the spike rate")
    _add_io_args(p_tune)
    p_tune.add_argument("--grid", default="1,3,10,30,100",
                        help="comma-separated t0 candidates")
    p_tune.add_argument("--t1", type=float, default=1.0)
    p_tune.add_argument("--folds", type=int, default=5)
    p_tune.add_argument("--seed", type=int, default=0)
    return parser


def _parse_grid(text):
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise InputError(f"bad grid {text!r}: expected comma-separated numbers")
    if not values:
        raise InputError("grid is empty")
    return values


def _cmd_fit(args):
    data, digest, resp = load_csv(args.input, args.response,
                                  has_header=not args.no_header)
    hyper = Hyperparams.for_dimension(data.p, args.t0, args.t1)
    config = EMConfig(convergence_tol=args.tol, max_iterations=args.max_iter)
    result = fit(data, hyper, config)
    doc = {
        "manifest": _manifest(
            "fit", args, input_digest=digest, response=resp,
            n=data.n, p=data.p, t0=args.t0, t1=args.t1,
            a=hyper.a, b=hyper.b, c=hyper.c, d=hyper.d,
            beta0_prior_variance=hyper.beta0_prior_variance,
            max_iterations=args.max_iter, convergence_tol=args.tol,
            seed=args.seed, constant_columns=data.constant_columns()),
        "fit": _fit_payload(result),
    }
    write_document(doc, args.output)
    return EXIT_OK


def _cmd_select(args):
    data, digest, resp = load_csv(args.input, args.response,
                                  has_header=not args.no_header)
    threads = args.threads if args.threads else _default_threads()
    config = EMConfig(convergence_tol=args.tol, max_iterations=args.max_iter)
    prescreen = {"auto": data.p > data.n, "on": True,
                 "off": False}[args.prescreen]
    t0 = args.t0
    tuning = None
    if args.tune_t0:
        grid = TuningGrid(t0_candidates=_parse_grid(args.tune_t0),
                          t1_fixed=args.t1, seed=args.seed)
        hyper_base = Hyperparams.for_dimension(data.p, t0, args.t1)
        tuning = cv_tune_t0(data, grid, hyper_base, config)
        t0 = tuning.chosen_t0
    hyper = Hyperparams.for_dimension(data.p, t0, args.t1)
    sel = SelectionConfig(
        final_permutations=args.permutations,
        group_permutations=args.b1, individual_permutations=args.b2,
        alpha=args.alpha, alpha0=args.alpha0, group_size=args.group_size,
        enable_prescreen=prescreen, master_seed=args.seed)
    result = tdvs_select(data, hyper, config, sel, threads=threads)
    doc = {
        "manifest": _manifest(
            "select", args, input_digest=digest, response=resp,
            n=data.n, p=data.p, t0=t0, t1=args.t1,
            a=hyper.a, b=hyper.b, c=hyper.c, d=hyper.d,
            beta0_prior_variance=hyper.beta0_prior_variance,
            max_iterations=args.max_iter, convergence_tol=args.tol,
            permutations=args.permutations, alpha=args.alpha,
            alpha0=args.alpha0, b1=args.b1, b2=args.b2,
            group_size=args.group_size, prescreen=prescreen,
            tuned=args.tune_t0 is not None, seed=args.seed,
            constant_columns=data.constant_columns()),
        "selection": _selection_payload(result, data.column_names),
    }
    if tuning is not None:
        doc["tuning"] = {"chosen_t0": tuning.chosen_t0,
                         "pmse_table": [list(row) for row in tuning.pmse_table]}
    write_document(doc, args.output)
    return EXIT_OK


def _cmd_simulate(args):
    scenario = scenario_preset(args.scenario, replicates=args.replicates,
                               seed=args.seed)
    threads = args.threads if args.threads else _default_threads()
    prescreen = {"auto": scenario.p > scenario.n, "on": True,
                 "off": False}[args.prescreen]
    if args.tune_t0:
        tune_grid = TuningGrid(t0_candidates=_parse_grid(args.tune_t0),
                               t1_fixed=args.t1)
    elif scenario.p > scenario.n:
        tune_grid = TuningGrid(t1_fixed=args.t1)
    else:
        tune_grid = None
    sel = SelectionConfig(final_permutations=args.permutations,
                          alpha=args.alpha, enable_prescreen=prescreen,
                          master_seed=args.seed)
    result = run_study(scenario, t0=args.t0, t1=args.t1, sel_config=sel,
                       tune_grid=tune_grid, threads=threads)
    doc = {
        "manifest": _manifest(
            "simulate", args, scenario=args.scenario,
            replicates=args.replicates, seed=args.seed, n=scenario.n,
            p=scenario.p, beta0_true=scenario.beta0_true,
            beta_true=list(scenario.beta_true),
            covariate_spec=scenario.covariate_spec,
            error_spec=repr(scenario.error_spec), t0=args.t0, t1=args.t1,
            permutations=args.permutations, alpha=args.alpha,
            prescreen=prescreen,
            tuning_grid=(list(tune_grid.t0_candidates) if tune_grid else None)),
        "aggregate": {name: {"mean": mean, "se": se}
                      for name, (mean, se) in result.aggregate.items()},
        "n_failed": result.n_failed,
        "replicates": [
            {"replicate": r, "selected": list(sel_idx), "t0": t0_used,
             "tpr": m.tpr, "fpr": m.fpr, "acr": m.acr, "mse": m.mse}
            for r, m, sel_idx, t0_used in result.per_replicate
        ],
    }
    write_document(doc, args.output)
    return EXIT_OK


def _cmd_tune(args):
    data, digest, resp = load_csv(args.input, args.response,
                                  has_header=not args.no_header)
    grid = TuningGrid(t0_candidates=_parse_grid(args.grid), t1_fixed=args.t1,
                      folds=args.folds, seed=args.seed)
    hyper_base = Hyperparams.for_dimension(data.p, grid.t0_candidates[0],
                                           grid.t1_fixed)
    result = cv_tune_t0(data, grid, hyper_base)
    doc = {
        "manifest": _manifest(
            "tune", args, input_digest=digest, response=resp, n=data.n,
            p=data.p, grid=list(grid.t0_candidates), t1=grid.t1_fixed,
            folds=grid.folds, seed=grid.seed,
            constant_columns=data.constant_columns()),
        "chosen_t0": result.chosen_t0,
        "pmse_table": [list(row) for row in result.pmse_table],
    }
    write_document(doc, args.output)
    return EXIT_OK


_COMMANDS = {"fit": _cmd_fit, "select": _cmd_select,
             "simulate": _cmd_simulate, "tune": _cmd_tune}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (InputError, FileNotFoundError) as exc:
        print(f"tdvs: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"tdvs: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FitError, ArithmeticError) as exc:
        print(f"tdvs: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
