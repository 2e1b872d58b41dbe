"""Command-line pipeline: simulate, fit, design-search, bayes-factor.

Every subcommand reads one optional TOML configuration file, takes a root
seed, and writes its outputs into a directory given by --out.  Outputs are
deterministic: rerunning a command with identical inputs and seed yields
byte-identical files.  Exit codes: 0 success, 1 validation problem (bad
flags, config, or data), 2 numerical or diagnostics failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import sys
from pathlib import Path

import numpy as np

from .config import (
    OBJECTIVE_NAMES,
    ConfigError,
    RunConfig,
    default_config,
    load_config,
)
from .dataio import (
    DataFormatError,
    load_dataset,
    write_dataset,
    write_json,
    write_truth,
)
from .design_search import (
    MAX_DAY,
    export_heatmaps,
    fold_changes,
    grid_search,
    reference_grid,
    row_to_dict,
    select_optimal,
)
from .evidence import EvidenceError, bayes_factor, log_marginal_bridge
from .fitting import fit_dataset, solution_bands
from .model import sample_truth, simulate_dataset
from .ode import IntegrationError
from .sampler import SamplerError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2

_REPORT_SCHEMA = 1
_BAND_POINTS = 61


class _UsageError(Exception):
    """Bad command line; reported on stderr with exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags, which collides with the
    # exit code reserved for numerical failures; raise instead
    def error(self, message):
        raise _UsageError(message)


# ------------------------------------------------------------------ parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="TOML run configuration")
    p.add_argument(
        "--seed", type=int, metavar="N", help="root seed (overrides [compute] seed)"
    )
    p.add_argument(
        "--out", required=True, metavar="DIR", help="output directory (created)"
    )
    p.add_argument(
        "--no-figures", action="store_true", help="skip figure rendering"
    )


def build_parser() -> _Parser:
    parser = _Parser(
        prog="hemodesign",
        description=(
            "Simulate cross-sectional stem-cell datasets, fit the feedback "
            "model, and rank experimental designs by expected information gain."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("simulate", help="draw one synthetic dataset under a design")
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit the hierarchical model to a dataset CSV")
    _add_common(p)
    p.add_argument("--data", required=True, metavar="FILE", help="dataset CSV")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser(
        "design-search", help="score a grid of designs by expected information gain"
    )
    _add_common(p)
    p.add_argument(
        "--grid", choices=("reference",), help="design grid (overrides [design] grid)"
    )
    p.add_argument(
        "--objective",
        choices=OBJECTIVE_NAMES,
        help="utility column used for selection and the heatmap",
    )
    p.add_argument(
        "--budget", type=int, metavar="N", help="maximum total mice per design"
    )
    p.add_argument(
        "--n-datasets",
        type=int,
        dest="n_datasets",
        metavar="N",
        help="prior datasets per design (at least 2)",
    )
    p.add_argument(
        "--workers", type=int, metavar="N", help="parallel fits within one design"
    )
    p.set_defaults(func=_cmd_design_search)

    p = sub.add_parser(
        "bayes-factor",
        help="evidence ratio of the feedback variant over the no-feedback variant",
    )
    _add_common(p)
    p.add_argument("--data", required=True, metavar="FILE", help="dataset CSV")
    p.set_defaults(func=_cmd_bayes_factor)
    return parser


def _resolve(args) -> RunConfig:
    """Config file first, then command-line overrides."""
    cfg = load_config(args.config) if args.config else default_config()
    updates = {}
    if args.seed is not None:
        if args.seed < 0:
            raise _UsageError("--seed must be non-negative")
        updates["seed"] = args.seed
    if getattr(args, "grid", None) is not None:
        updates["grid"] = args.grid
    if getattr(args, "objective", None) is not None:
        updates["objective"] = args.objective
    if getattr(args, "budget", None) is not None:
        if args.budget < 1:
            raise _UsageError("--budget must be a positive integer")
        updates["budget"] = args.budget
    if getattr(args, "n_datasets", None) is not None:
        if args.n_datasets < 2:
            raise _UsageError("--n-datasets must be at least 2")
        updates["n_datasets"] = args.n_datasets
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise _UsageError("--workers must be at least 1")
        updates["workers"] = args.workers
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _json_safe(obj):
    """Make a payload strictly JSON-clean: no numpy types, no NaN/inf."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# ----------------------------------------------------------------- simulate


def _cmd_simulate(args) -> int:
    cfg = _resolve(args)
    if cfg.design is None:
        raise ConfigError(
            "simulate needs a [design] section with days and replicates"
        )
    out = _prepare_out(args)

    ss = np.random.SeedSequence(cfg.seed)
    truth_seed, sim_seed = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
    truth = cfg.truth
    if truth is None:
        truth = sample_truth(
            cfg.priors,
            np.random.default_rng(truth_seed),
            feedback=cfg.settings.feedback,
        )
    dataset = simulate_dataset(
        truth, cfg.design, sim_seed, gain_scale=cfg.settings.gain_scale
    )

    data_path = out / "dataset.csv"
    write_dataset(dataset, data_path)
    truth_path = out / "truth.json"
    write_truth(
        truth_path,
        truth,
        feedback=cfg.settings.feedback,
        gain_scale=cfg.settings.gain_scale,
        seed=cfg.seed,
        design=cfg.design,
    )
    print(f"wrote {data_path} ({dataset.n_records} mice, design {cfg.design.label()})")
    print(f"wrote {truth_path}")
    if not args.no_figures:
        from . import figures

        fig_path = out / "dataset.png"
        figures.save_dataset_figure(dataset, fig_path)
        print(f"wrote {fig_path}")
    return EXIT_OK


# ---------------------------------------------------------------------- fit


def _write_posterior_csv(fit, path) -> None:
    cols = fit.model.constrained_draws(fit.samples.combined())
    names = list(cols)
    matrix = np.column_stack([cols[n] for n in names])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in matrix:
            writer.writerow([str(float(x)) for x in row])


def _diagnostics_payload(fit, dataset, cfg) -> dict:
    diag = fit.diagnostics
    return {
        "schema_version": _REPORT_SCHEMA,
        "seed": cfg.seed,
        "chains": cfg.settings.chains,
        "warmup": cfg.settings.warmup,
        "draws_per_chain": cfg.settings.draws,
        "warm_start_used": fit.warm_start_used,
        "flagged": list(diag["flagged"]),
        "n_divergent": int(diag["n_divergent"]),
        "divergence_rate": float(diag["divergence_rate"]),
        "mean_accept": float(diag["mean_accept"]),
        "step_size": list(diag["step_size"]),
        "per_param": diag["per_param"],
        "dataset": {
            "n_records": dataset.n_records,
            "groups": list(dataset.groups()),
        },
    }


def _write_band_csv(times, bands, path) -> None:
    header = [
        "group",
        "day",
        "hsc_q2.5",
        "hsc_median",
        "hsc_q97.5",
        "mpp_q2.5",
        "mpp_median",
        "mpp_q97.5",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for g, band in bands.items():
            for i, t in enumerate(times):
                cells = [
                    band[i, 0, 0], band[i, 0, 1], band[i, 0, 2],
                    band[i, 1, 0], band[i, 1, 1], band[i, 1, 2],
                ]
                writer.writerow(
                    [g, f"{t:.10g}"] + [f"{v:.10g}" for v in cells]
                )


def _cmd_fit(args) -> int:
    cfg = _resolve(args)
    dataset = load_dataset(args.data)
    out = _prepare_out(args)

    try:
        fit = fit_dataset(dataset, cfg.priors, cfg.settings, seed=cfg.seed)
    except SamplerError as err:
        # still leave a report behind so the failure is inspectable
        write_json(
            out / "diagnostics.json",
            {"schema_version": _REPORT_SCHEMA, "seed": cfg.seed, "error": str(err)},
        )
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC

    post_path = out / "posterior.csv"
    _write_posterior_csv(fit, post_path)
    diag_path = out / "diagnostics.json"
    write_json(diag_path, _json_safe(_diagnostics_payload(fit, dataset, cfg)))
    print(f"wrote {post_path}")
    print(f"wrote {diag_path}")

    horizon = max((r.day for r in dataset.records), default=0.0)
    if horizon <= 0.0:
        horizon = MAX_DAY
    times = np.linspace(0.0, horizon, _BAND_POINTS)
    bands = solution_bands(fit, times)
    band_path = out / "ode_bands.csv"
    _write_band_csv(times, bands, band_path)
    print(f"wrote {band_path}")

    if not args.no_figures:
        from . import figures

        fig_path = out / "fit_bands.png"
        figures.save_band_figure(times, bands, dataset, fig_path)
        print(f"wrote {fig_path}")

    if fit.flagged:
        print(
            "warning: mixing diagnostics flagged: " + ", ".join(fit.flagged),
            file=sys.stderr,
        )
        return EXIT_NUMERIC
    return EXIT_OK


# -------------------------------------------------------------- grid search


def _progress_printer(total: int):
    done = [0]

    def cb(design, row):
        done[0] += 1
        note = " (unusable)" if row.unusable else ""
        print(
            f"[{done[0]:>3}/{total}] {design.label()}: "
            f"joint={row.joint_mean:.4f} se={row.joint_se:.4f}{note}",
            flush=True,
        )

    return cb


def _read_heatmap_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    col_labels = rows[0][1:]
    row_labels = [r[0] for r in rows[1:]]
    matrix = np.array(
        [[float(c) if c else math.nan for c in r[1:]] for r in rows[1:]]
    )
    return row_labels, col_labels, matrix


def _row_objective(row, objective: str) -> tuple:
    if objective == "joint":
        return row.joint_mean, row.joint_se
    return (
        row.per_param_mean.get(objective, math.nan),
        row.per_param_se.get(objective, math.nan),
    )


def _cmd_design_search(args) -> int:
    cfg = _resolve(args)
    out = _prepare_out(args)
    grid = reference_grid(max_mice=cfg.budget)
    designs = grid.designs()
    print(
        f"scoring {len(designs)} designs, {cfg.n_datasets} datasets each "
        f"(seed {cfg.seed}, {cfg.workers} worker(s))",
        flush=True,
    )
    report = grid_search(
        grid,
        cfg.priors,
        cfg.n_datasets,
        cfg.settings,
        seed=cfg.seed,
        workers=cfg.workers,
        checkpoint_dir=out / "checkpoints",
        progress=_progress_printer(len(designs)),
    )

    if all(row.unusable for row in report.rows):
        print(
            "error: every design evaluation failed its diagnostics",
            file=sys.stderr,
        )
        return EXIT_NUMERIC

    best = select_optimal(report, objective=cfg.objective)
    best_row = report.row_for(best)
    value, se = _row_objective(best_row, cfg.objective)
    payload = {
        "schema_version": _REPORT_SCHEMA,
        "grid": cfg.grid,
        "objective": cfg.objective,
        "budget": cfg.budget,
        "n_datasets": cfg.n_datasets,
        "seed": cfg.seed,
        "selected": {
            "days": list(best.days),
            "replicates": list(best.replicates),
            "label": best.label(),
            "n_mice": best.n_mice,
            "value": value,
            "se": se,
        },
        "fold_changes": {cfg.objective: fold_changes(report, cfg.objective)},
        "rows": [row_to_dict(row) for row in report.rows],
    }
    report_path = out / "report.json"
    write_json(report_path, _json_safe(payload))
    print(f"wrote {report_path}")

    heat_paths = export_heatmaps(report, out, objectives=[cfg.objective])
    for objective, path in sorted(heat_paths.items()):
        print(f"wrote {path}")
        if not args.no_figures:
            from . import figures

            row_labels, col_labels, matrix = _read_heatmap_csv(path)
            fig_path = out / f"heatmap_{objective}.png"
            figures.save_heatmap_figure(
                row_labels,
                col_labels,
                matrix,
                fig_path,
                f"{objective} utility, fold change over worst design",
            )
            print(f"wrote {fig_path}")

    print(
        f"selected design: {best.label()} ({best.n_mice} mice, "
        f"{cfg.objective}={value:.4f} se={se:.4f})"
    )
    return EXIT_OK


# -------------------------------------------------------------- bayes factor


def _cmd_bayes_factor(args) -> int:
    cfg = _resolve(args)
    dataset = load_dataset(args.data)
    out = _prepare_out(args)

    ss = np.random.SeedSequence(cfg.seed)
    seeds = [int(c.generate_state(1)[0]) for c in ss.spawn(4)]
    variants = {}
    flagged_any = False
    for name, feedback, s_fit, s_bridge in (
        ("feedback", True, seeds[0], seeds[1]),
        ("no_feedback", False, seeds[2], seeds[3]),
    ):
        settings = dataclasses.replace(cfg.settings, feedback=feedback)
        fit = fit_dataset(dataset, cfg.priors, settings, seed=s_fit)
        log_ev, rel_err = log_marginal_bridge(
            fit.samples, fit.model.log_posterior, seed=s_bridge
        )
        variants[name] = {
            "log_evidence": log_ev,
            "rel_error": rel_err,
            "flagged": list(fit.flagged),
            "n_divergent": int(fit.diagnostics["n_divergent"]),
            "warm_start_used": fit.warm_start_used,
        }
        flagged_any = flagged_any or bool(fit.flagged)
        print(f"{name}: log evidence {log_ev:.4f} (rel. error {rel_err:.2g})")

    log_bf = variants["feedback"]["log_evidence"] - variants["no_feedback"]["log_evidence"]
    bf = bayes_factor(
        variants["feedback"]["log_evidence"], variants["no_feedback"]["log_evidence"]
    )
    # the bridge's relative evidence error is, to first order, the standard
    # deviation of the log evidence, so the two variances add on the log scale
    err = math.hypot(
        variants["feedback"]["rel_error"], variants["no_feedback"]["rel_error"]
    )
    if log_bf > 2.0 * err:
        favors = "feedback"
    elif log_bf < -2.0 * err:
        favors = "no_feedback"
    else:
        favors = "indeterminate"

    payload = {
        "schema_version": _REPORT_SCHEMA,
        "seed": cfg.seed,
        "variants": variants,
        "bayes_factor": bf,
        "log_bayes_factor": log_bf,
        "rel_error": err,
        "favors": favors,
        "dataset": {"n_records": dataset.n_records, "groups": list(dataset.groups())},
    }
    bf_path = out / "bayes_factor.json"
    write_json(bf_path, _json_safe(payload))
    print(f"wrote {bf_path}")
    print(
        f"Bayes factor (feedback over no feedback) = {bf:.4g} "
        f"(log {log_bf:.4f}, MC error {err:.2g}); favors: {favors}"
    )
    if flagged_any:
        print("warning: mixing diagnostics flagged in a variant", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# --------------------------------------------------------------------- main


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DataFormatError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (SamplerError, EvidenceError, IntegrationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
