"""Design-grid enumeration, utility evaluation across it, and selection.

A grid crosses candidate observation-day sets with per-day replicate
counts.  grid_search scores every design by Monte Carlo expected
information gain, checkpointing each finished design to disk so an
interrupted run resumes without recomputation.  Reports are ranked either
by the joint gain or by a single parameter's marginal gain, under an
optional budget on total mice.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .fitting import FitSettings
from .model import Design
from .priors import PriorSpec
from .utility import DesignUtility, UtilityEstimate, expected_utility

__all__ = [
    "DesignGrid",
    "UtilityReport",
    "reference_grid",
    "grid_search",
    "fold_changes",
    "select_optimal",
    "export_heatmaps",
]

# the modeled horizon: observation schedules end within this many days
MAX_DAY = 6.0

# the fourteen observation-day sets of the reference grid
_REFERENCE_TIME_SETS = (
    (0.0, 6.0),
    (0.0, 0.5, 6.0),
    (0.0, 0.5, 1.0),
    (0.0, 3.0, 6.0),
    (0.0, 1.0, 6.0),
    (0.0, 2.0, 4.0, 6.0),
    (0.0, 1.0, 2.0, 6.0),
    (0.0, 0.5, 1.0, 6.0),
    (0.0, 0.5, 1.0, 2.0, 6.0),
    (0.0, 0.5, 1.0, 2.0, 3.0),
    (0.0, 1.0, 2.0, 3.0, 6.0),
    (0.0, 1.0, 2.0, 4.0, 6.0),
    (0.0, 1.0, 2.0, 3.0, 4.0, 6.0),
    (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0),
)


@dataclass(frozen=True)
class DesignGrid:
    """Candidate designs: day sets crossed with uniform replicate counts."""

    time_sets: tuple
    replicate_options: tuple
    max_mice: int | None = None

    def __post_init__(self):
        time_sets = tuple(tuple(float(d) for d in ts) for ts in self.time_sets)
        reps = tuple(int(r) for r in self.replicate_options)
        object.__setattr__(self, "time_sets", time_sets)
        object.__setattr__(self, "replicate_options", reps)
        if not time_sets or not reps:
            raise ValueError("grid needs at least one time set and replicate option")
        if any(r <= 0 for r in reps):
            raise ValueError("replicate options must be positive")
        for ts in time_sets:
            if not ts or ts[0] != 0.0:
                raise ValueError(f"time set {ts} must start at day 0")
            if ts[-1] > MAX_DAY:
                raise ValueError(f"time set {ts} exceeds day {MAX_DAY:g}")
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError(f"time set {ts} must be strictly increasing")

    def designs(self) -> tuple:
        """All grid designs within the mouse budget, in grid order."""
        out = []
        for ts in self.time_sets:
            for r in self.replicate_options:
                if self.max_mice is not None and len(ts) * r > self.max_mice:
                    continue
                out.append(Design(days=ts, replicates=(r,) * len(ts)))
        return tuple(out)


def reference_grid(max_mice: int | None = None) -> DesignGrid:
    """The standard 70-design grid: 14 day sets times 3..7 mice per day."""
    return DesignGrid(
        time_sets=_REFERENCE_TIME_SETS,
        replicate_options=(3, 4, 5, 6, 7),
        max_mice=max_mice,
    )


@dataclass(frozen=True)
class UtilityReport:
    """Per-design utility rows from one grid evaluation."""

    rows: tuple
    n_datasets: int
    seed: int

    def row_for(self, design: Design) -> DesignUtility:
        for row in self.rows:
            if row.design == design:
                return row
        raise KeyError(f"no row for design {design.label()}")

    def objectives(self) -> tuple:
        """Rankable utility columns: the joint gain plus each parameter."""
        for row in self.rows:
            if row.estimates:
                return ("joint",) + tuple(row.estimates[0].per_param)
        return ("joint",)


def _row_value(row: DesignUtility, objective: str) -> float:
    if objective == "joint":
        return row.joint_mean
    try:
        return row.per_param_mean[objective]
    except KeyError:
        raise ValueError(
            f"unknown objective {objective!r}; expected 'joint' or a "
            "reported parameter name"
        ) from None


def _row_se(row: DesignUtility, objective: str) -> float:
    if objective == "joint":
        return row.joint_se
    return row.per_param_se.get(objective, float("nan"))


# ------------------------------------------------------------- checkpointing


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _priors_payload(priors: PriorSpec) -> dict:
    return {name: (sp.m, sp.s) for name, sp in sorted(priors.entries.items())}


def _checkpoint_key(
    design: Design, priors: PriorSpec, settings: FitSettings, n_datasets: int, seed: int
) -> str:
    payload = _canonical(
        {
            "design": {"days": design.days, "replicates": design.replicates},
            "priors": _priors_payload(priors),
            "settings": dataclasses.asdict(settings),
            "n_datasets": n_datasets,
            "seed": seed,
        }
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:32]


def _design_seed(seed: int, design: Design) -> int:
    digest = hashlib.sha256(f"{seed}:{design.label()}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _estimate_to_dict(est: UtilityEstimate) -> dict:
    return {
        "joint": est.joint,
        "per_param": est.per_param,
        "log_evidence": est.log_evidence,
        "evidence_error": est.evidence_error,
        "n_draws": est.n_draws,
        "bandwidths": est.bandwidths,
        "diagnostics_ok": est.diagnostics_ok,
    }


def _estimate_from_dict(d: dict) -> UtilityEstimate:
    return UtilityEstimate(
        joint=d["joint"],
        per_param=dict(d["per_param"]),
        log_evidence=d["log_evidence"],
        evidence_error=d["evidence_error"],
        n_draws=d["n_draws"],
        bandwidths=dict(d["bandwidths"]),
        diagnostics_ok=d["diagnostics_ok"],
    )


def row_to_dict(row: DesignUtility) -> dict:
    return {
        "design": {"days": list(row.design.days), "replicates": list(row.design.replicates)},
        "label": row.design.label(),
        "n_requested": row.n_requested,
        "n_excluded": row.n_excluded,
        "exclusions": list(row.exclusions),
        "estimates": [_estimate_to_dict(e) for e in row.estimates],
        "joint_mean": row.joint_mean,
        "joint_se": row.joint_se,
        "per_param_mean": row.per_param_mean,
        "per_param_se": row.per_param_se,
        "unusable": row.unusable,
    }


def row_from_dict(d: dict) -> DesignUtility:
    return DesignUtility(
        design=Design(
            days=tuple(d["design"]["days"]),
            replicates=tuple(d["design"]["replicates"]),
        ),
        n_requested=d["n_requested"],
        n_excluded=d["n_excluded"],
        exclusions=tuple(d["exclusions"]),
        estimates=tuple(_estimate_from_dict(e) for e in d["estimates"]),
        joint_mean=d["joint_mean"],
        joint_se=d["joint_se"],
        per_param_mean=dict(d["per_param_mean"]),
        per_param_se=dict(d["per_param_se"]),
    )


# --------------------------------------------------------------- grid search


def grid_search(
    grid: DesignGrid,
    priors: PriorSpec,
    n_datasets: int,
    settings: FitSettings | None = None,
    *,
    seed: int = 0,
    workers: int = 1,
    checkpoint_dir=None,
    evaluate=expected_utility,
    progress=None,
) -> UtilityReport:
    """Score every design on the grid by expected information gain.

    Each design gets its own seed derived from the root seed and the design
    itself, so the result does not depend on evaluation order or on which
    designs share a run.  With checkpoint_dir set, every finished design is
    written to one JSON file named by a content hash of everything that
    determines its row; rerunning with the same inputs loads those files
    instead of recomputing, and the resumed report is identical to an
    uninterrupted one.  Designs whose evaluation mostly failed stay in the
    report marked unusable rather than being dropped.

    The worker budget applies inside one design at a time (the dataset
    replicates run in parallel), which keeps the process count bounded by
    `workers` without nested pools.  progress, when given, is called with
    (design, row) after each design finishes.
    """
    if settings is None:
        settings = FitSettings()
    designs = grid.designs()
    if not designs:
        raise ValueError("the grid is empty (mouse budget excludes every design)")
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)

    rows = []
    for design in designs:
        path = None
        if ckpt is not None:
            key = _checkpoint_key(design, priors, settings, n_datasets, seed)
            path = ckpt / f"design-{key}.json"
        if path is not None and path.exists():
            payload = json.loads(path.read_text())
            row = row_from_dict(payload["row"])
            if row.design != design:
                raise ValueError(f"checkpoint {path} does not match design {design.label()}")
        else:
            row = evaluate(
                design,
                priors,
                n_datasets,
                settings,
                seed=_design_seed(seed, design),
                workers=workers,
            )
            if path is not None:
                tmp = path.with_suffix(".tmp")
                tmp.write_text(_canonical({"schema_version": 1, "row": row_to_dict(row)}))
                os.replace(tmp, path)
        rows.append(row)
        if progress is not None:
            progress(design, row)
    return UtilityReport(rows=tuple(rows), n_datasets=n_datasets, seed=seed)


# ----------------------------------------------------------------- selection


def fold_changes(report: UtilityReport, objective: str = "joint") -> list:
    """Utility of each row divided by the smallest usable utility.

    Aligned with report.rows; unusable rows get NaN.  The convention only
    makes sense when every usable utility is positive (information gains
    are); if the minimum is not positive, everything is NaN.
    """
    values = [
        float("nan") if row.unusable else _row_value(row, objective)
        for row in report.rows
    ]
    finite = [v for v in values if v == v]
    if not finite or min(finite) <= 0.0:
        return [float("nan")] * len(values)
    low = min(finite)
    return [v / low if v == v else v for v in values]


def select_optimal(
    report: UtilityReport, objective: str = "joint", budget: int | None = None
) -> Design:
    """Highest-utility design, constrained to at most `budget` mice.

    Unusable rows never win.  Exact utility ties go to the design with
    fewer total mice, then fewer observation days, so the choice is
    invariant to any strictly increasing rescaling of the utility column.
    """
    feasible = []
    for row in report.rows:
        if row.unusable:
            continue
        if budget is not None and row.design.n_mice > budget:
            continue
        value = _row_value(row, objective)
        if value != value:
            continue
        feasible.append((value, -row.design.n_mice, -len(row.design.days), row.design))
    if not feasible:
        raise ValueError(
            "no usable design satisfies the budget"
            + (f" of {budget} mice" if budget is not None else "")
        )
    feasible.sort(key=lambda t: t[:3])
    return feasible[-1][3]


# ------------------------------------------------------------ heatmap export


def _time_set_label(days) -> str:
    return "{" + ",".join(f"{d:g}" for d in days) + "}"


def _replicate_label(replicates) -> str:
    if len(set(replicates)) == 1:
        return str(replicates[0])
    return "|".join(str(r) for r in replicates)


def export_heatmaps(report: UtilityReport, out_dir, objectives=None) -> dict:
    """One fold-change CSV per objective: rows are day sets, columns replicates.

    Cells hold the fold-change utility; unusable designs print as nan and
    day-set/replicate combinations absent from the report stay empty.
    Returns {objective: written path}.
    """
    import csv

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if objectives is None:
        objectives = report.objectives()

    day_sets = []
    rep_labels = []
    for row in report.rows:
        ts = row.design.days
        if ts not in day_sets:
            day_sets.append(ts)
        rl = _replicate_label(row.design.replicates)
        if rl not in rep_labels:
            rep_labels.append(rl)

    paths = {}
    for objective in objectives:
        folds = fold_changes(report, objective)
        cells = {}
        for row, fold in zip(report.rows, folds):
            cells[(row.design.days, _replicate_label(row.design.replicates))] = fold
        path = out_dir / f"heatmap_{objective}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_set"] + rep_labels)
            for ts in day_sets:
                line = [_time_set_label(ts)]
                for rl in rep_labels:
                    if (ts, rl) in cells:
                        line.append(f"{cells[(ts, rl)]:.6g}")
                    else:
                        line.append("")
                writer.writerow(line)
        paths[objective] = path
    return paths
