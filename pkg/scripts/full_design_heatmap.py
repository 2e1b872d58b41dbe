"""Score the full 70-design reference grid and export every heatmap.

This is the long-running counterpart of the design-search subcommand: all
time sets x replicate counts, every objective exported, checkpointed so an
interrupted run resumes where it stopped.  Budget roughly a day on one
core at the default 5 datasets per design; use --workers on a bigger
machine.
"""

import argparse
import sys
from pathlib import Path

from hemodesign.config import OBJECTIVE_NAMES
from hemodesign.dataio import write_json
from hemodesign.design_search import (
    export_heatmaps,
    fold_changes,
    grid_search,
    reference_grid,
    row_to_dict,
    select_optimal,
)
from hemodesign.fitting import FitSettings
from hemodesign.priors import prior_profile


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--n-datasets", type=int, default=5)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--profile", default="synthetic")
    args = ap.parse_args(argv)

    args.out.mkdir(parents=True, exist_ok=True)
    grid = reference_grid()
    print(f"scoring {len(grid)} designs, {args.n_datasets} datasets each")
    report = grid_search(
        grid,
        prior_profile(args.profile),
        n_datasets=args.n_datasets,
        settings=FitSettings(),
        seed=args.seed,
        workers=args.workers,
        checkpoint_dir=args.out / "checkpoints",
        progress=lambda d, r: print(
            f"  {d.label()}: joint={r.joint_mean:.2f} se={r.joint_se:.2f}",
            flush=True,
        ),
    )

    best = select_optimal(report)
    payload = {
        "schema_version": 1,
        "seed": args.seed,
        "n_datasets": args.n_datasets,
        "selected": best.label(),
        "fold_changes": {
            name: fold_changes(report, name) for name in OBJECTIVE_NAMES
        },
        "rows": [row_to_dict(r) for r in report.rows],
    }
    write_json(args.out / "report.json", payload)
    export_heatmaps(report, args.out, objectives=list(OBJECTIVE_NAMES))
    best_row = report.row_for(best)
    print(f"best design: {best.label()} (joint={best_row.joint_mean:.3f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
