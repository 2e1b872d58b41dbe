"""Matplotlib rendering for the report paths.

Figures are a convenience layered on top of the delimited outputs; every
number shown here also lives in a CSV or JSON next to the image.  The Agg
backend is forced so rendering works headless, and the PNG metadata is
pinned so repeated runs with the same inputs produce identical bytes.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_dataset_figure", "save_band_figure", "save_heatmap_figure"]

_META = {"Software": "hemodesign"}
_DPI = 150
_COMPARTMENTS = ("HSC", "MPP")
_MARKERS = ("o", "s", "^", "v", "D", "P")


def _save(fig, path) -> None:
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)


def _scatter_records(ax, records, groups, attr) -> None:
    label_groups = len(groups) > 1
    for gi, g in enumerate(groups):
        days = [r.day for r in records if r.group == g]
        counts = [math.exp(getattr(r, attr)) for r in records if r.group == g]
        if not days:
            continue
        ax.scatter(
            days,
            counts,
            s=22,
            marker=_MARKERS[gi % len(_MARKERS)],
            alpha=0.85,
            zorder=3,
            label=(g or "control") if label_groups else None,
        )


def save_dataset_figure(dataset, path) -> None:
    """Raw counts against sacrifice day, one panel per compartment."""
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6), sharex=True)
    groups = dataset.groups()
    for ax, name, attr in zip(axes, _COMPARTMENTS, ("y_hsc", "y_mpp")):
        _scatter_records(ax, dataset.records, groups, attr)
        ax.set_yscale("log")
        ax.set_xlabel("day")
        ax.set_ylabel(f"{name} count")
        ax.grid(True, which="both", alpha=0.25)
        if len(groups) > 1:
            ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    _save(fig, path)


def save_band_figure(times, bands, dataset, path) -> None:
    """Posterior solution bands (2.5/50/97.5 percent) with the data overlaid.

    bands maps group label -> array (n_times, 2, 3) as produced by
    fitting.solution_bands.
    """
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6), sharex=True)
    t = np.asarray(times, dtype=float)
    groups = dataset.groups()
    label_groups = len(bands) > 1
    for ci, (ax, name, attr) in enumerate(zip(axes, _COMPARTMENTS, ("y_hsc", "y_mpp"))):
        for g, band in bands.items():
            line = ax.plot(
                t,
                band[:, ci, 1],
                lw=1.5,
                label=(g or "control") if label_groups else "posterior median",
            )[0]
            ax.fill_between(
                t, band[:, ci, 0], band[:, ci, 2], alpha=0.22, color=line.get_color()
            )
        _scatter_records(ax, dataset.records, groups, attr)
        ax.set_yscale("log")
        ax.set_xlabel("day")
        ax.set_ylabel(f"{name} count")
        ax.grid(True, which="both", alpha=0.25)
        if ci == 0:
            ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    _save(fig, path)


def save_heatmap_figure(row_labels, col_labels, matrix, path, value_label) -> None:
    """Fold-change utility matrix: day sets by replicate counts.

    NaN cells (unusable or absent design evaluations) render grey.
    """
    mat = np.asarray(matrix, dtype=float)
    n_rows, n_cols = mat.shape
    fig, ax = plt.subplots(
        figsize=(2.2 + 0.85 * n_cols, 1.4 + 0.38 * n_rows)
    )
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("0.85")
    masked = np.ma.masked_invalid(mat)
    im = ax.imshow(masked, aspect="auto", cmap=cmap)
    ax.set_xticks(range(n_cols), [str(c) for c in col_labels])
    ax.set_yticks(range(n_rows), [str(r) for r in row_labels], fontsize=8)
    ax.set_xlabel("mice per observation day")
    ax.set_ylabel("observation days")
    if masked.count():
        lo, hi = float(masked.min()), float(masked.max())
        mid = 0.5 * (lo + hi)
        for i in range(n_rows):
            for j in range(n_cols):
                if mat[i, j] != mat[i, j]:
                    continue
                ax.text(
                    j,
                    i,
                    f"{mat[i, j]:.3g}",
                    ha="center",
                    va="center",
                    fontsize=7,
                    color="white" if mat[i, j] < mid else "black",
                )
    fig.colorbar(im, ax=ax, label=value_label)
    fig.tight_layout()
    _save(fig, path)
