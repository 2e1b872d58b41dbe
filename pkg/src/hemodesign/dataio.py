"""Dataset CSV and truth-bundle JSON serialization.

CSV columns are ``mouse_id,day,hsc_count,mpp_count`` with an optional
``group`` column.  Counts are stored on the raw scale so the files stay
auditable against lab records; the log transform the model works on is
applied at load time.  Numbers are written with shortest-round-trip
precision, so a write/load cycle preserves every count bit for bit.
"""

from __future__ import annotations

import csv
import json
import math

from .model import Dataset, Design, HierarchicalParams, MouseRecord
from .ode import OdeParams
from .simstudy import truth_values

__all__ = [
    "DataFormatError",
    "load_dataset",
    "write_dataset",
    "load_truth",
    "write_truth",
    "read_json",
    "write_json",
]

_BASE_COLUMNS = ("mouse_id", "day", "hsc_count", "mpp_count")
_TRUTH_SCHEMA = 1


class DataFormatError(ValueError):
    """Malformed dataset or truth file; messages carry file and line."""


def write_dataset(dataset: Dataset, path) -> None:
    """Write records as raw-count CSV; the group column appears only if used."""
    grouped = any(r.group for r in dataset.records)
    columns = _BASE_COLUMNS + (("group",) if grouped else ())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in dataset.records:
            row = [
                r.mouse_id,
                str(float(r.day)),
                str(math.exp(r.y_hsc)),
                str(math.exp(r.y_mpp)),
            ]
            if grouped:
                row.append(r.group)
            writer.writerow(row)


def _parse_number(raw: str, path, line: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise DataFormatError(
            f"{path}:{line}: {column} must be a number, got {raw!r}"
        ) from None
    if not math.isfinite(value):
        raise DataFormatError(f"{path}:{line}: {column} must be finite, got {raw!r}")
    return value


def load_dataset(path) -> Dataset:
    """Read a dataset CSV, validating every field with line numbers."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}:1: missing header row") from None
        header = tuple(h.strip() for h in header)
        if header not in (_BASE_COLUMNS, _BASE_COLUMNS + ("group",)):
            raise DataFormatError(
                f"{path}:1: header must be {','.join(_BASE_COLUMNS)} with an "
                f"optional trailing group column, got {','.join(header)}"
            )
        grouped = len(header) == 5

        records = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}:{line}: expected {len(header)} fields, got {len(row)}"
                )
            mouse_id = row[0].strip()
            if not mouse_id:
                raise DataFormatError(f"{path}:{line}: mouse_id must not be empty")
            day = _parse_number(row[1], path, line, "day")
            if day < 0:
                raise DataFormatError(f"{path}:{line}: day must be non-negative")
            hsc = _parse_number(row[2], path, line, "hsc_count")
            mpp = _parse_number(row[3], path, line, "mpp_count")
            if hsc <= 0 or mpp <= 0:
                raise DataFormatError(f"{path}:{line}: counts must be positive")
            records.append(
                MouseRecord(
                    mouse_id=mouse_id,
                    day=day,
                    y_hsc=math.log(hsc),
                    y_mpp=math.log(mpp),
                    group=row[4].strip() if grouped else "",
                )
            )
    try:
        return Dataset(records=tuple(records))
    except ValueError as err:
        raise DataFormatError(f"{path}: {err}") from None


# ------------------------------------------------------------- truth bundle


def truth_to_dict(
    truth: HierarchicalParams,
    *,
    feedback: bool = True,
    gain_scale: float = 1e-4,
    seed: int | None = None,
    design: Design | None = None,
) -> dict:
    if truth.mu.shape[0] != 1:
        raise ValueError("only single-group truth bundles are serialized")
    payload = {
        "schema_version": _TRUTH_SCHEMA,
        "kind": "simulation-truth",
        "feedback": bool(feedback),
        "gain_scale": float(gain_scale),
        "parameters": {k: float(v) for k, v in truth_values(truth).items()},
    }
    if seed is not None:
        payload["seed"] = int(seed)
    if design is not None:
        payload["design"] = {
            "days": list(design.days),
            "replicates": list(design.replicates),
        }
    return payload


def truth_from_dict(payload: dict) -> HierarchicalParams:
    p = payload["parameters"]
    theta = OdeParams(
        p0=p["p0"],
        eta1=p["eta1"],
        eta2=p["eta2"],
        gamma1=p["gamma1"],
        gamma2=p["gamma2"],
    )
    return HierarchicalParams(
        theta=theta,
        mu=[[p["mu_hsc"], p["mu_mpp"]]],
        sigma_b=p["sigma_b"],
        sigma_t=p["sigma_t"],
    )


def write_truth(path, truth: HierarchicalParams, **meta) -> None:
    write_json(path, truth_to_dict(truth, **meta))


def load_truth(path) -> tuple:
    """Read a truth bundle; returns (params, full payload)."""
    payload = read_json(path)
    try:
        return truth_from_dict(payload), payload
    except (KeyError, TypeError, ValueError) as err:
        raise DataFormatError(f"{path}: not a truth bundle ({err})") from None


# ---------------------------------------------------------------- raw JSON


def write_json(path, payload) -> None:
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    text = json.dumps(payload, indent=2, sort_keys=True)
    with open(path, "w", newline="") as fh:
        fh.write(text + "\n")


def read_json(path) -> dict:
    with open(path, newline="") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as err:
            raise DataFormatError(f"{path}: {err}") from None
