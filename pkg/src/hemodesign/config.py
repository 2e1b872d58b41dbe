"""Run configuration: one TOML file drives every subcommand.

Sections map onto library objects:

    [model]    feedback on/off and the gain rescaling
    [priors]   named profile, or explicit percentile triples
    [sampler]  chain counts, adaptation target, solver tolerances
    [design]   observation days and replicates (simulate) plus grid
               settings (design-search)
    [compute]  worker count and root seed
    [truth]    optional fixed simulation truth (otherwise prior-drawn)

Anything omitted falls back to the library defaults.  Unknown sections or
keys are rejected outright so a typo cannot silently turn into a default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # stdlib only on 3.11+
    import tomli as tomllib

from .design_search import MAX_DAY
from .fitting import FitSettings
from .model import Design, HierarchicalParams
from .ode import OdeParams
from .priors import (
    GLOBAL_NAMES,
    PROFILE_NAMES,
    PriorSpec,
    prior_profile,
    priors_from_table,
)

__all__ = [
    "ConfigError",
    "RunConfig",
    "OBJECTIVE_NAMES",
    "default_config",
    "load_config",
    "parse_config",
]


class ConfigError(ValueError):
    """Malformed run configuration: bad TOML, unknown keys, bad values."""


_SECTIONS = ("model", "priors", "sampler", "design", "compute", "truth")

OBJECTIVE_NAMES = ("joint",) + GLOBAL_NAMES


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration, ready to hand to the library."""

    settings: FitSettings
    priors: PriorSpec
    design: Design | None = None
    truth: HierarchicalParams | None = None
    grid: str = "reference"
    budget: int | None = None
    objective: str = "joint"
    n_datasets: int = 5
    workers: int = 1
    seed: int = 0


# -------------------------------------------------------------- typed reads


def _section(data: dict, name: str) -> dict:
    raw = data.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(raw)


def _no_leftovers(section: str, raw: dict) -> None:
    if raw:
        keys = ", ".join(sorted(raw))
        raise ConfigError(f"unknown key(s) in [{section}]: {keys}")


def _pop_bool(raw: dict, section: str, key: str, default: bool) -> bool:
    val = raw.pop(key, default)
    if not isinstance(val, bool):
        raise ConfigError(f"[{section}] {key} must be true or false")
    return val


def _pop_int(raw: dict, section: str, key: str, default: int, minimum: int) -> int:
    val = raw.pop(key, default)
    # bool is an int subclass; reject it explicitly
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"[{section}] {key} must be an integer")
    if val < minimum:
        raise ConfigError(f"[{section}] {key} must be at least {minimum}")
    return val


def _pop_float(raw: dict, section: str, key: str, default: float) -> float:
    val = raw.pop(key, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"[{section}] {key} must be a number")
    val = float(val)
    if not (math.isfinite(val) and val > 0.0):
        raise ConfigError(f"[{section}] {key} must be a positive finite number")
    return val


def _pop_str(raw: dict, section: str, key: str, default: str, choices: tuple) -> str:
    val = raw.pop(key, default)
    if not isinstance(val, str):
        raise ConfigError(f"[{section}] {key} must be a string")
    if val not in choices:
        raise ConfigError(
            f"[{section}] {key} must be one of: {', '.join(choices)} (got {val!r})"
        )
    return val


# ----------------------------------------------------------------- sections


def _parse_settings(data: dict) -> FitSettings:
    model = _section(data, "model")
    feedback = _pop_bool(model, "model", "feedback", True)
    gain_scale = _pop_float(model, "model", "gain_scale", 1e-4)
    _no_leftovers("model", model)

    s = _section(data, "sampler")
    target_accept = _pop_float(s, "sampler", "target_accept", 0.85)
    if not target_accept < 1.0:
        raise ConfigError("[sampler] target_accept must be below 1")
    settings = FitSettings(
        chains=_pop_int(s, "sampler", "chains", 2, minimum=2),
        warmup=_pop_int(s, "sampler", "warmup", 300, minimum=1),
        draws=_pop_int(s, "sampler", "draws", 400, minimum=4),
        target_accept=target_accept,
        max_tree_depth=_pop_int(s, "sampler", "max_tree_depth", 10, minimum=1),
        metric=_pop_str(s, "sampler", "metric", "dense", choices=("dense", "diag")),
        algorithm=_pop_str(s, "sampler", "algorithm", "nuts", choices=("nuts", "rwm")),
        noncentered=_pop_bool(s, "sampler", "noncentered", True),
        ode_rtol=_pop_float(s, "sampler", "ode_rtol", 1e-6),
        ode_atol=_pop_float(s, "sampler", "ode_atol", 1e-6),
        warm_start=_pop_bool(s, "sampler", "warm_start", True),
        feedback=feedback,
        gain_scale=gain_scale,
    )
    _no_leftovers("sampler", s)
    return settings


def _parse_priors(data: dict) -> PriorSpec:
    raw = _section(data, "priors")
    profile = raw.pop("profile", None)
    table = raw.pop("quantiles", None)
    _no_leftovers("priors", raw)
    if profile is not None and table is not None:
        raise ConfigError("[priors] give either profile or quantiles, not both")

    if table is None:
        name = "synthetic" if profile is None else profile
        if not isinstance(name, str) or name not in PROFILE_NAMES:
            raise ConfigError(
                f"[priors] profile must be one of: {', '.join(PROFILE_NAMES)} "
                f"(got {name!r})"
            )
        return prior_profile(name)

    if not isinstance(table, dict):
        raise ConfigError("[priors] quantiles must be a table of three-number arrays")
    missing = [n for n in GLOBAL_NAMES if n not in table]
    if missing:
        raise ConfigError(f"[priors.quantiles] missing: {', '.join(missing)}")
    extra = sorted(k for k in table if k not in GLOBAL_NAMES)
    if extra:
        raise ConfigError(f"[priors.quantiles] unknown parameter(s): {', '.join(extra)}")
    triples = {}
    for name in GLOBAL_NAMES:
        v = table[name]
        ok = (
            isinstance(v, list)
            and len(v) == 3
            and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)
        )
        if not ok:
            raise ConfigError(f"[priors.quantiles] {name} must be [low, median, high]")
        triples[name] = tuple(float(x) for x in v)
    try:
        return priors_from_table(triples)
    except ValueError as err:
        raise ConfigError(f"[priors.quantiles] {err}") from None


def _parse_design(data: dict) -> tuple:
    raw = _section(data, "design")
    days = raw.pop("days", None)
    reps = raw.pop("replicates", None)
    grid = _pop_str(raw, "design", "grid", "reference", choices=("reference",))
    budget = raw.pop("budget", None)
    if budget is not None and (isinstance(budget, bool) or not isinstance(budget, int) or budget < 1):
        raise ConfigError("[design] budget must be a positive integer")
    objective = _pop_str(raw, "design", "objective", "joint", choices=OBJECTIVE_NAMES)
    n_datasets = _pop_int(raw, "design", "n_datasets", 5, minimum=2)
    _no_leftovers("design", raw)

    design = None
    if days is not None:
        if not (
            isinstance(days, list)
            and days
            and all(isinstance(d, (int, float)) and not isinstance(d, bool) for d in days)
        ):
            raise ConfigError("[design] days must be a non-empty array of numbers")
        if reps is None:
            raise ConfigError("[design] replicates is required alongside days")
        if isinstance(reps, int) and not isinstance(reps, bool):
            reps = [reps] * len(days)
        if not (
            isinstance(reps, list)
            and all(isinstance(r, int) and not isinstance(r, bool) for r in reps)
        ):
            raise ConfigError(
                "[design] replicates must be an integer or an array of integers"
            )
        try:
            design = Design(days=tuple(float(d) for d in days), replicates=tuple(reps))
            design.check_max_day(MAX_DAY)
        except ValueError as err:
            raise ConfigError(f"[design] {err}") from None
    elif reps is not None:
        raise ConfigError("[design] replicates given without days")
    return design, grid, budget, objective, n_datasets


def _parse_truth(data: dict) -> HierarchicalParams | None:
    raw = _section(data, "truth")
    if not raw:
        return None
    values = {}
    for name in GLOBAL_NAMES:
        if name not in raw:
            raise ConfigError(f"[truth] missing {name}")
        v = raw.pop(name)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"[truth] {name} must be a number")
        values[name] = float(v)
    _no_leftovers("truth", raw)
    try:
        theta = OdeParams(
            p0=values["p0"],
            eta1=values["eta1"],
            eta2=values["eta2"],
            gamma1=values["gamma1"],
            gamma2=values["gamma2"],
        )
        theta.validate()
        return HierarchicalParams(
            theta=theta,
            mu=[[values["mu_hsc"], values["mu_mpp"]]],
            sigma_b=values["sigma_b"],
            sigma_t=values["sigma_t"],
        )
    except ValueError as err:
        raise ConfigError(f"[truth] {err}") from None


# ------------------------------------------------------------- entry points


def parse_config(data: dict) -> RunConfig:
    """Validate a decoded TOML document and build the run configuration."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table at the top level")
    unknown = sorted(k for k in data if k not in _SECTIONS)
    if unknown:
        raise ConfigError(
            f"unknown section(s): {', '.join(unknown)}; "
            f"expected {', '.join(_SECTIONS)}"
        )
    settings = _parse_settings(data)
    priors = _parse_priors(data)
    design, grid, budget, objective, n_datasets = _parse_design(data)
    compute = _section(data, "compute")
    workers = _pop_int(compute, "compute", "workers", 1, minimum=1)
    seed = _pop_int(compute, "compute", "seed", 0, minimum=0)
    _no_leftovers("compute", compute)
    truth = _parse_truth(data)
    return RunConfig(
        settings=settings,
        priors=priors,
        design=design,
        truth=truth,
        grid=grid,
        budget=budget,
        objective=objective,
        n_datasets=n_datasets,
        workers=workers,
        seed=seed,
    )


def load_config(path) -> RunConfig:
    """Read and validate a TOML configuration file."""
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from None
    try:
        return parse_config(data)
    except ConfigError as err:
        raise ConfigError(f"{path}: {err}") from None


def default_config() -> RunConfig:
    """The configuration an empty file would produce."""
    return parse_config({})
