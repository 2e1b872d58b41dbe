"""Prior distributions and coordinate transforms for the hierarchical model.

Every scalar parameter is given a normal prior on a transformed coordinate:
p0 through logit(2*p0 - 1) (a bijection (1/2, 1) <-> R), everything else
through the natural log.  Hyperparameters are expressed as central
(2.5%, 50%, 97.5%) percentile triples on the natural scale and back-solved
at construction, since percentiles are what published tables report and
what a reviewer can check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.stats import norm

GLOBAL_NAMES = (
    "p0",
    "eta1",
    "eta2",
    "gamma1",
    "gamma2",
    "sigma_t",
    "sigma_b",
    "mu_hsc",
    "mu_mpp",
)

# transform kind per coordinate: p0 is logit-type, the rest log-type
LOGIT_NAMES = ("p0",)

_Z975 = float(norm.ppf(0.975))
_LOG_2PI = math.log(2.0 * math.pi)


def transform_forward(name: str, value: float) -> float:
    """Constrained value -> unconstrained coordinate."""
    if name in LOGIT_NAMES:
        q = 2.0 * value - 1.0
        if not 0.0 < q < 1.0:
            raise ValueError(f"{name}={value} outside (1/2, 1)")
        return math.log(q) - math.log1p(-q)
    if value <= 0.0:
        raise ValueError(f"{name}={value} must be positive")
    return math.log(value)


def transform_inverse(name: str, w: float) -> tuple[float, float]:
    """Unconstrained coordinate -> (constrained value, log |d constrained / d w|)."""
    if name in LOGIT_NAMES:
        # value = (1 + sigmoid(w)) / 2
        log_q = -np.logaddexp(0.0, -w)
        log_1mq = -np.logaddexp(0.0, w)
        value = 0.5 * (1.0 + math.exp(log_q))
        return value, float(log_q + log_1mq - math.log(2.0))
    return math.exp(w), w


def normal_logpdf(x, m, s):
    x = np.asarray(x, dtype=float)
    return -0.5 * ((x - m) / s) ** 2 - np.log(s) - 0.5 * _LOG_2PI


@dataclass(frozen=True)
class ScalarPrior:
    """Normal prior on the transformed coordinate of one parameter."""

    m: float
    s: float

    def __post_init__(self):
        if not (np.isfinite(self.m) and np.isfinite(self.s) and self.s > 0):
            raise ValueError(f"bad prior location/scale ({self.m}, {self.s})")

    @classmethod
    def from_quantiles(cls, name: str, lo: float, med: float, hi: float) -> "ScalarPrior":
        """Fit (m, s) to a (2.5%, 50%, 97.5%) triple on the natural scale.

        When the lower quantile sits on the support boundary (its transform
        is infinite) only the upper half-interval is used.
        """
        if not lo < med < hi:
            raise ValueError(f"{name}: quantiles must increase, got {(lo, med, hi)}")
        m = transform_forward(name, med)
        try:
            t_lo = transform_forward(name, lo)
        except ValueError:
            t_lo = -math.inf
        t_hi = transform_forward(name, hi)
        if math.isfinite(t_lo):
            s = (t_hi - t_lo) / (2.0 * _Z975)
        else:
            s = (t_hi - m) / _Z975
        return cls(m=m, s=s)

    def sample(self, name: str, rng: np.random.Generator, size=None):
        w = rng.normal(self.m, self.s, size=size)
        if size is None:
            return transform_inverse(name, float(w))[0]
        if name in LOGIT_NAMES:
            return 0.5 * (1.0 + 1.0 / (1.0 + np.exp(-w)))
        return np.exp(w)

    def logpdf_unconstrained(self, w):
        """Density of the transformed coordinate (plain normal)."""
        return normal_logpdf(w, self.m, self.s)

    def logpdf_constrained(self, name: str, value: float) -> float:
        """Density of the constrained value (includes the transform factor)."""
        w = transform_forward(name, value)
        _, log_jac = transform_inverse(name, w)
        return float(normal_logpdf(w, self.m, self.s)) - log_jac

    def quantile(self, name: str, q) -> float | np.ndarray:
        w = norm.ppf(q, loc=self.m, scale=self.s)
        if np.isscalar(q):
            return transform_inverse(name, float(w))[0]
        if name in LOGIT_NAMES:
            return 0.5 * (1.0 + 1.0 / (1.0 + np.exp(-np.asarray(w))))
        return np.exp(np.asarray(w))


@dataclass(frozen=True)
class PriorSpec:
    """Independent scalar priors for the nine population-level parameters."""

    entries: Mapping[str, ScalarPrior]

    def __post_init__(self):
        missing = [n for n in GLOBAL_NAMES if n not in self.entries]
        if missing:
            raise ValueError(f"priors missing entries for {missing}")

    def __getitem__(self, name: str) -> ScalarPrior:
        return self.entries[name]

    def sample_globals(self, rng: np.random.Generator, names=GLOBAL_NAMES) -> dict:
        return {n: self.entries[n].sample(n, rng) for n in names}


# Percentile triples on the natural scale.  "synthetic" is the simulation-
# study profile; "realdata" is the wider profile used for the irradiation
# experiment (counts an order of magnitude higher, noise scales around 0.5
# log-units).
_PROFILES = {
    "synthetic": {
        "p0": (0.50, 0.52, 0.60),
        "eta1": (1.00, 3.84, 15.11),
        "eta2": (1.00, 4.50, 20.2),
        "gamma1": (1.00, 3.15, 10.0),
        "gamma2": (1.00, 3.15, 10.0),
        "sigma_t": (0.01, 0.04, 0.18),
        "sigma_b": (0.01, 0.04, 0.18),
        "mu_hsc": (549.0, 700.0, 890.0),
        "mu_mpp": (1462.0, 1996.0, 2743.0),
    },
    "realdata": {
        "p0": (0.50, 0.52, 0.60),
        "eta1": (3.06, 5.0, 8.16),
        "eta2": (2.14, 3.86, 6.94),
        "gamma1": (1.50, 4.0, 10.7),
        "gamma2": (1.50, 4.0, 10.7),
        "sigma_t": (0.39, 0.5, 0.64),
        "sigma_b": (0.39, 0.5, 0.64),
        "mu_hsc": (672.0, 1097.0, 1791.0),
        "mu_mpp": (5473.0, 8103.0, 11988.0),
    },
}

PROFILE_NAMES = tuple(_PROFILES)


def prior_profile(profile: str) -> PriorSpec:
    """One of the named default profiles ("synthetic" or "realdata")."""
    try:
        table = _PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown prior profile {profile!r}; choose from {PROFILE_NAMES}")
    return PriorSpec(
        entries={n: ScalarPrior.from_quantiles(n, *table[n]) for n in GLOBAL_NAMES}
    )


def priors_from_table(table: Mapping[str, tuple]) -> PriorSpec:
    """Build a PriorSpec from explicit percentile triples (config use)."""
    return PriorSpec(
        entries={n: ScalarPrior.from_quantiles(n, *table[n]) for n in GLOBAL_NAMES}
    )
