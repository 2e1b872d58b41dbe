"""Information-gain scoring of designs: joint and per-parameter estimates.

One simulated experiment scores as the posterior-averaged data log
likelihood minus the log evidence, which is the prior-to-posterior
divergence of that dataset; averaging over prior-predictive datasets gives
the design's expected information gain.  Per-parameter scores replace the
unavailable marginal posterior density with a Gaussian kernel estimate over
the draws, so gains can be attributed to individual parameters.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .evidence import EvidenceError, log_marginal_bridge
from .fitting import FitResult, FitSettings, fit_dataset
from .model import Design, sample_truth, simulate_dataset
from .ode import IntegrationError
from .priors import PriorSpec
from .sampler import PosteriorSamples, SamplerError

__all__ = [
    "UtilityEstimate",
    "DesignUtility",
    "joint_utility",
    "KernelDensity",
    "kde_marginal",
    "marginal_utility",
    "expected_utility",
]

# below this many draws a kernel density is too noisy to report
_MIN_KDE_DRAWS = 100


# ------------------------------------------------------------------- joint


def joint_utility(
    samples: PosteriorSamples,
    loglik,
    logprior,
    log_evidence: float,
) -> float:
    """Information gain of one dataset from its posterior draws.

    loglik and logprior take an (n, dim) array of unconstrained points and
    return (n,) log densities; together they must reproduce the density the
    draws were sampled from, which is checked against the stored values at
    a few draws.  The gain is the mean of loglik over the draws minus the
    log evidence.
    """
    if not math.isfinite(log_evidence):
        raise ValueError("log_evidence must be finite")
    V = samples.combined()
    stored = samples.combined_log_posts()
    n = V.shape[0]
    check = sorted({0, n // 2, n - 1})
    ll_check = np.asarray(loglik(V[check]), dtype=float)
    lp_check = np.asarray(logprior(V[check]), dtype=float)
    for got, want in zip(ll_check + lp_check, stored[check]):
        # solver-tolerance slack; the check catches wrong densities, not
        # rounding differences between evaluation paths
        if not math.isclose(float(got), float(want), rel_tol=1e-4, abs_tol=1e-4):
            raise ValueError(
                "loglik + logprior does not reproduce the sampled density; "
                "wrong callables for these draws"
            )
    return float(np.mean(np.asarray(loglik(V), dtype=float))) - float(log_evidence)


# ---------------------------------------------------------------- marginals


class KernelDensity:
    """Gaussian kernel density estimate on a single coordinate."""

    def __init__(self, points: np.ndarray, bandwidth: float):
        points = np.asarray(points, dtype=float).ravel()
        if points.size == 0:
            raise ValueError("no points")
        if not np.all(np.isfinite(points)):
            raise ValueError("non-finite points")
        bandwidth = float(bandwidth)
        if not (math.isfinite(bandwidth) and bandwidth > 0.0):
            raise ValueError(f"bandwidth must be positive, got {bandwidth}")
        self._points = points
        self.bandwidth = bandwidth
        self.n = points.size
        self._log_norm = (
            math.log(self.n) + math.log(bandwidth) + 0.5 * math.log(2.0 * math.pi)
        )

    def logpdf(self, q) -> np.ndarray:
        """Log density at the query points, evaluated in memory-bounded blocks."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.empty(q.shape)
        block = max(1, 4_000_000 // self.n)
        for s in range(0, q.size, block):
            z = (q[s : s + block, None] - self._points[None, :]) / self.bandwidth
            out[s : s + block] = logsumexp(-0.5 * z * z, axis=1) - self._log_norm
        return out

    def __call__(self, q) -> np.ndarray:
        return np.exp(self.logpdf(q))


def kde_marginal(draws, bandwidth: float | None = None) -> KernelDensity:
    """Kernel density over one parameter's draws.

    The default bandwidth is the draw standard deviation scaled by
    n**(-1/5); constant draws have no data-driven scale, so they require an
    explicit bandwidth.  Fewer than 100 draws are refused outright.
    """
    draws = np.asarray(draws, dtype=float).ravel()
    if draws.size < _MIN_KDE_DRAWS:
        raise ValueError(
            f"need at least {_MIN_KDE_DRAWS} draws for a usable density, "
            f"got {draws.size}"
        )
    if bandwidth is None:
        sd = float(np.std(draws, ddof=1))
        if not sd > 0.0:
            raise ValueError(
                "draws have zero variance; pass an explicit bandwidth"
            )
        bandwidth = sd * draws.size ** (-0.2)
    return KernelDensity(draws, bandwidth)


def marginal_utility(draws, prior_logpdf, bandwidth: float | None = None) -> float:
    """Prior-to-posterior information in one parameter's marginal.

    Estimated as the average over the draws of the kernel log density minus
    the prior log density; prior_logpdf must be vectorized over an array of
    points and must be positive wherever the draws fall.
    """
    draws = np.asarray(draws, dtype=float).ravel()
    kde = kde_marginal(draws, bandwidth)
    prior_lp = np.asarray(prior_logpdf(draws), dtype=float)
    if prior_lp.shape != draws.shape:
        raise ValueError("prior_logpdf must return one density per draw")
    if not np.all(np.isfinite(prior_lp)):
        raise ValueError("prior density vanishes on some draws; wrong prior")
    return float(np.mean(kde.logpdf(draws) - prior_lp))


# ------------------------------------------------------- per-design rollout


@dataclass(frozen=True)
class UtilityEstimate:
    """Scores of a single simulated dataset under one design."""

    joint: float
    per_param: dict
    log_evidence: float
    evidence_error: float
    n_draws: int
    bandwidths: dict
    diagnostics_ok: bool = True


@dataclass(frozen=True)
class DesignUtility:
    """Monte Carlo utility of a design over prior-predictive datasets.

    Replicates whose fit or evidence failed are excluded and their reasons
    recorded; means and standard errors cover the retained replicates only.
    With fewer than two retained replicates the standard errors are NaN,
    and with none the means are too.
    """

    design: Design
    n_requested: int
    n_excluded: int
    exclusions: tuple
    estimates: tuple
    joint_mean: float
    joint_se: float
    per_param_mean: dict
    per_param_se: dict

    @property
    def n_retained(self) -> int:
        return self.n_requested - self.n_excluded

    @property
    def unusable(self) -> bool:
        """More than half the replicates failed: do not rank this design."""
        return 2 * self.n_excluded > self.n_requested


def _mean_se(values) -> tuple:
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        return float("nan"), float("nan")
    mean = float(math.fsum(vals) / vals.size)
    if vals.size < 2:
        return mean, float("nan")
    return mean, float(np.std(vals, ddof=1) / math.sqrt(vals.size))


def _score_fit(fit: FitResult, log_evidence: float, evidence_error: float) -> UtilityEstimate:
    model = fit.model
    joint = joint_utility(
        fit.samples, model.log_likelihood_many, model.log_prior_many, log_evidence
    )
    V = fit.samples.combined()
    per_param = {}
    bandwidths = {}
    for j, name in enumerate(model.global_names):
        prior = model.priors[name.split("[")[0]]
        h = kde_marginal(V[:, j]).bandwidth
        per_param[name] = marginal_utility(
            V[:, j], prior.logpdf_unconstrained, bandwidth=h
        )
        bandwidths[name] = h
    return UtilityEstimate(
        joint=joint,
        per_param=per_param,
        log_evidence=float(log_evidence),
        evidence_error=float(evidence_error),
        n_draws=V.shape[0],
        bandwidths=bandwidths,
        diagnostics_ok=not fit.flagged,
    )


def _replicate(args) -> tuple:
    """One prior-predictive replicate; returns ("ok", estimate) or ("fail", why)."""
    design, priors, settings, seeds, fit_fn = args
    s_truth, s_sim, s_fit, s_bridge = seeds
    truth = sample_truth(
        priors, np.random.default_rng(s_truth), feedback=settings.feedback
    )
    try:
        dataset = simulate_dataset(
            truth, design, s_sim, gain_scale=settings.gain_scale
        )
    except IntegrationError as err:
        return "fail", f"simulation: {err}"
    try:
        fit = fit_fn(dataset, priors, settings, seed=s_fit)
    except SamplerError as err:
        return "fail", f"sampler: {err}"
    if fit.flagged:
        return "fail", "diagnostics: poor mixing for " + ", ".join(fit.flagged)
    try:
        log_z, z_err = log_marginal_bridge(
            fit.samples, fit.model.log_posterior, seed=s_bridge
        )
    except EvidenceError as err:
        return "fail", f"evidence: {err}"
    return "ok", _score_fit(fit, log_z, z_err)


def expected_utility(
    design: Design,
    priors: PriorSpec,
    n_datasets: int,
    settings: FitSettings | None = None,
    *,
    seed: int = 0,
    workers: int = 1,
    fit_fn=fit_dataset,
) -> DesignUtility:
    """Monte Carlo expected information gain of a design.

    Each replicate draws a truth from the prior, simulates a dataset under
    the design, fits it, and scores it; failures (simulation blow-ups,
    unusable posteriors, poor mixing, evidence breakdowns) are excluded
    with a recorded reason rather than aborting the whole evaluation.
    Replicates are seeded independently of each other, so the result does
    not depend on worker count.  With workers > 1 the replicates run in
    separate processes; everything passed in, including fit_fn, must then
    be picklable.
    """
    if n_datasets < 2:
        raise ValueError("need at least 2 datasets for a standard error")
    if settings is None:
        settings = FitSettings()
    children = np.random.SeedSequence(seed).spawn(n_datasets)
    tasks = [
        (design, priors, settings, tuple(int(x) for x in c.generate_state(4)), fit_fn)
        for c in children
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replicate, tasks))
    else:
        outcomes = [_replicate(t) for t in tasks]

    estimates = tuple(est for status, est in outcomes if status == "ok")
    exclusions = tuple(why for status, why in outcomes if status == "fail")

    joint_mean, joint_se = _mean_se([e.joint for e in estimates])
    per_param_mean: dict = {}
    per_param_se: dict = {}
    if estimates:
        for name in estimates[0].per_param:
            m, s = _mean_se([e.per_param[name] for e in estimates])
            per_param_mean[name] = m
            per_param_se[name] = s

    return DesignUtility(
        design=design,
        n_requested=n_datasets,
        n_excluded=len(exclusions),
        exclusions=exclusions,
        estimates=estimates,
        joint_mean=joint_mean,
        joint_se=joint_se,
        per_param_mean=per_param_mean,
        per_param_se=per_param_se,
    )
