"""Marginal-likelihood estimation from posterior draws by bridge sampling.

The estimator iterates the optimal-bridge fixed point between the posterior
draws and a moment-matched multivariate normal proposal.  Half of the draws
fit the proposal, the other half enter the estimate, so the proposal is
never tuned on the points it is evaluated against.  All ratio arithmetic
stays in log space; a median shift keeps the fixed-point iteration centered
regardless of the density's absolute scale.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .sampler import PosteriorSamples, bulk_ess, split_rhat

__all__ = ["EvidenceError", "log_marginal_bridge", "bayes_factor"]

_RHAT_LIMIT = 1.05


class EvidenceError(RuntimeError):
    """Bridge estimation failed or its preconditions do not hold."""


def _fit_proposal(draws: np.ndarray):
    """Moment-matched normal for the proposal: (mean, Cholesky of cov).

    A sample covariance that is not positive definite (constant or
    duplicated coordinates) is inflated along the diagonal in escalating
    steps before giving up.
    """
    mean = draws.mean(axis=0)
    cov = np.cov(draws.T, ddof=1)
    cov = np.atleast_2d(cov)
    scale = max(float(np.mean(np.diag(cov))), 1e-300)
    for exponent in range(-8, 1):
        try:
            return mean, np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            cov = cov + scale * 10.0**exponent * np.eye(cov.shape[0])
    raise EvidenceError("sample covariance is degenerate beyond repair")


def _normal_logpdf(points: np.ndarray, mean: np.ndarray, chol: np.ndarray):
    dim = mean.shape[0]
    w = solve_triangular(chol, (points - mean).T, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * (dim * math.log(2.0 * math.pi) + logdet + np.sum(w * w, axis=0))


def log_marginal_bridge(
    samples: PosteriorSamples,
    logpost,
    seed: int,
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> tuple:
    """Log normalizing constant of exp(logpost) and its relative MC error.

    logpost must be the same unnormalized log density the samples were
    drawn from (checked against the stored values at a few draws).  Chains
    must have mixed: any split R-hat above 1.05 is refused, because the
    estimator inherits whatever bias the draws carry.

    Returns (log evidence, relative error).  The error combines the
    proposal-side variance with an autocorrelation-adjusted posterior-side
    variance, so it is comparable across chain lengths.
    """
    draws = samples.draws
    n_chains, n_draws, dim = draws.shape
    if n_draws < 4:
        raise EvidenceError("too few draws per chain to split")
    for j in range(dim):
        if split_rhat(draws[:, :, j]) > _RHAT_LIMIT:
            raise EvidenceError(
                f"chains have not mixed (split R-hat > {_RHAT_LIMIT} for "
                f"{samples.param_names[j]}); evidence would be biased"
            )

    half = n_draws // 2
    fit_half = draws[:, :half].reshape(-1, dim)
    est_half = draws[:, half:].reshape(-1, dim)
    lp_est = samples.log_posts[:, half:].reshape(-1)

    rng = np.random.default_rng(seed)
    check = rng.choice(est_half.shape[0], size=min(3, est_half.shape[0]), replace=False)
    for j in check:
        got = float(logpost(est_half[j]))
        # loose tolerance: recomputing a density that integrates an ODE can
        # differ from the stored value at solver-tolerance level; the check
        # only needs to catch passing the wrong density entirely
        if not math.isclose(got, float(lp_est[j]), rel_tol=1e-4, abs_tol=1e-4):
            raise EvidenceError(
                "logpost disagrees with the stored draw densities; the "
                "samples were not drawn from this density"
            )

    mean, chol = _fit_proposal(fit_half)
    n1 = est_half.shape[0]
    n2 = n1
    z = rng.standard_normal((n2, dim))
    prop = mean + z @ chol.T

    lq_est = _normal_logpdf(est_half, mean, chol)
    lq_prop = _normal_logpdf(prop, mean, chol)
    lp_prop = np.fromiter((logpost(v) for v in prop), dtype=float, count=n2)
    # a proposal tail point may fall where the target is numerically zero;
    # that is a zero bridge weight, not an error
    lp_prop = np.where(np.isnan(lp_prop), -np.inf, lp_prop)

    # log ratios of target to proposal on each point set, median-centered so
    # the fixed point sits near zero whatever the density's absolute scale
    l1 = lp_est - lq_est
    l2 = lp_prop - lq_prop
    shift = float(np.median(l1))
    l1 = l1 - shift
    l2 = l2 - shift

    log_s1 = math.log(n1 / (n1 + n2))
    log_s2 = math.log(n2 / (n1 + n2))

    # reciprocal-importance start: 1/r0 = mean over draws of q/p
    log_r = -(logsumexp(-l1) - math.log(n1))
    for _ in range(max_iter):
        log_num = logsumexp(l2 - np.logaddexp(log_s1 + l2, log_s2 + log_r))
        log_den = logsumexp(-np.logaddexp(log_s1 + l1, log_s2 + log_r))
        log_r_new = (log_num - math.log(n2)) - (log_den - math.log(n1))
        delta = abs(log_r_new - log_r)
        log_r = log_r_new
        if delta < tol:
            break
    else:
        raise EvidenceError(f"bridge iteration did not converge in {max_iter} steps")

    # relative mean-squared error: iid proposal term plus posterior term
    # scaled by the draws' effective sample size
    f_prop = np.exp(l2 - np.logaddexp(log_s1 + l2, log_s2 + log_r))
    f_est = np.exp(-np.logaddexp(log_s1 + l1, log_s2 + log_r))
    ess = bulk_ess(f_est.reshape(n_chains, -1))
    ess = min(max(ess, 1.0), float(n1))
    re2 = _rel_var(f_prop) / n2 + _rel_var(f_est) / ess
    return float(log_r + shift), float(math.sqrt(max(re2, 0.0)))


def _rel_var(f: np.ndarray) -> float:
    m = float(f.mean())
    if m == 0.0:
        return 0.0
    return float(f.var(ddof=1)) / (m * m)


def bayes_factor(log_ev_a: float, log_ev_b: float) -> float:
    """Evidence ratio of variant A over variant B."""
    if not (math.isfinite(log_ev_a) and math.isfinite(log_ev_b)):
        raise ValueError("log evidences must be finite")
    return math.exp(log_ev_a - log_ev_b)
