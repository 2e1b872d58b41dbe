"""Hierarchical model for cross-sectional cell-count observations.

Each animal is observed once.  Baseline animals (day 0) measure the initial
condition directly; their latent initial state integrates out analytically:

    y_i ~ N(log mu, (sigma_t^2 + sigma_b^2) I)                 (baseline)

Animals sacrificed at a later day t_j carry a latent initial log-count pair

    u_j ~ N(log mu, sigma_b^2 I)
    y_j ~ N(log x(exp(u_j), theta, t_j), sigma_t^2 I)          (post-baseline)

with x(.) the deterministic two-compartment dynamics from ode.py.  The
sampler works on an unconstrained vector: logit(2*p0 - 1), logs of the
rates, gains, noise scales and means, and one latent pair per post-baseline
animal.  Latents default to the non-centered coordinates z with
u = log mu + sigma_b * z, which removes the funnel between sigma_b and u;
set noncentered=False for the direct-u coordinates.

Gradients are assembled from the forward-sensitivity blocks of the ODE
solve plus analytic prior/transform derivatives; no autodiff anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ode import IntegrationError, OdeParams, solve_stacked
from .priors import (
    GLOBAL_NAMES,
    PriorSpec,
    normal_logpdf,
    transform_forward,
    transform_inverse,
)

__all__ = [
    "Design",
    "MouseRecord",
    "Dataset",
    "HierarchicalParams",
    "HierarchicalModel",
    "simulate_dataset",
    "sample_truth",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Design:
    """Observation schedule: which days, and how many mice die on each."""

    days: tuple
    replicates: tuple

    def __post_init__(self):
        days = tuple(float(d) for d in self.days)
        reps = tuple(int(r) for r in self.replicates)
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "replicates", reps)
        if len(days) == 0 or len(days) != len(reps):
            raise ValueError("days and replicates must be non-empty, equal length")
        if days[0] != 0.0:
            raise ValueError(f"first observation day must be 0, got {days[0]}")
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ValueError("days must be strictly increasing")
        if any(r <= 0 for r in reps):
            raise ValueError("replicates must be positive")

    def check_max_day(self, max_day: float) -> None:
        for d in self.days:
            if d > max_day:
                raise ValueError(f"day {d:g} exceeds the modeled horizon of {max_day:g} days")

    @property
    def n_mice(self) -> int:
        return sum(self.replicates)

    @property
    def n_baseline(self) -> int:
        return self.replicates[0]

    @property
    def n_post(self) -> int:
        return self.n_mice - self.n_baseline

    def label(self) -> str:
        days = ",".join(f"{d:g}" for d in self.days)
        reps = ",".join(str(r) for r in self.replicates)
        if len(set(self.replicates)) == 1:
            reps = str(self.replicates[0])
        return f"{{{days}}}x{reps}"


@dataclass(frozen=True)
class MouseRecord:
    mouse_id: str
    day: float
    y_hsc: float
    y_mpp: float
    group: str = ""


@dataclass(frozen=True)
class Dataset:
    """Log-scale observations, one record per sacrificed mouse."""

    records: tuple
    design: Design | None = None
    redraws: int = 0

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        ids = [r.mouse_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate mouse_id in dataset")
        for r in self.records:
            if not (np.isfinite(r.y_hsc) and np.isfinite(r.y_mpp)):
                raise ValueError(f"non-finite observation for mouse {r.mouse_id}")
            if r.day < 0:
                raise ValueError(f"negative day for mouse {r.mouse_id}")
            if self.design is not None and r.day not in self.design.days:
                raise ValueError(
                    f"mouse {r.mouse_id} observed at day {r.day:g}, not in the design"
                )

    def groups(self) -> tuple:
        seen = []
        for r in self.records:
            if r.group not in seen:
                seen.append(r.group)
        return tuple(seen) if seen else ("",)

    @property
    def n_records(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class HierarchicalParams:
    """Constrained-scale parameter bundle.

    theta carries gains on the reporting (table) scale; the model multiplies
    in gain_scale before the ODE sees them.  mu has one (hsc, mpp) row per
    group; u has one log-scale row per post-baseline mouse in dataset order.
    """

    theta: OdeParams
    mu: np.ndarray
    sigma_b: float
    sigma_t: float
    u: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        u = np.asarray(self.u, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "u", u)
        if mu.shape[1] != 2 or np.any(mu <= 0):
            raise ValueError("mu must be positive (n_groups, 2)")
        # zero is allowed so noise-free truth bundles can drive simulation;
        # the unconstrained transforms keep sigma > 0 inside the model
        if self.sigma_b < 0 or self.sigma_t < 0:
            raise ValueError("noise scales must be non-negative")


class HierarchicalModel:
    """Binds a dataset, priors and settings into an unconstrained posterior.

    Coordinate ordering of the unconstrained vector is fixed: dynamics
    parameters (p0, eta1, eta2[, gamma1, gamma2]), then sigma_t, sigma_b,
    then the group means (mu_hsc, mu_mpp per group), then one latent pair
    per post-baseline mouse in dataset order.  param_names() spells it out.
    """

    def __init__(
        self,
        dataset: Dataset,
        priors: PriorSpec,
        *,
        feedback: bool = True,
        gain_scale: float = 1e-4,
        noncentered: bool = True,
        ode_rtol: float = 1e-8,
        ode_atol: float = 1e-8,
    ):
        self.dataset = dataset
        self.priors = priors
        self.feedback = bool(feedback)
        self.gain_scale = float(gain_scale)
        self.noncentered = bool(noncentered)
        self.ode_rtol = float(ode_rtol)
        self.ode_atol = float(ode_atol)
        self.n_integration_failures = 0

        self.theta_names = ("p0", "eta1", "eta2") + (
            ("gamma1", "gamma2") if self.feedback else ()
        )
        self.group_labels = dataset.groups()
        n_groups = len(self.group_labels)
        if n_groups == 1:
            mu_names = ["mu_hsc", "mu_mpp"]
        else:
            mu_names = []
            for g in self.group_labels:
                mu_names += [f"mu_hsc[{g}]", f"mu_mpp[{g}]"]
        self.global_names = list(self.theta_names) + ["sigma_t", "sigma_b"] + mu_names
        self._i_sigma_t = len(self.theta_names)
        self._i_sigma_b = self._i_sigma_t + 1
        self._i_mu0 = self._i_sigma_b + 1

        gidx = {g: i for i, g in enumerate(self.group_labels)}
        day0, post = [], []
        for ridx, rec in enumerate(dataset.records):
            (day0 if rec.day == 0.0 else post).append(ridx)
        self._day0_y = np.array(
            [[dataset.records[i].y_hsc, dataset.records[i].y_mpp] for i in day0]
        ).reshape(len(day0), 2)
        self._day0_group = np.array(
            [gidx[dataset.records[i].group] for i in day0], dtype=int
        )
        self._post_y = np.array(
            [[dataset.records[i].y_hsc, dataset.records[i].y_mpp] for i in post]
        ).reshape(len(post), 2)
        self._post_group = np.array(
            [gidx[dataset.records[i].group] for i in post], dtype=int
        )
        post_days = np.array([dataset.records[i].day for i in post])
        self._post_ids = [dataset.records[i].mouse_id for i in post]
        uniq = np.unique(post_days)
        self._t_grid = np.concatenate([[0.0], uniq])
        self._post_tidx = np.array(
            [1 + int(np.searchsorted(uniq, d)) for d in post_days], dtype=int
        )

        self.n_groups = n_groups
        self.n_latent = len(post)
        self.n_global = len(self.global_names)
        self.dim = self.n_global + 2 * self.n_latent

        # prior locations/scales aligned with the unconstrained global block
        ms, ss = [], []
        for name in self.global_names:
            base = name.split("[")[0]
            sp = priors[base]
            ms.append(sp.m)
            ss.append(sp.s)
        self._prior_m = np.array(ms)
        self._prior_s = np.array(ss)

    # ---------------------------------------------------------------- names

    def param_names(self) -> list:
        """Constrained-scale names, one per unconstrained coordinate."""
        names = list(self.global_names)
        for mid in self._post_ids:
            names += [f"u_hsc[{mid}]", f"u_mpp[{mid}]"]
        return names

    # ----------------------------------------------------------- transforms

    def _theta_of(self, params: HierarchicalParams) -> tuple:
        th = params.theta
        if self.feedback:
            return (th.p0, th.eta1, th.eta2, th.gamma1, th.gamma2)
        return (th.p0, th.eta1, th.eta2)

    def to_unconstrained(self, params: HierarchicalParams) -> np.ndarray:
        """Map constrained parameters to the sampling coordinates."""
        if params.u.shape[0] != self.n_latent:
            raise ValueError(
                f"expected {self.n_latent} latent pairs, got {params.u.shape[0]}"
            )
        if params.mu.shape[0] != self.n_groups:
            raise ValueError(f"expected mu for {self.n_groups} group(s)")
        v = np.empty(self.dim)
        vals = self._theta_of(params) + (params.sigma_t, params.sigma_b)
        for i, (name, val) in enumerate(zip(self.global_names, vals)):
            v[i] = transform_forward(name.split("[")[0], float(val))
        v[self._i_mu0 : self.n_global] = np.log(params.mu).ravel()
        if self.n_latent:
            log_mu = np.log(params.mu)[self._post_group]
            if self.noncentered:
                z = (params.u - log_mu) / params.sigma_b
                v[self.n_global :] = z.ravel()
            else:
                v[self.n_global :] = params.u.ravel()
        return v

    def from_unconstrained(self, v) -> tuple:
        """Inverse map; returns (params, log |d constrained / d v|)."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite unconstrained vector")
        cvals = np.empty(self.n_global)
        log_jac = 0.0
        for i, name in enumerate(self.global_names):
            cvals[i], lj = transform_inverse(name.split("[")[0], float(v[i]))
            log_jac += lj
        # exp underflows to 0.0 for w < -745 without raising; the constrained
        # space is open, so map that to the same overflow path as exp(w) = inf
        if not np.all(np.isfinite(cvals)) or np.any(cvals <= 0.0):
            raise OverflowError("unconstrained vector maps outside the open domain")
        ntheta = len(self.theta_names)
        if self.feedback:
            theta = OdeParams(*cvals[:5])
        else:
            theta = OdeParams(cvals[0], cvals[1], cvals[2], 0.0, 0.0)
        sigma_t = cvals[ntheta]
        sigma_b = cvals[ntheta + 1]
        mu = cvals[self._i_mu0 :].reshape(self.n_groups, 2)
        if self.n_latent:
            lat = v[self.n_global :].reshape(self.n_latent, 2)
            if self.noncentered:
                log_mu = v[self._i_mu0 : self.n_global].reshape(self.n_groups, 2)
                u = log_mu[self._post_group] + sigma_b * lat
                log_jac += 2.0 * self.n_latent * math.log(sigma_b)
            else:
                u = lat
        else:
            u = np.zeros((0, 2))
        params = HierarchicalParams(
            theta=theta, mu=mu, sigma_b=sigma_b, sigma_t=sigma_t, u=u
        )
        return params, log_jac

    # ------------------------------------------------------------- densities

    def log_prior(self, params: HierarchicalParams) -> float:
        """Joint prior density over the constrained parameters."""
        total = 0.0
        vals = self._theta_of(params) + (params.sigma_t, params.sigma_b)
        for name, val in zip(self.global_names, vals):
            base = name.split("[")[0]
            total += self.priors[base].logpdf_constrained(base, float(val))
        for g in range(self.n_groups):
            for c, mu_name in enumerate(("mu_hsc", "mu_mpp")):
                total += self.priors[mu_name].logpdf_constrained(
                    mu_name, float(params.mu[g, c])
                )
        if self.n_latent:
            log_mu = np.log(params.mu)[self._post_group]
            total += float(
                np.sum(normal_logpdf(params.u, log_mu, params.sigma_b))
            )
        return total

    def _ode_params(self, theta: OdeParams) -> np.ndarray:
        return np.array(
            [
                theta.p0,
                theta.eta1,
                theta.eta2,
                theta.gamma1 * self.gain_scale,
                theta.gamma2 * self.gain_scale,
            ]
        )

    def _solve_posts(self, theta_eff: np.ndarray, u: np.ndarray, kind: int):
        """One stacked solve for all post-baseline mice; returns per-mouse rows."""
        pm = np.tile(theta_eff, (self.n_latent, 1))
        with np.errstate(over="ignore"):
            x0 = np.exp(u)
        if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(theta_eff))):
            raise IntegrationError("initial state or parameters overflow", t_reached=0.0)
        raw = solve_stacked(
            pm,
            x0,
            self._t_grid,
            kind=kind,
            rtol=self.ode_rtol,
            atol=self.ode_atol,
        )
        return raw[self._post_tidx, np.arange(self.n_latent), :]

    def log_likelihood(self, params: HierarchicalParams) -> float:
        """Observation density; raises IntegrationError on ODE failure."""
        total = 0.0
        log_mu = np.log(params.mu)
        if self._day0_y.shape[0]:
            var0 = params.sigma_t**2 + params.sigma_b**2
            r = self._day0_y - log_mu[self._day0_group]
            total += float(np.sum(-0.5 * (_LOG_2PI + np.log(var0)) - r**2 / (2.0 * var0)))
        if self.n_latent:
            if params.u.shape[0] != self.n_latent:
                raise ValueError("params not bound to this dataset's latent count")
            theta_eff = self._ode_params(params.theta)
            try:
                rows = self._solve_posts(theta_eff, params.u, kind=0)
            except IntegrationError as err:
                raise self._locate_failure(theta_eff, params.u, err) from None
            mean = np.log(rows[:, :2])
            r = self._post_y - mean
            st2 = params.sigma_t**2
            total += float(
                np.sum(-0.5 * (_LOG_2PI + np.log(st2)) - r**2 / (2.0 * st2))
            )
        return total

    def _locate_failure(
        self, theta_eff: np.ndarray, u: np.ndarray, err: IntegrationError
    ) -> IntegrationError:
        """Re-solve mouse by mouse to name the one whose integration failed."""
        for j, mid in enumerate(self._post_ids):
            try:
                solve_stacked(
                    theta_eff[None, :],
                    np.exp(u[j])[None, :],
                    self._t_grid,
                    kind=0,
                    rtol=self.ode_rtol,
                    atol=self.ode_atol,
                )
            except (IntegrationError, ValueError) as single:
                t_hit = getattr(single, "t_reached", 0.0)
                return IntegrationError(
                    f"integration failed for mouse {mid}: {single}", t_reached=t_hit
                )
        return err

    def log_posterior(self, v) -> float:
        """log_prior + log_likelihood + transform log-Jacobian at v."""
        try:
            params, log_jac = self.from_unconstrained(v)
        except OverflowError:
            # exp(w) beyond float range: zero posterior mass out here
            return -np.inf
        try:
            ll = self.log_likelihood(params)
        except IntegrationError:
            self.n_integration_failures += 1
            return -np.inf
        return self.log_prior(params) + ll + log_jac

    # -------------------------------------------------------------- gradient

    def log_posterior_with_grad(self, v) -> tuple:
        """Posterior log-density and its gradient in the sampling coordinates.

        Value and gradient come from one augmented ODE solve (states +
        parameter sensitivities + initial-condition sensitivities).
        Integration failure returns (-inf, zeros), which samplers treat as
        a rejected proposal; overflow at extreme probe points degrades to
        -inf or NaN rather than raising, for the same reason.
        """
        with np.errstate(over="ignore", invalid="ignore"):
            return self._logpost_grad_inner(np.asarray(v, dtype=float))

    def _logpost_grad_inner(self, v: np.ndarray) -> tuple:
        try:
            params, log_jac = self.from_unconstrained(v)
        except OverflowError:
            return -np.inf, np.zeros(self.dim)
        grad = np.zeros(self.dim)
        ntheta = len(self.theta_names)
        i_st, i_sb, i_mu0 = self._i_sigma_t, self._i_sigma_b, self._i_mu0

        # prior-plus-Jacobian block is normal in the transformed coordinates
        w = v[: self.n_global]
        value = float(np.sum(normal_logpdf(w, self._prior_m, self._prior_s)))
        grad[: self.n_global] = -(w - self._prior_m) / self._prior_s**2

        sigma_t, sigma_b = params.sigma_t, params.sigma_b
        log_mu = np.log(params.mu)

        if self.n_latent:
            lat = v[self.n_global :].reshape(self.n_latent, 2)
            if self.noncentered:
                z = lat
                value += float(np.sum(-0.5 * (_LOG_2PI + z**2)))
                grad[self.n_global :] = -z.ravel()
            else:
                u = params.u
                r = u - log_mu[self._post_group]
                value += float(np.sum(normal_logpdf(u, log_mu[self._post_group], sigma_b)))
                gl = -(r / sigma_b**2)
                grad[self.n_global :] = gl.ravel()
                np.add.at(
                    grad,
                    i_mu0 + 2 * self._post_group,
                    r[:, 0] / sigma_b**2,
                )
                np.add.at(
                    grad,
                    i_mu0 + 2 * self._post_group + 1,
                    r[:, 1] / sigma_b**2,
                )
                grad[i_sb] += float(np.sum(-1.0 + r**2 / sigma_b**2))

        # baseline observations
        if self._day0_y.shape[0]:
            var0 = sigma_t**2 + sigma_b**2
            r0 = self._day0_y - log_mu[self._day0_group]
            value += float(np.sum(-0.5 * (_LOG_2PI + np.log(var0)) - r0**2 / (2.0 * var0)))
            np.add.at(grad, i_mu0 + 2 * self._day0_group, r0[:, 0] / var0)
            np.add.at(grad, i_mu0 + 2 * self._day0_group + 1, r0[:, 1] / var0)
            dldv = float(np.sum(-0.5 / var0 + r0**2 / (2.0 * var0**2)))
            grad[i_st] += dldv * 2.0 * sigma_t**2
            grad[i_sb] += dldv * 2.0 * sigma_b**2

        # post-baseline observations
        if self.n_latent:
            theta_eff = self._ode_params(params.theta)
            try:
                rows = self._solve_posts(theta_eff, params.u, kind=2)
            except IntegrationError:
                self.n_integration_failures += 1
                return -np.inf, np.zeros(self.dim)
            x = rows[:, :2]
            sens = rows[:, 2:12].reshape(self.n_latent, 2, 5)
            ic_sens = rows[:, 12:16].reshape(self.n_latent, 2, 2)

            st2 = sigma_t**2
            resid = self._post_y - np.log(x)
            value += float(np.sum(-0.5 * (_LOG_2PI + np.log(st2)) - resid**2 / (2.0 * st2)))
            rho = resid / st2 / x  # (J,2): d loglik / d x_c

            # theta chain: effective-scale sensitivities times d theta_eff / d w
            g_theta = np.einsum("jc,jcp->p", rho, sens)
            q = 1.0 / (1.0 + math.exp(-v[0]))
            dtheta_dw = [q * (1.0 - q) / 2.0, params.theta.eta1, params.theta.eta2]
            if self.feedback:
                dtheta_dw += [theta_eff[3], theta_eff[4]]
            for p in range(ntheta):
                grad[p] += g_theta[p] * dtheta_dw[p]

            # latent chain through the initial condition
            x0 = np.exp(params.u)
            hmat = np.einsum("jc,jcd->jd", rho, ic_sens) * x0  # d loglik / d u_jd
            if self.noncentered:
                z = v[self.n_global :].reshape(self.n_latent, 2)
                grad[self.n_global :] += (hmat * sigma_b).ravel()
                np.add.at(grad, i_mu0 + 2 * self._post_group, hmat[:, 0])
                np.add.at(grad, i_mu0 + 2 * self._post_group + 1, hmat[:, 1])
                grad[i_sb] += float(np.sum(hmat * z)) * sigma_b
            else:
                grad[self.n_global :] += hmat.ravel()

            grad[i_st] += float(np.sum(resid**2 / st2 - 1.0))

        return value, grad

    # ------------------------------------------------------------ batch eval

    def _unpack_many(self, V: np.ndarray):
        V = np.asarray(V, dtype=float)
        n = V.shape[0]
        with np.errstate(over="ignore"):
            return self._unpack_many_inner(V, n)

    def _unpack_many_inner(self, V: np.ndarray, n: int):
        q = 1.0 / (1.0 + np.exp(-V[:, 0]))
        ntheta = len(self.theta_names)
        theta_eff = np.empty((n, 5))
        theta_eff[:, 0] = 0.5 * (1.0 + q)
        theta_eff[:, 1] = np.exp(V[:, 1])
        theta_eff[:, 2] = np.exp(V[:, 2])
        if self.feedback:
            theta_eff[:, 3] = np.exp(V[:, 3]) * self.gain_scale
            theta_eff[:, 4] = np.exp(V[:, 4]) * self.gain_scale
        else:
            theta_eff[:, 3:5] = 0.0
        sigma_t = np.exp(V[:, self._i_sigma_t])
        sigma_b = np.exp(V[:, self._i_sigma_b])
        log_mu = V[:, self._i_mu0 : self.n_global].reshape(n, self.n_groups, 2)
        if self.n_latent:
            lat = V[:, self.n_global :].reshape(n, self.n_latent, 2)
            if self.noncentered:
                u = (
                    log_mu[:, self._post_group, :]
                    + sigma_b[:, None, None] * lat
                )
            else:
                u = lat
        else:
            u = np.zeros((n, 0, 2))
        return theta_eff, sigma_t, sigma_b, log_mu, u

    def log_likelihood_many(self, V: np.ndarray, chunk: int = 128) -> np.ndarray:
        """Vectorized log-likelihood at many unconstrained points.

        Post-baseline trajectories for a chunk of draws are integrated as one
        stacked system; a draw whose integration fails gets -inf.
        """
        V = np.atleast_2d(np.asarray(V, dtype=float))
        n = V.shape[0]
        theta_eff, sigma_t, sigma_b, log_mu, u = self._unpack_many(V)
        out = np.zeros(n)

        if self._day0_y.shape[0]:
            var0 = (sigma_t**2 + sigma_b**2)[:, None, None]
            r = self._day0_y[None, :, :] - log_mu[:, self._day0_group, :]
            out += np.sum(-0.5 * (_LOG_2PI + np.log(var0)) - r**2 / (2.0 * var0), axis=(1, 2))

        if self.n_latent:
            J = self.n_latent
            for lo in range(0, n, chunk):
                hi = min(lo + chunk, n)
                nb = hi - lo
                pm = np.repeat(theta_eff[lo:hi], J, axis=0)
                x0 = np.exp(u[lo:hi]).reshape(nb * J, 2)
                try:
                    raw = solve_stacked(
                        pm,
                        x0,
                        self._t_grid,
                        kind=0,
                        rtol=self.ode_rtol,
                        atol=self.ode_atol,
                    )
                except IntegrationError:
                    for i in range(lo, hi):
                        out[i] += self._loglik_posts_single(
                            theta_eff[i], u[i], sigma_t[i]
                        )
                    continue
                tidx = np.tile(self._post_tidx, nb)
                rows = raw[tidx, np.arange(nb * J), :2].reshape(nb, J, 2)
                mean = np.log(rows)
                r = self._post_y[None, :, :] - mean
                st2 = (sigma_t[lo:hi] ** 2)[:, None, None]
                out[lo:hi] += np.sum(
                    -0.5 * (_LOG_2PI + np.log(st2)) - r**2 / (2.0 * st2), axis=(1, 2)
                )
        return out

    def _loglik_posts_single(self, theta_eff, u, sigma_t) -> float:
        try:
            pm = np.tile(theta_eff, (self.n_latent, 1))
            raw = solve_stacked(
                pm,
                np.exp(u),
                self._t_grid,
                kind=0,
                rtol=self.ode_rtol,
                atol=self.ode_atol,
            )
        except IntegrationError:
            self.n_integration_failures += 1
            return -np.inf
        rows = raw[self._post_tidx, np.arange(self.n_latent), :2]
        r = self._post_y - np.log(rows)
        st2 = sigma_t**2
        return float(np.sum(-0.5 * (_LOG_2PI + np.log(st2)) - r**2 / (2.0 * st2)))

    def log_prior_many(self, V: np.ndarray) -> np.ndarray:
        """Vectorized log prior density on the sampling space at many points.

        Includes the latent-effect prior (standard normal increments under the
        non-centered parameterization, hierarchical normals otherwise), so
        ``log_prior_many(V) + log_likelihood_many(V)`` reproduces
        ``log_posterior_many(V)`` exactly.
        """
        V = np.atleast_2d(np.asarray(V, dtype=float))
        w = V[:, : self.n_global]
        out = np.sum(normal_logpdf(w, self._prior_m, self._prior_s), axis=1)
        if self.n_latent:
            lat = V[:, self.n_global :]
            if self.noncentered:
                out += np.sum(-0.5 * (_LOG_2PI + lat**2), axis=1)
            else:
                _, sigma_t, sigma_b, log_mu, u = self._unpack_many(V)
                uu = u - log_mu[:, self._post_group, :]
                out += np.sum(
                    -0.5 * (_LOG_2PI + uu**2 / sigma_b[:, None, None] ** 2)
                    - np.log(sigma_b)[:, None, None],
                    axis=(1, 2),
                )
        return out

    def log_posterior_many(self, V: np.ndarray, chunk: int = 128) -> np.ndarray:
        """Vectorized log_posterior (value only) at many points."""
        V = np.atleast_2d(np.asarray(V, dtype=float))
        return self.log_prior_many(V) + self.log_likelihood_many(V, chunk=chunk)

    # --------------------------------------------------------- constrained

    def constrained_draws(self, V: np.ndarray) -> dict:
        """Map unconstrained draws (n, dim) to named constrained columns."""
        V = np.atleast_2d(np.asarray(V, dtype=float))
        theta_eff, sigma_t, sigma_b, log_mu, u = self._unpack_many(V)
        cols = {}
        for i, name in enumerate(self.global_names):
            base = name.split("[")[0]
            if base == "p0":
                cols[name] = 0.5 * (1.0 + 1.0 / (1.0 + np.exp(-V[:, i])))
            else:
                cols[name] = np.exp(V[:, i])
        for j, mid in enumerate(self._post_ids):
            cols[f"u_hsc[{mid}]"] = u[:, j, 0]
            cols[f"u_mpp[{mid}]"] = u[:, j, 1]
        return cols

    def initial_vector(self, rng: np.random.Generator, jitter: float = 2.0) -> np.ndarray:
        """Prior-median start (z = 0 latents) plus uniform jitter."""
        v = np.zeros(self.dim)
        v[: self.n_global] = self._prior_m
        if self.n_latent and not self.noncentered:
            log_mu = self._prior_m[self._i_mu0 : self.n_global].reshape(
                self.n_groups, 2
            )
            v[self.n_global :] = log_mu[self._post_group].ravel()
        return v + rng.uniform(-jitter, jitter, size=self.dim)

    def initial_mass(self) -> np.ndarray:
        """Per-coordinate variance guesses to seed the sampler metric.

        Prior variances for the global block, unit variance for the latents
        (exact for standardized latents, close enough otherwise).  The
        posterior is usually much tighter than the prior on the globals, but
        this is orders of magnitude better than a unit metric and adaptation
        takes over from there.  laplace_approximation() is the better seed
        whenever its optimization succeeds.
        """
        return np.concatenate([self._prior_s**2, np.ones(2 * self.n_latent)])

    def laplace_approximation(
        self, max_iter: int = 1000, fd_step: float = 1e-5
    ) -> tuple:
        """Posterior mode and local Gaussian covariance.

        Finds the mode with L-BFGS from the prior-median start and builds
        the covariance from a finite-difference Hessian of the gradient.
        Eigenvalues are floored so the result is always positive definite
        even where the curvature is indefinite (e.g. a barely identified
        gain).  Raises RuntimeError when the optimizer fails to converge;
        callers should fall back to initial_mass().

        The pair seeds the sampler: the covariance as a dense metric, the
        mode as the center of the start distribution.  The fit itself does
        not depend on either, only its warmup cost does.
        """
        from scipy.optimize import minimize

        def neg(v):
            lp, g = self.log_posterior_with_grad(v)
            if not np.isfinite(lp):
                return np.inf, np.zeros(self.dim)
            return -lp, -g

        v0 = np.zeros(self.dim)
        v0[: self.n_global] = self._prior_m
        if self.n_latent and not self.noncentered:
            log_mu = self._prior_m[self._i_mu0 : self.n_global].reshape(
                self.n_groups, 2
            )
            v0[self.n_global :] = log_mu[self._post_group].ravel()
        res = minimize(
            neg, v0, jac=True, method="L-BFGS-B",
            options={"maxiter": max_iter, "ftol": 1e-12, "gtol": 1e-8},
        )
        if not np.isfinite(res.fun) or not np.all(np.isfinite(res.x)):
            raise RuntimeError("mode search did not reach a finite optimum")
        mode = res.x

        hess = np.empty((self.dim, self.dim))
        for i in range(self.dim):
            step = np.zeros(self.dim)
            step[i] = fd_step
            _, g_hi = self.log_posterior_with_grad(mode + step)
            _, g_lo = self.log_posterior_with_grad(mode - step)
            hess[i] = -(g_hi - g_lo) / (2.0 * fd_step)
        hess = 0.5 * (hess + hess.T)
        if not np.all(np.isfinite(hess)):
            raise RuntimeError("curvature evaluation hit an integration failure")
        eigval, eigvec = np.linalg.eigh(hess)
        floor = max(eigval.max(), 1.0) * 1e-8
        eigval = np.maximum(eigval, floor)
        cov = (eigvec / eigval) @ eigvec.T
        return mode, cov


def sample_truth(
    priors: PriorSpec, rng: np.random.Generator, feedback: bool = True
) -> HierarchicalParams:
    """Draw population-level truth from the prior (no latents attached)."""
    g = priors.sample_globals(rng)
    theta = OdeParams(
        g["p0"],
        g["eta1"],
        g["eta2"],
        g["gamma1"] if feedback else 0.0,
        g["gamma2"] if feedback else 0.0,
    )
    return HierarchicalParams(
        theta=theta,
        mu=np.array([[g["mu_hsc"], g["mu_mpp"]]]),
        sigma_b=g["sigma_b"],
        sigma_t=g["sigma_t"],
    )


def simulate_dataset(
    truth: HierarchicalParams,
    design: Design,
    seed,
    *,
    gain_scale: float = 1e-4,
    group: str = "",
    max_redraws: int = 100,
    ode_rtol: float = 1e-8,
    ode_atol: float = 1e-8,
) -> Dataset:
    """Generate one synthetic dataset under a design.

    Baseline observations come from the marginal N(log mu, (sigma_t^2 +
    sigma_b^2) I); later mice draw a latent initial pair, integrate to their
    sacrifice day and add technical noise.  A latent draw whose integration
    fails is redrawn up to max_redraws times (total count recorded on the
    returned Dataset) before the dataset is abandoned with IntegrationError.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    truth.theta.validate()
    log_mu = np.log(truth.mu[0])
    theta_eff = truth.theta.with_gain_scale(gain_scale)
    records = []
    counter = 0
    redraws = 0
    width = len(str(design.n_mice))
    var0 = truth.sigma_t**2 + truth.sigma_b**2

    for day, reps in zip(design.days, design.replicates):
        for _ in range(reps):
            mid = f"m{counter:0{width}d}"
            counter += 1
            if day == 0.0:
                y = rng.normal(log_mu, np.sqrt(var0))
            else:
                for attempt in range(max_redraws + 1):
                    uj = rng.normal(log_mu, truth.sigma_b)
                    try:
                        traj = solve_stacked(
                            theta_eff.as_array()[None, :],
                            np.exp(uj)[None, :],
                            [0.0, day],
                            kind=0,
                            rtol=ode_rtol,
                            atol=ode_atol,
                        )
                        break
                    except IntegrationError:
                        redraws += 1
                        if attempt == max_redraws:
                            raise
                y = rng.normal(np.log(traj[1, 0, :]), truth.sigma_t)
            records.append(
                MouseRecord(mouse_id=mid, day=float(day), y_hsc=y[0], y_mpp=y[1], group=group)
            )
    return Dataset(records=tuple(records), design=design, redraws=redraws)
