"""Utility-estimation tests against analytic information quantities."""

import math

import numpy as np
import pytest
from scipy.stats import norm

from hemodesign.model import Design
from hemodesign.priors import ScalarPrior, prior_profile
from hemodesign.sampler import (
    PosteriorSamples,
    SamplerConfig,
    SamplerError,
    sample_posterior,
)
from hemodesign.utility import (
    KernelDensity,
    expected_utility,
    joint_utility,
    kde_marginal,
    marginal_utility,
)

_LOG_2PI = math.log(2.0 * math.pi)

# prior N(0,1) over a mean, one observation y=1 with unit noise: the
# posterior is N(1/2, 1/2) and the prior-to-posterior divergence is
# 0.5 * (1/2 + 1/4 - 1 - log(1/2))
CONJUGATE_KL = 0.5 * (0.5 + 0.25 - 1.0 - math.log(0.5))


def conjugate_loglik(V):
    V = np.atleast_2d(np.asarray(V, dtype=float))
    return -0.5 * _LOG_2PI - 0.5 * (1.0 - V[:, 0]) ** 2


def conjugate_logprior(V):
    V = np.atleast_2d(np.asarray(V, dtype=float))
    return -0.5 * _LOG_2PI - 0.5 * V[:, 0] ** 2


def handmade_samples(draws, loglik, logprior):
    """PosteriorSamples from externally generated draws."""
    chains, n, dim = draws.shape
    flat = draws.reshape(-1, dim)
    lp = (np.asarray(loglik(flat)) + np.asarray(logprior(flat))).reshape(chains, n)
    return PosteriorSamples(
        draws=draws,
        log_posts=lp,
        divergent=np.zeros((chains, n), dtype=bool),
        accept_stat=np.ones((chains, n)),
        step_size=np.ones(chains),
        param_names=tuple(f"x{i}" for i in range(dim)),
    )


class TestJointUtility:
    def test_flat_likelihood_gains_nothing(self):
        rng = np.random.default_rng(3)
        draws = rng.standard_normal((2, 200, 1))

        def flat(V):
            return np.zeros(np.atleast_2d(V).shape[0])

        s = handmade_samples(draws, flat, conjugate_logprior)
        # likelihood 1 everywhere integrates to evidence 1
        assert joint_utility(s, flat, conjugate_logprior, 0.0) == 0.0

    def test_conjugate_gain_matches_analytic_divergence(self):
        def with_grad(v):
            lp = float(conjugate_loglik(v)[0] + conjugate_logprior(v)[0])
            return lp, np.array([1.0 - 2.0 * v[0]])

        def logpost(v):
            return float(conjugate_loglik(v)[0] + conjugate_logprior(v)[0])

        cfg = SamplerConfig(chains=4, warmup=500, draws=4000, seed=52)
        s = sample_posterior(with_grad, 1, cfg)
        from hemodesign.evidence import log_marginal_bridge

        log_ev, _ = log_marginal_bridge(s, logpost, seed=0)
        gain = joint_utility(s, conjugate_loglik, conjugate_logprior, log_ev)
        assert gain == pytest.approx(CONJUGATE_KL, rel=0.05)

    def test_wrong_decomposition_rejected(self):
        rng = np.random.default_rng(4)
        draws = rng.standard_normal((2, 100, 1))
        s = handmade_samples(draws, conjugate_loglik, conjugate_logprior)

        def shifted_prior(V):
            return conjugate_logprior(V) + 0.2

        with pytest.raises(ValueError, match="reproduce"):
            joint_utility(s, conjugate_loglik, shifted_prior, 0.0)

    def test_non_finite_evidence_rejected(self):
        rng = np.random.default_rng(5)
        draws = rng.standard_normal((2, 100, 1))
        s = handmade_samples(draws, conjugate_loglik, conjugate_logprior)
        with pytest.raises(ValueError, match="finite"):
            joint_utility(s, conjugate_loglik, conjugate_logprior, math.inf)

    def test_constant_shuffle_between_factors_is_invariant(self):
        # moving a constant from the likelihood into the prior moves the
        # evidence by the same amount and leaves the gain unchanged
        rng = np.random.default_rng(6)
        draws = 0.5 + math.sqrt(0.5) * rng.standard_normal((2, 300, 1))
        c = 1.7

        def loglik_shifted(V):
            return conjugate_loglik(V) - c

        def logprior_shifted(V):
            return conjugate_logprior(V) + c

        s = handmade_samples(draws, conjugate_loglik, conjugate_logprior)
        base = joint_utility(s, conjugate_loglik, conjugate_logprior, -1.3)
        moved = joint_utility(s, loglik_shifted, logprior_shifted, -1.3 - c)
        assert moved == pytest.approx(base, abs=1e-12)


class TestKernelDensity:
    def test_density_at_zero_of_standard_normal_draws(self):
        rng = np.random.default_rng(7)
        kde = kde_marginal(rng.standard_normal(100_000))
        got = float(kde(0.0)[0])
        assert got == pytest.approx(1.0 / math.sqrt(2.0 * math.pi), rel=0.03)

    def test_integrates_to_one(self):
        rng = np.random.default_rng(8)
        kde = kde_marginal(rng.standard_normal(2000))
        grid = np.linspace(-8.0, 8.0, 2001)
        assert np.trapezoid(kde(grid), grid) == pytest.approx(1.0, abs=1e-3)

    def test_point_mass_with_forced_bandwidth_is_one_kernel(self):
        kde = kde_marginal(np.full(200, 1.5), bandwidth=0.7)
        q = np.linspace(-1.0, 4.0, 11)
        assert np.allclose(kde.logpdf(q), norm.logpdf(q, 1.5, 0.7), atol=1e-10)

    def test_default_bandwidth_follows_spread_and_size(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal(5000)
        kde = kde_marginal(3.0 * x)
        sd = float(np.std(3.0 * x, ddof=1))
        assert kde.bandwidth == pytest.approx(sd * 5000 ** (-0.2))
        assert kde.n == 5000

    def test_blocked_evaluation_matches_direct_formula(self):
        rng = np.random.default_rng(10)
        pts = rng.standard_normal(150)
        h = 0.3
        kde = KernelDensity(pts, h)
        q = rng.uniform(-3.0, 3.0, 30_000)  # spans several evaluation blocks
        z = (q[:, None] - pts[None, :]) / h
        direct = (
            np.logaddexp.reduce(-0.5 * z * z, axis=1)
            - math.log(150)
            - math.log(h)
            - 0.5 * _LOG_2PI
        )
        assert np.allclose(kde.logpdf(q), direct, atol=1e-12)

    def test_call_is_exp_of_logpdf(self):
        rng = np.random.default_rng(11)
        kde = kde_marginal(rng.standard_normal(300))
        q = np.array([-1.0, 0.0, 2.5])
        assert np.allclose(kde(q), np.exp(kde.logpdf(q)))

    def test_too_few_draws_rejected(self):
        with pytest.raises(ValueError, match="at least 100"):
            kde_marginal(np.arange(99.0))

    def test_zero_variance_needs_explicit_bandwidth(self):
        with pytest.raises(ValueError, match="zero variance"):
            kde_marginal(np.full(200, 2.0))

    def test_bad_bandwidth_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            kde_marginal(np.arange(200.0), bandwidth=0.0)
        with pytest.raises(ValueError, match="positive"):
            KernelDensity(np.arange(200.0), -1.0)

    def test_non_finite_points_rejected(self):
        pts = np.arange(200.0)
        pts[3] = np.nan
        with pytest.raises(ValueError, match="finite"):
            KernelDensity(pts, 0.5)


def std_normal_logpdf(q):
    return -0.5 * (_LOG_2PI + np.asarray(q) ** 2)


class TestMarginalUtility:
    def test_same_distribution_carries_no_information(self):
        rng = np.random.default_rng(12)
        draws = rng.standard_normal(4000)
        assert abs(marginal_utility(draws, std_normal_logpdf)) < 0.05

    def test_gaussian_shift_and_shrink_matches_analytic_divergence(self):
        # N(1, 0.5^2) against a standard normal prior:
        # KL = log(1/0.5) + (0.25 + 1)/2 - 0.5
        rng = np.random.default_rng(13)
        draws = 1.0 + 0.5 * rng.standard_normal(20_000)
        want = math.log(2.0) + (0.25 + 1.0) / 2.0 - 0.5
        assert marginal_utility(draws, std_normal_logpdf) == pytest.approx(want, rel=0.05)

    def test_tighter_posterior_is_worth_more(self):
        rng = np.random.default_rng(14)
        z = rng.standard_normal(5000)
        tight = marginal_utility(0.3 * z, std_normal_logpdf)
        loose = marginal_utility(0.8 * z, std_normal_logpdf)
        assert tight > loose > 0.0

    def test_affine_reparameterization_is_exact(self):
        # the bandwidth rule scales with the draws, so an affine map changes
        # kernel density and prior density by the same Jacobian factor
        rng = np.random.default_rng(15)
        x = 1.0 + 0.5 * rng.standard_normal(1000)
        y = 3.0 * x - 2.0

        def prior_y(q):
            return std_normal_logpdf((np.asarray(q) + 2.0) / 3.0) - math.log(3.0)

        got_x = marginal_utility(x, std_normal_logpdf)
        got_y = marginal_utility(y, prior_y)
        assert got_y == pytest.approx(got_x, abs=1e-6)

    def test_log_reparameterization_estimates_same_divergence(self):
        # same information whether the parameter is reported on the log or
        # the natural scale; the kernel estimate only needs enough draws
        rng = np.random.default_rng(13)
        x = 1.0 + 0.5 * rng.standard_normal(20_000)
        y = np.exp(x)

        def prior_y(q):
            q = np.asarray(q)
            return -np.log(q) - 0.5 * (_LOG_2PI + np.log(q) ** 2)

        want = math.log(2.0) + (0.25 + 1.0) / 2.0 - 0.5
        assert marginal_utility(y, prior_y) == pytest.approx(want, rel=0.05)

    def test_prior_without_support_on_draws_rejected(self):
        rng = np.random.default_rng(16)
        draws = rng.standard_normal(200)

        def unit_box(q):
            q = np.asarray(q)
            return np.where((q > 0.0) & (q < 1.0), 0.0, -np.inf)

        with pytest.raises(ValueError, match="vanishes"):
            marginal_utility(draws, unit_box)

    def test_scalar_prior_return_rejected(self):
        rng = np.random.default_rng(17)
        with pytest.raises(ValueError, match="one density per draw"):
            marginal_utility(rng.standard_normal(200), lambda q: 0.0)


# ----------------------------------------------------- expected_utility fakes
#
# The rollout machinery is tested against a stand-in fitter whose posterior
# is the analytic conjugate one, so every downstream number has a known
# target without running the ODE model.  Module scope keeps them picklable
# for the process-pool path.


class _ConjugateModel:
    global_names = ["mu_hsc"]

    def __init__(self):
        self.priors = {"mu_hsc": ScalarPrior(m=0.0, s=1.0)}

    def log_likelihood_many(self, V):
        return conjugate_loglik(V)

    def log_prior_many(self, V):
        return conjugate_logprior(V)

    def log_posterior(self, v):
        return float(conjugate_loglik(v)[0] + conjugate_logprior(v)[0])


class _FakeFit:
    def __init__(self, model, samples, flagged=()):
        self.model = model
        self.samples = samples
        self.flagged = tuple(flagged)


class _ConjugateFitter:
    """fit_dataset stand-in: exact draws from the conjugate posterior."""

    def __call__(self, dataset, priors, settings, seed=0):
        model = _ConjugateModel()
        rng = np.random.default_rng(seed)
        draws = 0.5 + math.sqrt(0.5) * rng.standard_normal((2, 400, 1))
        flat = draws.reshape(-1, 1)
        lp = (model.log_likelihood_many(flat) + model.log_prior_many(flat)).reshape(2, 400)
        samples = PosteriorSamples(
            draws=draws,
            log_posts=lp,
            divergent=np.zeros((2, 400), dtype=bool),
            accept_stat=np.ones((2, 400)),
            step_size=np.full(2, 0.5),
            param_names=("mu_hsc",),
        )
        return _FakeFit(model, samples)


class _FlakyFitter(_ConjugateFitter):
    """Fails the first call, returns an unmixed fit on the second."""

    def __init__(self):
        self.calls = 0

    def __call__(self, dataset, priors, settings, seed=0):
        self.calls += 1
        if self.calls == 1:
            raise SamplerError("synthetic breakdown")
        fit = super().__call__(dataset, priors, settings, seed=seed)
        if self.calls == 2:
            return _FakeFit(fit.model, fit.samples, flagged=("mu_hsc",))
        return fit


class _AlwaysFailingFitter:
    def __call__(self, dataset, priors, settings, seed=0):
        raise SamplerError("synthetic breakdown")


_TINY_DESIGN = Design(days=(0.0, 2.0), replicates=(2, 2))


class TestExpectedUtility:
    def test_aggregates_conjugate_replicates(self):
        priors = prior_profile("synthetic")
        result = expected_utility(
            _TINY_DESIGN, priors, 4, seed=21, fit_fn=_ConjugateFitter()
        )
        assert result.n_requested == 4
        assert result.n_excluded == 0
        assert not result.unusable
        assert len(result.estimates) == 4
        assert result.joint_mean == pytest.approx(CONJUGATE_KL, abs=0.05)
        assert result.joint_se > 0.0
        # one parameter, so the kernel marginal estimates the same quantity
        # as the bridge-based joint, by an independent route
        assert result.per_param_mean["mu_hsc"] == pytest.approx(
            result.joint_mean, abs=0.06
        )
        for est in result.estimates:
            assert est.n_draws == 800
            assert est.evidence_error > 0.0

    def test_failures_are_excluded_with_reasons(self):
        priors = prior_profile("synthetic")
        result = expected_utility(
            _TINY_DESIGN, priors, 4, seed=22, fit_fn=_FlakyFitter()
        )
        assert result.n_excluded == 2
        assert result.n_retained == 2
        assert len(result.estimates) == 2
        assert any(r.startswith("sampler:") for r in result.exclusions)
        assert any(r.startswith("diagnostics:") for r in result.exclusions)
        assert not result.unusable  # exactly half retained
        assert math.isfinite(result.joint_mean)

    def test_majority_failure_marks_design_unusable(self):
        priors = prior_profile("synthetic")
        result = expected_utility(
            _TINY_DESIGN, priors, 3, seed=23, fit_fn=_AlwaysFailingFitter()
        )
        assert result.n_excluded == 3
        assert result.unusable
        assert math.isnan(result.joint_mean)
        assert result.per_param_mean == {}

    def test_single_retained_replicate_has_nan_se(self):
        # flaky fitter: first call fails, second is flagged, third succeeds
        priors = prior_profile("synthetic")
        result = expected_utility(
            _TINY_DESIGN, priors, 3, seed=24, fit_fn=_FlakyFitter()
        )
        assert result.n_retained == 1
        assert math.isfinite(result.joint_mean)
        assert math.isnan(result.joint_se)

    def test_se_shrinks_with_more_datasets(self):
        priors = prior_profile("synthetic")
        small = expected_utility(_TINY_DESIGN, priors, 4, seed=28, fit_fn=_ConjugateFitter())
        large = expected_utility(_TINY_DESIGN, priors, 16, seed=28, fit_fn=_ConjugateFitter())
        assert large.joint_se < small.joint_se

    def test_estimates_carry_bandwidths_and_diagnostics(self):
        priors = prior_profile("synthetic")
        result = expected_utility(
            _TINY_DESIGN, priors, 2, seed=29, fit_fn=_ConjugateFitter()
        )
        for est in result.estimates:
            assert est.diagnostics_ok
            assert set(est.bandwidths) == {"mu_hsc"}
            assert est.bandwidths["mu_hsc"] > 0.0

    def test_deterministic_in_seed(self):
        priors = prior_profile("synthetic")
        a = expected_utility(_TINY_DESIGN, priors, 3, seed=25, fit_fn=_ConjugateFitter())
        b = expected_utility(_TINY_DESIGN, priors, 3, seed=25, fit_fn=_ConjugateFitter())
        c = expected_utility(_TINY_DESIGN, priors, 3, seed=26, fit_fn=_ConjugateFitter())
        assert a.joint_mean == b.joint_mean
        assert a.per_param_mean == b.per_param_mean
        assert a.joint_mean != c.joint_mean

    def test_worker_count_does_not_change_the_result(self):
        priors = prior_profile("synthetic")
        serial = expected_utility(
            _TINY_DESIGN, priors, 3, seed=27, fit_fn=_ConjugateFitter()
        )
        pooled = expected_utility(
            _TINY_DESIGN, priors, 3, seed=27, workers=2, fit_fn=_ConjugateFitter()
        )
        assert pooled.joint_mean == serial.joint_mean
        assert pooled.per_param_mean == serial.per_param_mean

    def test_single_dataset_request_rejected(self):
        priors = prior_profile("synthetic")
        with pytest.raises(ValueError, match="at least 2"):
            expected_utility(_TINY_DESIGN, priors, 1, fit_fn=_ConjugateFitter())
