"""Wall-clock benchmark for a single dense-design hierarchical fit."""

import time

import numpy as np

from hemodesign.model import (
    Design,
    HierarchicalModel,
    sample_truth,
    simulate_dataset,
)
from hemodesign.priors import prior_profile
from hemodesign.sampler import SamplerConfig, diagnostics, sample_posterior

priors = prior_profile("synthetic")
import sys
if "--prior-draw" in sys.argv:
    rng = np.random.default_rng(99)
    truth = sample_truth(priors, rng)
else:
    from hemodesign.ode import OdeParams
    from hemodesign.model import HierarchicalParams
    truth = HierarchicalParams(
        theta=OdeParams(0.53, 9.02, 8.37, 1.97, 4.03),
        mu=np.array([[653.0, 1970.0]]),
        sigma_b=0.04, sigma_t=0.04, u=np.zeros((0, 2)),
    )
design = Design(days=(0, 1, 2, 3, 4, 5, 6), replicates=(7,) * 7)
dataset = simulate_dataset(truth, design, seed=1234)
model = HierarchicalModel(dataset, priors, ode_rtol=1e-6, ode_atol=1e-6)
print(f"dim = {model.dim}, mice = {design.n_mice}")

# warm the jit before timing
v0 = model.initial_vector(np.random.default_rng(0), jitter=0.1)
model.log_posterior_with_grad(v0)

t0 = time.perf_counter()
mode, cov = model.laplace_approximation()
t_laplace = time.perf_counter() - t0
print(f"laplace        {t_laplace:.1f} s")
chol = np.linalg.cholesky(cov)


def start_near_mode(rng):
    return mode + 0.5 * (chol @ rng.standard_normal(model.dim))


calls = {"n": 0}


def counted(v):
    calls["n"] += 1
    return model.log_posterior_with_grad(v)


cfg = SamplerConfig(chains=2, warmup=400, draws=400, seed=7, metric="dense")
t0 = time.perf_counter()
samples = sample_posterior(
    counted,
    model.dim,
    cfg,
    init_fn=start_near_mode,
    param_names=model.param_names(),
    init_mass=cov,
)
elapsed = time.perf_counter() - t0
print(f"evals          {calls['n']} ({calls['n'] / 1600:.1f}/iter)")

diag = diagnostics(samples)
print(f"fit time       {elapsed:.1f} s")
print(f"divergent      {diag['n_divergent']}")
print(f"step size      {samples.step_size}")
per = diag["per_param"]
worst = max(per.items(), key=lambda kv: kv[1]["rhat"])
smallest = min(per.items(), key=lambda kv: kv[1]["ess"])
print(f"worst rhat     {worst[1]['rhat']:.4f} ({worst[0]})")
print(f"min ess        {smallest[1]['ess']:.0f} ({smallest[0]})")
print(f"flagged        {diag['flagged']}")

draws = model.constrained_draws(samples.combined())
names = [
    "p0", "eta1", "eta2", "gamma1", "gamma2",
    "sigma_t", "sigma_b", "mu_hsc", "mu_mpp",
]
tru = {
    "p0": truth.theta.p0, "eta1": truth.theta.eta1, "eta2": truth.theta.eta2,
    "gamma1": truth.theta.gamma1, "gamma2": truth.theta.gamma2,
    "sigma_t": truth.sigma_t, "sigma_b": truth.sigma_b,
    "mu_hsc": truth.mu[0, 0], "mu_mpp": truth.mu[0, 1],
}
print(f"{'param':<9}{'truth':>9}{'median':>9}{'q2.5':>9}{'q97.5':>9}  cover")
for name in names:
    col = draws[name]
    lo, med, hi = np.percentile(col, [2.5, 50, 97.5])
    inside = "yes" if lo <= tru[name] <= hi else "NO"
    print(f"{name:<9}{tru[name]:>9.3f}{med:>9.3f}{lo:>9.3f}{hi:>9.3f}  {inside}")
print(f"integration failures: {model.n_integration_failures}")
