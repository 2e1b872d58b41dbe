"""Condition number of the standardized posterior Hessian at the mode."""

import numpy as np
from scipy.optimize import minimize

from hemodesign.model import Design, HierarchicalModel, sample_truth, simulate_dataset
from hemodesign.priors import prior_profile

priors = prior_profile("synthetic")
rng = np.random.default_rng(99)
truth = sample_truth(priors, rng)
design = Design(days=(0, 1, 2, 3, 4, 5, 6), replicates=(7,) * 7)
dataset = simulate_dataset(truth, design, seed=1234)
model = HierarchicalModel(dataset, priors, ode_rtol=1e-8, ode_atol=1e-8)


def negv(v):
    lp, g = model.log_posterior_with_grad(v)
    return -lp, -g


v0 = model.initial_vector(np.random.default_rng(0), jitter=0.0)
res = minimize(negv, v0, jac=True, method="L-BFGS-B",
               options={"maxiter": 2000, "ftol": 1e-14, "gtol": 1e-10})
print(f"mode found: lp={-res.fun:.2f}  |g|={np.abs(res.jac).max():.2e}  nit={res.nit}")
vm = res.x

h = 1e-5
dim = model.dim
H = np.zeros((dim, dim))
for i in range(dim):
    e = np.zeros(dim)
    e[i] = h
    _, gp = model.log_posterior_with_grad(vm + e)
    _, gm = model.log_posterior_with_grad(vm - e)
    H[i] = -(gp - gm) / (2 * h)
H = 0.5 * (H + H.T)

names = model.param_names()
sd = np.sqrt(np.diag(np.linalg.inv(H)))
print("\nmarginal posterior sd (mode curvature):")
for i in range(model.n_global):
    print(f"  {names[i]:<12} {sd[i]:.5f}")
print(f"  latent z sd range: {sd[model.n_global:].min():.3f}..{sd[model.n_global:].max():.3f}")

# diagonal-standardized Hessian: what NUTS sees with a perfect diagonal metric
D = 1.0 / sd
C = H / np.outer(D, D)
ev = np.linalg.eigvalsh(C)
print(f"\nstandardized eigenvalues: min {ev.min():.4f}  max {ev.max():.4f}")
print(f"condition number with ideal diagonal metric: {ev.max() / ev.min():.1f}")
print(f"(unit metric condition: {np.linalg.eigvalsh(H).max() / np.linalg.eigvalsh(H).min():.0f})")
