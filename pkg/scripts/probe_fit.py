"""Instrumented short chain: evals/iter and time per warmup block."""

import time

import numpy as np

from hemodesign.model import (
    Design,
    HierarchicalModel,
    sample_truth,
    simulate_dataset,
)
from hemodesign.priors import prior_profile
from hemodesign import sampler as S

priors = prior_profile("synthetic")
rng = np.random.default_rng(99)
truth = sample_truth(priors, rng)
design = Design(days=(0, 1, 2, 3, 4, 5, 6), replicates=(7,) * 7)
dataset = simulate_dataset(truth, design, seed=1234)
model = HierarchicalModel(dataset, priors, ode_rtol=1e-6, ode_atol=1e-6)

calls = {"n": 0, "t": 0.0, "slow": 0}


def counted(v):
    t0 = time.perf_counter()
    out = model.log_posterior_with_grad(v)
    dt = time.perf_counter() - t0
    calls["n"] += 1
    calls["t"] += dt
    if dt > 0.05:
        calls["slow"] += 1
    return out


counted(model.initial_vector(np.random.default_rng(0), jitter=0.1))
calls["n"] = 0
calls["t"] = 0.0

cfg = S.SamplerConfig(chains=2, warmup=150, draws=50, seed=7)
rng_c = np.random.default_rng(12345)

last = [0, time.perf_counter()]
orig = S._nuts_transition


def spy(logp_grad, v, lp, grad, eps, inv_mass, sqrt_mass, rng, max_depth):
    out = orig(logp_grad, v, lp, grad, eps, inv_mass, sqrt_mass, rng, max_depth)
    spy.it += 1
    if spy.it % 25 == 0:
        now = time.perf_counter()
        print(
            f"iter {spy.it:>4}  evals {calls['n']:>7}  "
            f"evals/it {(calls['n'] - last[0]) / 25:6.1f}  "
            f"block {now - last[1]:6.2f}s  eps {eps:.2e}  slow {calls['slow']}"
        )
        last[0] = calls["n"]
        last[1] = now
    return out


spy.it = 0
S._nuts_transition = spy

t0 = time.perf_counter()
d, l, dv, ac, eps = S._nuts_chain(
    counted, model.dim, cfg, rng_c, model.initial_vector,
    init_mass=model.initial_mass(),
)
print(f"total {time.perf_counter() - t0:.1f}s  evals {calls['n']}  "
      f"avg eval {1e3 * calls['t'] / calls['n']:.2f} ms  "
      f"divergent {int(dv.sum())}  final eps {eps:.2e}")
