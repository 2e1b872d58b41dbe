"""Gradient-based MCMC for unconstrained log-densities.

The workhorse is dynamic-trajectory HMC with multinomial sampling along the
trajectory and a no-U-turn stopping rule, dual-averaging step-size
adaptation, and a windowed mass matrix (diagonal or dense).  An adaptive
random-walk Metropolis fallback is available for gradient-free debugging.

Convergence reporting implements split rank-normalized R-hat and bulk
effective sample size; both operate on the raw draw array and need at
least two chains.

Chains run sequentially with RNG streams spawned from the root seed, so a
given (seed, config) pair always reproduces the same draws bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtri

__all__ = [
    "SamplerConfig",
    "PosteriorSamples",
    "SamplerError",
    "sample_posterior",
    "leapfrog",
    "split_rhat",
    "bulk_ess",
    "diagnostics",
]

_DIVERGENCE_DELTA = 1000.0
_MAX_INIT_ATTEMPTS = 100


class SamplerError(RuntimeError):
    """Sampling failed; .samples carries whatever was drawn for post-mortem."""

    def __init__(self, message, samples=None):
        super().__init__(message)
        self.samples = samples


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    target_accept: float = 0.9
    max_tree_depth: int = 10
    seed: int = 0
    algorithm: str = "nuts"  # or "rwm"
    init_jitter: float = 2.0
    # "dense" adapts the full covariance; worth it when the target has strong
    # cross-correlations a diagonal metric cannot absorb
    metric: str = "diag"
    # before the first mass-matrix update the metric can be badly scaled and
    # every tree maxes out; capping depth there bounds the cost of that phase
    early_tree_depth: int = 6

    def __post_init__(self):
        if self.chains < 2:
            raise ValueError("at least 2 chains are required for diagnostics")
        if self.warmup <= 0 or self.draws <= 0:
            raise ValueError("warmup and draws must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.algorithm not in ("nuts", "rwm"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.metric not in ("diag", "dense"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.max_tree_depth < 1 or self.early_tree_depth < 1:
            raise ValueError("tree depths must be positive")


@dataclass
class PosteriorSamples:
    """Per-chain draw array plus the bookkeeping diagnostics need."""

    draws: np.ndarray  # (chains, n_draws, dim)
    log_posts: np.ndarray  # (chains, n_draws)
    divergent: np.ndarray  # (chains, n_draws) bool
    accept_stat: np.ndarray  # (chains, n_draws)
    step_size: np.ndarray  # (chains,)
    param_names: tuple
    _constrained: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if np.isnan(self.draws).any():
            raise ValueError("NaN draws in PosteriorSamples")
        if len(self.param_names) != self.draws.shape[2]:
            raise ValueError("param_names length does not match draw dimension")

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    @property
    def dim(self) -> int:
        return self.draws.shape[2]

    @property
    def n_divergent(self) -> int:
        return int(self.divergent.sum())

    def combined(self) -> np.ndarray:
        """All chains concatenated: (chains * n_draws, dim)."""
        return self.draws.reshape(-1, self.dim)

    def combined_log_posts(self) -> np.ndarray:
        return self.log_posts.reshape(-1)

    def constrained(self, constrain) -> dict:
        """Constrained-scale columns via the supplied mapping, cached."""
        if self._constrained is None:
            self._constrained = constrain(self.combined())
        return self._constrained


# ------------------------------------------------------------------ leapfrog


def _velocity(inv_mass, p):
    # inv_mass is either a variance vector (diag metric) or a covariance
    # matrix (dense metric); both are the inverse of the mass matrix
    if inv_mass.ndim == 2:
        return inv_mass @ p
    return inv_mass * p


def leapfrog(logp_grad, v, p, grad, eps, inv_mass, n_steps=1):
    """Velocity-Verlet steps; returns (v, p, logp, grad) after n_steps."""
    lp = None
    for _ in range(n_steps):
        p = p + 0.5 * eps * grad
        v = v + eps * _velocity(inv_mass, p)
        lp, grad = logp_grad(v)
        p = p + 0.5 * eps * grad
    return v, p, lp, grad


def _kinetic(p, inv_mass) -> float:
    return 0.5 * float(np.dot(p, _velocity(inv_mass, p)))


def _momentum_drawer(inv_mass):
    """Sampler for p ~ N(0, mass) given the inverse mass (variances/cov)."""
    if inv_mass.ndim == 2:
        chol = np.linalg.cholesky(inv_mass)

        def draw(rng):
            xi = rng.standard_normal(chol.shape[0])
            return solve_triangular(chol, xi, trans="T", lower=True)

        return draw
    scale = 1.0 / np.sqrt(inv_mass)
    return lambda rng: scale * rng.standard_normal(scale.shape[0])


def _find_initial_step(logp_grad, v, lp, grad, inv_mass, draw_p, rng) -> float:
    """Crude bracketing of a step size whose accept ratio straddles 1/2."""
    eps = 1.0
    p = draw_p(rng)
    h0 = -lp + _kinetic(p, inv_mass)

    def log_ratio(eps):
        v1, p1, lp1, _ = leapfrog(logp_grad, v, p, grad, eps, inv_mass)
        if not np.isfinite(lp1):
            return -np.inf
        return h0 - (-lp1 + _kinetic(p1, inv_mass))

    direction = 1.0 if log_ratio(eps) > math.log(0.5) else -1.0
    for _ in range(100):
        if direction * log_ratio(eps) <= -direction * math.log(2.0):
            break
        eps *= 2.0**direction
        if not 1e-10 < eps < 1e7:
            break
    return eps


# ------------------------------------------------------------------- windows


def _adapt_windows(warmup: int):
    """Start/end indices of the mass-adaptation windows within warmup.

    Long warmups follow the 75 / doubling-from-25 / 50 layout; short ones
    shrink the buffers proportionally so every phase still exists.
    """
    if warmup >= 150:
        init_buf, term_buf, base = 75, 50, 25
    else:
        init_buf = max(1, int(0.15 * warmup))
        term_buf = max(1, int(0.10 * warmup))
        base = max(1, warmup - init_buf - term_buf)
    windows = []
    start = init_buf
    size = base
    while start + size < warmup - term_buf:
        windows.append((start, start + size))
        start += size
        size *= 2
    windows.append((start, warmup - term_buf))
    return windows


class _Welford:
    """Running variance estimate; `dense` tracks the full covariance."""

    def __init__(self, dim, dense=False):
        self.n = 0
        self.dense = dense
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim)) if dense else np.zeros(dim)

    def update(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        if self.dense:
            self.m2 += np.outer(delta, x - self.mean)
        else:
            self.m2 += delta * (x - self.mean)

    def regularized(self):
        """Shrunk estimate of the posterior (co)variance.

        Shrinking toward the estimate's own diagonal keeps the result
        positive definite when the window holds fewer draws than there are
        dimensions; the small additive floor guards near-constant
        coordinates early in warmup.
        """
        est = self.m2 / max(self.n - 1, 1)
        w = self.n / (self.n + 5.0)
        if self.dense:
            target = np.diag(np.diag(est) + 1e-3)
            return w * est + (1.0 - w) * target
        return w * est + (1.0 - w) * (est + 1e-3)


class _DualAveraging:
    def __init__(self, eps0, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.m = 0
        self.h_bar = 0.0
        self.log_eps_bar = 0.0

    def update(self, accept_prob) -> float:
        self.m += 1
        frac = 1.0 / (self.m + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        log_eps = self.mu - math.sqrt(self.m) / self.gamma * self.h_bar
        w = self.m**-self.kappa
        self.log_eps_bar = w * log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(log_eps)

    def finalized(self) -> float:
        return math.exp(self.log_eps_bar)


# ---------------------------------------------------------------------- NUTS


class _Tree:
    __slots__ = (
        "v_minus", "p_minus", "g_minus", "v_plus", "p_plus", "g_plus",
        "v_prop", "lp_prop", "g_prop", "log_w", "rho",
        "stop", "n_div", "alpha_sum", "n_alpha",
    )


def _uturn(rho, p_minus, p_plus, inv_mass) -> bool:
    return (
        np.dot(rho, _velocity(inv_mass, p_minus)) <= 0.0
        or np.dot(rho, _velocity(inv_mass, p_plus)) <= 0.0
    )


def _build_tree(logp_grad, v, p, g, direction, depth, eps, inv_mass, h0, rng):
    if depth == 0:
        v1, p1, lp1, g1 = leapfrog(logp_grad, v, p, g, direction * eps, inv_mass)
        t = _Tree()
        if np.isfinite(lp1) and np.all(np.isfinite(g1)):
            h1 = -lp1 + _kinetic(p1, inv_mass)
        else:
            h1 = np.inf
            lp1 = -np.inf
            g1 = np.zeros_like(g)
            v1 = np.asarray(v1)
        delta = h1 - h0
        divergent = not np.isfinite(h1) or delta > _DIVERGENCE_DELTA
        t.v_minus = t.v_plus = t.v_prop = v1
        t.p_minus = t.p_plus = p1
        t.g_minus = t.g_plus = t.g_prop = g1
        t.lp_prop = lp1
        t.log_w = -delta if not divergent else -np.inf
        t.rho = p1.copy()
        t.stop = divergent
        t.n_div = int(divergent)
        t.alpha_sum = math.exp(min(0.0, -delta)) if np.isfinite(delta) else 0.0
        t.n_alpha = 1
        return t

    first = _build_tree(logp_grad, v, p, g, direction, depth - 1, eps, inv_mass, h0, rng)
    if first.stop:
        return first
    if direction > 0:
        second = _build_tree(
            logp_grad, first.v_plus, first.p_plus, first.g_plus,
            direction, depth - 1, eps, inv_mass, h0, rng,
        )
    else:
        second = _build_tree(
            logp_grad, first.v_minus, first.p_minus, first.g_minus,
            direction, depth - 1, eps, inv_mass, h0, rng,
        )
    t = _Tree()
    if direction > 0:
        t.v_minus, t.p_minus, t.g_minus = first.v_minus, first.p_minus, first.g_minus
        t.v_plus, t.p_plus, t.g_plus = second.v_plus, second.p_plus, second.g_plus
    else:
        t.v_minus, t.p_minus, t.g_minus = second.v_minus, second.p_minus, second.g_minus
        t.v_plus, t.p_plus, t.g_plus = first.v_plus, first.p_plus, first.g_plus
    total = np.logaddexp(first.log_w, second.log_w)
    if second.log_w > -np.inf and math.log(rng.random() + 1e-300) < second.log_w - total:
        t.v_prop, t.lp_prop, t.g_prop = second.v_prop, second.lp_prop, second.g_prop
    else:
        t.v_prop, t.lp_prop, t.g_prop = first.v_prop, first.lp_prop, first.g_prop
    t.log_w = total
    t.rho = first.rho + second.rho
    t.n_div = first.n_div + second.n_div
    t.alpha_sum = first.alpha_sum + second.alpha_sum
    t.n_alpha = first.n_alpha + second.n_alpha
    t.stop = second.stop or _uturn(t.rho, t.p_minus, t.p_plus, inv_mass)
    return t


def _nuts_transition(logp_grad, v, lp, grad, eps, inv_mass, draw_p, max_depth, rng):
    p0 = draw_p(rng)
    h0 = -lp + _kinetic(p0, inv_mass)

    v_minus = v_plus = v
    p_minus = p_plus = p0
    g_minus = g_plus = grad
    v_cur, lp_cur, g_cur = v, lp, grad
    log_w = 0.0
    rho = p0.copy()
    n_div = 0
    alpha_sum = 0.0
    n_alpha = 0

    for depth in range(max_depth):
        direction = 1 if rng.random() < 0.5 else -1
        if direction > 0:
            sub = _build_tree(
                logp_grad, v_plus, p_plus, g_plus, 1, depth, eps,
                inv_mass, h0, rng,
            )
        else:
            sub = _build_tree(
                logp_grad, v_minus, p_minus, g_minus, -1, depth, eps,
                inv_mass, h0, rng,
            )
        n_div += sub.n_div
        alpha_sum += sub.alpha_sum
        n_alpha += sub.n_alpha
        if sub.stop:
            break
        # biased progressive sampling favors the fresh subtree
        if math.log(rng.random() + 1e-300) < sub.log_w - log_w:
            v_cur, lp_cur, g_cur = sub.v_prop, sub.lp_prop, sub.g_prop
        if direction > 0:
            v_plus, p_plus, g_plus = sub.v_plus, sub.p_plus, sub.g_plus
        else:
            v_minus, p_minus, g_minus = sub.v_minus, sub.p_minus, sub.g_minus
        log_w = np.logaddexp(log_w, sub.log_w)
        rho = rho + sub.rho
        if _uturn(rho, p_minus, p_plus, inv_mass):
            break
    alpha = alpha_sum / max(n_alpha, 1)
    return v_cur, lp_cur, g_cur, (n_div > 0), alpha


def _initialize(logp_grad, init_fn, rng):
    for _ in range(_MAX_INIT_ATTEMPTS):
        v = np.asarray(init_fn(rng), dtype=float)
        lp, grad = logp_grad(v)
        if np.isfinite(lp) and np.all(np.isfinite(grad)):
            return v, lp, grad
    raise SamplerError(
        f"no finite starting point after {_MAX_INIT_ATTEMPTS} jitter attempts"
    )


def _check_init_mass(init_mass, dim, dense):
    """Validate a caller-supplied metric seed and coerce it to the layout."""
    m = np.asarray(init_mass, dtype=float)
    if m.ndim == 1:
        if m.shape != (dim,) or np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise ValueError("init_mass vector must be positive variances of length dim")
        return np.diag(m) if dense else m
    if m.shape != (dim, dim) or not np.all(np.isfinite(m)):
        raise ValueError("init_mass matrix must be a finite (dim, dim) covariance")
    if not dense:
        return np.diag(m).copy()
    m = 0.5 * (m + m.T)
    if np.linalg.eigvalsh(m)[0] <= 0:
        raise ValueError("init_mass matrix must be positive definite")
    return m


def _nuts_chain(logp_grad, dim, cfg, rng, init_fn, init_mass=None):
    v, lp, grad = _initialize(logp_grad, init_fn, rng)
    dense = cfg.metric == "dense"
    if init_mass is None:
        inv_mass = np.eye(dim) if dense else np.ones(dim)
    else:
        inv_mass = _check_init_mass(init_mass, dim, dense)
    draw_p = _momentum_drawer(inv_mass)

    eps = _find_initial_step(logp_grad, v, lp, grad, inv_mass, draw_p, rng)
    da = _DualAveraging(eps, cfg.target_accept)
    windows = _adapt_windows(cfg.warmup)
    window_idx = 0
    welford = _Welford(dim, dense=dense)

    draws = np.empty((cfg.draws, dim))
    log_posts = np.empty(cfg.draws)
    divergent = np.zeros(cfg.draws, dtype=bool)
    accept_stat = np.empty(cfg.draws)

    for it in range(cfg.warmup + cfg.draws):
        depth_cap = (
            min(cfg.early_tree_depth, cfg.max_tree_depth)
            if window_idx == 0 and it < cfg.warmup
            else cfg.max_tree_depth
        )
        v, lp, grad, div, alpha = _nuts_transition(
            logp_grad, v, lp, grad, eps, inv_mass, draw_p, depth_cap, rng
        )
        if it < cfg.warmup:
            eps = da.update(alpha)
            if window_idx < len(windows):
                start, end = windows[window_idx]
                if start <= it < end:
                    welford.update(v)
                if it == end - 1:
                    if welford.n >= 2:
                        inv_mass = welford.regularized()
                        draw_p = _momentum_drawer(inv_mass)
                    welford = _Welford(dim, dense=dense)
                    window_idx += 1
                    eps = da.finalized()
                    da = _DualAveraging(eps, cfg.target_accept)
            if it == cfg.warmup - 1:
                eps = da.finalized()
        else:
            i = it - cfg.warmup
            draws[i] = v
            log_posts[i] = lp
            divergent[i] = div
            accept_stat[i] = alpha
    return draws, log_posts, divergent, accept_stat, eps


def _rwm_chain(logp, dim, cfg, rng, init_fn):
    def wrapped(v):
        return logp(v), np.zeros(dim)

    v, lp, _ = _initialize(wrapped, init_fn, rng)
    var = np.ones(dim)
    log_scale = math.log(2.38 / math.sqrt(dim))
    windows = _adapt_windows(cfg.warmup)
    window_idx = 0
    welford = _Welford(dim)

    draws = np.empty((cfg.draws, dim))
    log_posts = np.empty(cfg.draws)
    accept_stat = np.empty(cfg.draws)

    for it in range(cfg.warmup + cfg.draws):
        prop = v + math.exp(log_scale) * np.sqrt(var) * rng.standard_normal(dim)
        lp_prop = logp(prop)
        alpha = math.exp(min(0.0, lp_prop - lp)) if np.isfinite(lp_prop) else 0.0
        if rng.random() < alpha:
            v, lp = prop, lp_prop
        if it < cfg.warmup:
            log_scale += (alpha - 0.234) / (it + 10.0) ** 0.6
            if window_idx < len(windows):
                start, end = windows[window_idx]
                if start <= it < end:
                    welford.update(v)
                if it == end - 1:
                    if welford.n >= 2:
                        var = welford.regularized()
                    welford = _Welford(dim)
                    window_idx += 1
        else:
            i = it - cfg.warmup
            draws[i] = v
            log_posts[i] = lp
            accept_stat[i] = alpha
    return draws, log_posts, np.zeros(cfg.draws, dtype=bool), accept_stat, math.exp(log_scale)


def sample_posterior(
    logp_grad,
    dim: int,
    config: SamplerConfig,
    *,
    init_fn=None,
    param_names=None,
    logp=None,
    init_mass=None,
) -> PosteriorSamples:
    """Draw posterior samples from an unconstrained density.

    logp_grad(v) must return (log density, gradient).  init_fn(rng) supplies
    starting points (default: uniform jitter around the origin); it is
    retried until the density is finite there.  init_mass seeds the metric
    before adaptation refines it: a variance vector for either metric, or a
    full covariance matrix (its diagonal is used when metric="diag").  The
    rwm fallback uses logp(v) if given, sparing the gradient work.
    """
    if param_names is None:
        param_names = tuple(f"x{i}" for i in range(dim))
    if init_fn is None:
        init_fn = lambda rng: rng.uniform(-config.init_jitter, config.init_jitter, dim)

    root = np.random.SeedSequence(config.seed)
    children = root.spawn(config.chains)

    all_draws, all_lp, all_div, all_acc, eps_list = [], [], [], [], []
    for child in children:
        rng = np.random.default_rng(child)
        if config.algorithm == "nuts":
            d, l, dv, ac, eps = _nuts_chain(
                logp_grad, dim, config, rng, init_fn, init_mass=init_mass
            )
        else:
            value = logp if logp is not None else (lambda v: logp_grad(v)[0])
            d, l, dv, ac, eps = _rwm_chain(value, dim, config, rng, init_fn)
        all_draws.append(d)
        all_lp.append(l)
        all_div.append(dv)
        all_acc.append(ac)
        eps_list.append(eps)

    samples = PosteriorSamples(
        draws=np.stack(all_draws),
        log_posts=np.stack(all_lp),
        divergent=np.stack(all_div),
        accept_stat=np.stack(all_acc),
        step_size=np.array(eps_list),
        param_names=tuple(param_names),
    )
    frac = samples.n_divergent / samples.divergent.size
    if frac > 0.25:
        raise SamplerError(
            f"{samples.n_divergent} of {samples.divergent.size} post-warmup "
            f"transitions diverged ({frac:.0%}); posterior unusable",
            samples=samples,
        )
    return samples


# ------------------------------------------------------------------ R-hat/ESS


def _split_chains(x: np.ndarray) -> np.ndarray:
    chains, n = x.shape
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half :]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    from scipy.stats import rankdata

    ranks = rankdata(x, method="average").reshape(x.shape)
    return ndtri((ranks - 3.0 / 8.0) / (x.size + 0.25))


def _basic_rhat(z: np.ndarray) -> float:
    m, n = z.shape
    if np.all(z == z[:, :1]):  # every chain constant
        return np.inf if np.unique(z[:, 0]).size > 1 else 1.0
    chain_means = z.mean(axis=1)
    within = z.var(axis=1, ddof=1).mean()
    between = n * chain_means.var(ddof=1)
    var_hat = (n - 1) / n * within + between / n
    return float(np.sqrt(var_hat / within))


def split_rhat(x: np.ndarray) -> float:
    """Split rank-normalized R-hat: max of the bulk and folded statistics."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need draws shaped (chains >= 2, n)")
    if x.shape[1] < 4:
        raise ValueError("need at least 4 draws per chain")
    split = _split_chains(x)
    if np.all(split == split.flat[0]):
        return 1.0
    bulk = _basic_rhat(_rank_normalize(split))
    folded = _basic_rhat(_rank_normalize(np.abs(split - np.median(split))))
    return max(bulk, folded)


def _autocov(z: np.ndarray) -> np.ndarray:
    """Biased FFT autocovariance per chain, lags 0..n-1."""
    m, n = z.shape
    centered = z - z.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n].real
    return acov / n


def bulk_ess(x: np.ndarray) -> float:
    """Bulk effective sample size on split rank-normalized chains."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need draws shaped (chains >= 2, n)")
    if x.shape[1] < 8:
        raise ValueError("need at least 8 draws per chain")
    split = _split_chains(x)
    if np.all(split == split.flat[0]):
        return 0.0
    z = _rank_normalize(split)
    m, n = z.shape
    acov = _autocov(z)
    chain_means = z.mean(axis=1)
    mean_var = float(acov[:, 0].mean()) * n / (n - 1)
    var_plus = mean_var * (n - 1) / n + float(np.var(chain_means, ddof=1))
    if var_plus <= 1e-300:
        return 0.0

    rho = np.zeros(n)
    rho[0] = 1.0 - (mean_var - float(acov[:, 0].mean())) / var_plus
    rho[1] = 1.0 - (mean_var - float(acov[:, 1].mean())) / var_plus
    even, odd = rho[0], rho[1]
    t = 1
    while t < n - 3 and (even + odd) > 0.0:
        even = 1.0 - (mean_var - float(acov[:, t + 1].mean())) / var_plus
        odd = 1.0 - (mean_var - float(acov[:, t + 2].mean())) / var_plus
        if even + odd >= 0.0:
            rho[t + 1] = even
            rho[t + 2] = odd
        t += 2
    max_t = t - 2
    if even > 0.0:
        rho[max_t + 1] = even
    # Geyer monotone correction
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    tau = -1.0 + 2.0 * float(np.sum(rho[: max_t + 1])) + float(rho[max_t + 1])
    tau = max(tau, 1.0 / np.log10(m * n + 10.0))
    return float(m * n / tau)


def diagnostics(samples: PosteriorSamples, rhat_threshold: float = 1.05) -> dict:
    """Per-parameter split R-hat and bulk ESS, plus divergence counts."""
    if samples.n_chains < 2:
        raise ValueError("diagnostics require at least 2 chains")
    per_param = {}
    flagged = []
    for j, name in enumerate(samples.param_names):
        x = samples.draws[:, :, j]
        rhat = split_rhat(x)
        ess = bulk_ess(x)
        per_param[name] = {"rhat": rhat, "ess": ess}
        if not np.isfinite(rhat) or rhat > rhat_threshold:
            flagged.append(name)
    return {
        "per_param": per_param,
        "n_divergent": samples.n_divergent,
        "divergence_rate": samples.n_divergent / samples.divergent.size,
        "flagged": flagged,
        "mean_accept": float(samples.accept_stat.mean()),
        "step_size": [float(s) for s in samples.step_size],
    }
