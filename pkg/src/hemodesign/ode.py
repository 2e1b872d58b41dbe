"""Two-compartment stem / progenitor population dynamics.

The state is x = (hsc, mpp), cell counts of the stem compartment and the
downstream progenitor compartment.  Stem divisions happen at rate eta1; a
division self-renews with probability p0 / (1 + gamma1 * mpp) and otherwise
differentiates into two progenitors.  Progenitors are cleared at rate
eta2 / (1 + gamma2 * hsc).  Both regulation terms are optional: zero gains
give linear dynamics with known closed form.

    hsc' = (2 * p0r - 1) * eta1 * hsc
    mpp' = 2 * (1 - p0r) * eta1 * hsc - eta2r * mpp

with p0r = p0 / (1 + gamma1 * mpp) and eta2r = eta2 / (1 + gamma2 * hsc).

``solve_with_sensitivities`` integrates the forward sensitivity system
alongside the state: d/dt S = J S + dF/dtheta with S(0) = 0 for the five
rate parameters, and optionally d/dt P = J P with P(0) = I for the initial
conditions (needed for gradients with respect to latent initial states).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _rk45

__all__ = [
    "OdeParams",
    "Trajectory",
    "IntegrationError",
    "rhs",
    "steady_state",
    "solve",
    "solve_with_sensitivities",
    "solve_stacked",
]

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-8
STEP_FLOOR = 1e-12
MAX_STEPS = 100_000

PARAM_ORDER = ("p0", "eta1", "eta2", "gamma1", "gamma2")


class IntegrationError(RuntimeError):
    """Integration could not reach the requested time.

    ``t_reached`` holds the last time the integrator advanced to before
    giving up (step underflow or step budget exhausted).
    """

    def __init__(self, message: str, t_reached: float):
        super().__init__(f"{message} (reached t={t_reached:.6g})")
        self.t_reached = t_reached


@dataclass(frozen=True)
class OdeParams:
    """Rate parameters of the two-compartment model.

    Gains are on whatever scale the right-hand side consumes; callers
    working with population-scale gain tables apply ``with_gain_scale``
    before solving.
    """

    p0: float
    eta1: float
    eta2: float
    gamma1: float
    gamma2: float

    def validate(self) -> None:
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite ODE parameter")
        if not 0.5 < self.p0 < 1.0:
            raise ValueError(f"p0 must lie in (1/2, 1), got {self.p0}")
        if self.eta1 <= 0 or self.eta2 <= 0:
            raise ValueError("rates eta1, eta2 must be positive")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gains must be non-negative")

    def with_gain_scale(self, scale: float) -> "OdeParams":
        return replace(self, gamma1=self.gamma1 * scale, gamma2=self.gamma2 * scale)

    def as_array(self) -> np.ndarray:
        return np.array([self.p0, self.eta1, self.eta2, self.gamma1, self.gamma2])


@dataclass(frozen=True)
class Trajectory:
    """Solution snapshots at the requested times.

    states has shape (n_times, 2); sensitivities, when present, has shape
    (n_times, 2, 5) ordered like ``PARAM_ORDER``; ic_sensitivities, when
    present, has shape (n_times, 2, 2) with entry [i, a, b] =
    d state_a(t_i) / d initial_b.
    """

    times: np.ndarray
    states: np.ndarray
    sensitivities: np.ndarray | None = None
    ic_sensitivities: np.ndarray | None = None


def rhs(params: OdeParams, state) -> np.ndarray:
    """Time derivative of (hsc, mpp); accepts any (..., 2) array."""
    x = np.asarray(state, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError("state must have 2 components")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state")
    h, m = x[..., 0], x[..., 1]
    p0r = params.p0 / (1.0 + params.gamma1 * m)
    e2r = params.eta2 / (1.0 + params.gamma2 * h)
    dh = (2.0 * p0r - 1.0) * params.eta1 * h
    dm = 2.0 * (1.0 - p0r) * params.eta1 * h - e2r * m
    return np.stack([dh, dm], axis=-1)


def steady_state(params: OdeParams) -> np.ndarray:
    """Positive equilibrium of the regulated system.

    Requires gamma1 > 0 (the progenitor feedback pins the stem compartment
    at half self-renewal) and p0 > 1/2.  gamma2 may be zero.
    """
    params.validate()
    if params.gamma1 <= 0:
        raise ValueError("steady state requires gamma1 > 0")
    m_star = (2.0 * params.p0 - 1.0) / params.gamma1
    if params.gamma2 == 0.0:
        h_star = params.eta2 * m_star / params.eta1
    else:
        disc = params.eta1**2 + 4.0 * params.gamma2 * params.eta1 * params.eta2 * m_star
        h_star = (-params.eta1 + np.sqrt(disc)) / (2.0 * params.gamma2 * params.eta1)
    return np.array([h_star, m_star])


def _check_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 1:
        raise ValueError("times must be a non-empty 1-D array")
    if not np.all(np.isfinite(t)):
        raise ValueError("non-finite times")
    if t.size > 1 and not np.all(np.diff(t) > 0):
        raise ValueError("times must be strictly increasing")
    return t


def solve_stacked(
    params: np.ndarray,
    initials: np.ndarray,
    times,
    kind: int = 0,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    max_steps: int = MAX_STEPS,
) -> np.ndarray:
    """Integrate many copies of the dynamics in one adaptive-step loop.

    params: (n_sys, 5) rows (p0, eta1, eta2, gamma1, gamma2).
    initials: (n_sys, 2) starting states at times[0].
    Returns an array of shape (n_times, n_sys, nstate) where nstate depends
    on ``kind`` (see _rk45); for kind >= 1 the sensitivity blocks start at
    zero (and the IC block at the identity for kind 2).
    """
    t = _check_times(times)
    p = np.ascontiguousarray(params, dtype=float)
    x0 = np.asarray(initials, dtype=float)
    if p.ndim != 2 or p.shape[1] != 5:
        raise ValueError("params must have shape (n_sys, 5)")
    n_sys = p.shape[0]
    if x0.shape != (n_sys, 2):
        raise ValueError("initials must have shape (n_sys, 2)")
    if not np.all(np.isfinite(p)) or not np.all(np.isfinite(x0)):
        raise ValueError("non-finite parameters or initial state")

    nstate = _rk45.NSTATE_BY_KIND[kind]
    y0 = np.zeros((n_sys, nstate))
    y0[:, :2] = x0
    if kind == 2:
        y0[:, 12] = 1.0
        y0[:, 15] = 1.0

    out = np.empty((t.size, n_sys * nstate))
    status, t_reached, _ = _rk45.dp45(
        kind, p, y0.ravel(), t, rtol, atol, STEP_FLOOR, max_steps, out
    )
    if status == _rk45.STATUS_BAD_INPUT:
        raise ValueError("non-finite values entering the integrator")
    if status == _rk45.STATUS_STEP_UNDERFLOW:
        raise IntegrationError("step size underflow", t_reached)
    if status == _rk45.STATUS_MAX_STEPS:
        raise IntegrationError(f"exceeded {max_steps} steps", t_reached)
    return out.reshape(t.size, n_sys, nstate)


def solve(
    params: OdeParams,
    initial,
    times,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> Trajectory:
    """Integrate the dynamics from ``initial`` at times[0] across ``times``."""
    t = _check_times(times)
    x0 = np.asarray(initial, dtype=float).reshape(1, 2)
    raw = solve_stacked(params.as_array()[None, :], x0, t, kind=0, rtol=rtol, atol=atol)
    return Trajectory(times=t, states=raw[:, 0, :])


def solve_with_sensitivities(
    params: OdeParams,
    initial,
    times,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    with_ic_sensitivities: bool = False,
) -> Trajectory:
    """Like ``solve`` but also integrating the forward sensitivity system."""
    t = _check_times(times)
    x0 = np.asarray(initial, dtype=float).reshape(1, 2)
    kind = 2 if with_ic_sensitivities else 1
    raw = solve_stacked(params.as_array()[None, :], x0, t, kind=kind, rtol=rtol, atol=atol)
    states = raw[:, 0, :2]
    sens = raw[:, 0, 2:12].reshape(t.size, 2, 5)
    ic_sens = raw[:, 0, 12:16].reshape(t.size, 2, 2) if with_ic_sensitivities else None
    return Trajectory(times=t, states=states, sensitivities=sens, ic_sensitivities=ic_sens)
