"""Adaptive Dormand-Prince 4(5) kernels for stacked two-compartment systems.

Everything in this module is numba-jitted and operates on flat float64
arrays so that one integrator call can advance many independent copies of
the dynamics (one per animal, or one per posterior draw) in a single
adaptive-step loop.  Three system kinds share the loop:

    kind 0: state per system  [h, m]                            (2 values)
    kind 1: kind 0 + parameter sensitivities d(h,m)/d(theta)    (12 values)
    kind 2: kind 1 + initial-condition sensitivities            (16 values)

theta order for the sensitivity block is (p0, eta1, eta2, gamma1, gamma2)
with the gains on the scale the right-hand side actually uses.

The step controller clips every step so requested output times are hit
exactly; no dense-output interpolation is involved.  Error per step is the
usual RMS of the embedded 4th/5th-order difference against
atol + rtol * max(|y_old|, |y_new|).
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_BAD_INPUT = 1
STATUS_STEP_UNDERFLOW = 2
STATUS_MAX_STEPS = 3

NSTATE_BY_KIND = (2, 12, 16)

# Dormand-Prince coefficients.
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
# 5th-order minus embedded 4th-order weights.
E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)

MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
SAFETY = 0.9


@njit(cache=True)
def _rhs(kind, params, y, out, n_sys, nstate):
    """Right-hand side of the stacked system, written into ``out``."""
    for i in range(n_sys):
        p0 = params[i, 0]
        e1 = params[i, 1]
        e2 = params[i, 2]
        g1 = params[i, 3]
        g2 = params[i, 4]
        base = i * nstate
        h = y[base + 0]
        m = y[base + 1]

        a1 = 1.0 + g1 * m
        a2 = 1.0 + g2 * h
        p0s = p0 / a1
        e2s = e2 / a2

        out[base + 0] = (2.0 * p0s - 1.0) * e1 * h
        out[base + 1] = 2.0 * (1.0 - p0s) * e1 * h - e2s * m

        if kind >= 1:
            jhh = (2.0 * p0s - 1.0) * e1
            jhm = -2.0 * e1 * h * p0 * g1 / (a1 * a1)
            jmh = 2.0 * (1.0 - p0s) * e1 + m * e2 * g2 / (a2 * a2)
            jmm = 2.0 * e1 * h * p0 * g1 / (a1 * a1) - e2s

            fh0 = 2.0 * e1 * h / a1
            fh1 = (2.0 * p0s - 1.0) * h
            fh3 = -2.0 * e1 * h * p0 * m / (a1 * a1)
            fm0 = -2.0 * e1 * h / a1
            fm1 = 2.0 * (1.0 - p0s) * h
            fm2 = -m / a2
            fm3 = 2.0 * e1 * h * p0 * m / (a1 * a1)
            fm4 = e2 * m * h / (a2 * a2)

            for j in range(5):
                sh = y[base + 2 + j]
                sm = y[base + 7 + j]
                if j == 0:
                    fh, fm = fh0, fm0
                elif j == 1:
                    fh, fm = fh1, fm1
                elif j == 2:
                    fh, fm = 0.0, fm2
                elif j == 3:
                    fh, fm = fh3, fm3
                else:
                    fh, fm = 0.0, fm4
                out[base + 2 + j] = jhh * sh + jhm * sm + fh
                out[base + 7 + j] = jmh * sh + jmm * sm + fm

            if kind == 2:
                for j in range(2):
                    ph = y[base + 12 + j]
                    pm = y[base + 14 + j]
                    out[base + 12 + j] = jhh * ph + jhm * pm
                    out[base + 14 + j] = jmh * ph + jmm * pm


@njit(cache=True)
def _error_norm(err, y_old, y_new, rtol, atol, n_total):
    acc = 0.0
    for j in range(n_total):
        ya = abs(y_old[j])
        yb = abs(y_new[j])
        big = ya if ya > yb else yb
        scale = atol + rtol * big
        r = err[j] / scale
        acc += r * r
    return np.sqrt(acc / n_total)


@njit(cache=True)
def _all_finite(a, n):
    for j in range(n):
        if not np.isfinite(a[j]):
            return False
    return True


@njit(cache=True)
def _initial_step(kind, params, y0, f0, t_span, rtol, atol, n_sys, nstate):
    n_total = n_sys * nstate
    d0 = 0.0
    d1 = 0.0
    for j in range(n_total):
        scale = atol + rtol * abs(y0[j])
        r0 = y0[j] / scale
        r1 = f0[j] / scale
        d0 += r0 * r0
        d1 += r1 * r1
    d0 = np.sqrt(d0 / n_total)
    d1 = np.sqrt(d1 / n_total)
    if d0 < 1e-5 or d1 < 1e-5 or not (np.isfinite(d0) and np.isfinite(d1)):
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, t_span)
    if h0 <= 0.0 or not np.isfinite(h0):
        h0 = 1e-6

    y1 = np.empty(n_total)
    f1 = np.empty(n_total)
    for j in range(n_total):
        y1[j] = y0[j] + h0 * f0[j]
    _rhs(kind, params, y1, f1, n_sys, nstate)
    d2 = 0.0
    for j in range(n_total):
        scale = atol + rtol * abs(y0[j])
        r = (f1[j] - f0[j]) / scale
        d2 += r * r
    d2 = np.sqrt(d2 / n_total) / h0

    dm = max(d1, d2)
    if dm <= 1e-15 or not np.isfinite(dm):
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    return min(100.0 * h0, h1, t_span)


@njit(cache=True)
def dp45(kind, params, y0, t_grid, rtol, atol, h_floor, max_steps, out):
    """Advance the stacked system across ``t_grid``, filling ``out``.

    out has shape (len(t_grid), n_sys * nstate); out[0] is set to y0.
    Returns (status, t_reached, n_steps).
    """
    n_sys = params.shape[0]
    nstate = y0.shape[0] // n_sys
    n_total = y0.shape[0]

    for i in range(n_sys):
        for j in range(5):
            if not np.isfinite(params[i, j]):
                return STATUS_BAD_INPUT, t_grid[0], 0
    if not _all_finite(y0, n_total):
        return STATUS_BAD_INPUT, t_grid[0], 0

    y = y0.copy()
    for j in range(n_total):
        out[0, j] = y[j]
    if t_grid.shape[0] == 1:
        return STATUS_OK, t_grid[0], 0

    k1 = np.empty(n_total)
    k2 = np.empty(n_total)
    k3 = np.empty(n_total)
    k4 = np.empty(n_total)
    k5 = np.empty(n_total)
    k6 = np.empty(n_total)
    k7 = np.empty(n_total)
    ytmp = np.empty(n_total)
    ynew = np.empty(n_total)
    err = np.empty(n_total)

    t = t_grid[0]
    _rhs(kind, params, y, k1, n_sys, nstate)
    if not _all_finite(k1, n_total):
        return STATUS_BAD_INPUT, t, 0

    h = _initial_step(kind, params, y, k1, t_grid[-1] - t_grid[0], rtol, atol, n_sys, nstate)
    n_steps = 0

    for idx in range(1, t_grid.shape[0]):
        t_target = t_grid[idx]
        while t < t_target:
            if n_steps >= max_steps:
                return STATUS_MAX_STEPS, t, n_steps
            if h < h_floor:
                return STATUS_STEP_UNDERFLOW, t, n_steps
            clipped = False
            hs = h
            if t + hs >= t_target:
                hs = t_target - t
                clipped = True

            for j in range(n_total):
                ytmp[j] = y[j] + hs * A21 * k1[j]
            _rhs(kind, params, ytmp, k2, n_sys, nstate)
            for j in range(n_total):
                ytmp[j] = y[j] + hs * (A31 * k1[j] + A32 * k2[j])
            _rhs(kind, params, ytmp, k3, n_sys, nstate)
            for j in range(n_total):
                ytmp[j] = y[j] + hs * (A41 * k1[j] + A42 * k2[j] + A43 * k3[j])
            _rhs(kind, params, ytmp, k4, n_sys, nstate)
            for j in range(n_total):
                ytmp[j] = y[j] + hs * (
                    A51 * k1[j] + A52 * k2[j] + A53 * k3[j] + A54 * k4[j]
                )
            _rhs(kind, params, ytmp, k5, n_sys, nstate)
            for j in range(n_total):
                ytmp[j] = y[j] + hs * (
                    A61 * k1[j] + A62 * k2[j] + A63 * k3[j] + A64 * k4[j] + A65 * k5[j]
                )
            _rhs(kind, params, ytmp, k6, n_sys, nstate)
            for j in range(n_total):
                ynew[j] = y[j] + hs * (
                    B1 * k1[j] + B3 * k3[j] + B4 * k4[j] + B5 * k5[j] + B6 * k6[j]
                )
            _rhs(kind, params, ynew, k7, n_sys, nstate)
            n_steps += 1

            ok = _all_finite(ynew, n_total) and _all_finite(k7, n_total)
            if not ok:
                h = hs * 0.1
                continue

            for j in range(n_total):
                err[j] = hs * (
                    E1 * k1[j] + E3 * k3[j] + E4 * k4[j] + E5 * k5[j] + E6 * k6[j] + E7 * k7[j]
                )
            enorm = _error_norm(err, y, ynew, rtol, atol, n_total)

            if enorm <= 1.0:
                t = t_target if clipped else t + hs
                for j in range(n_total):
                    y[j] = ynew[j]
                    k1[j] = k7[j]
                if enorm == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * enorm ** -0.2)
                if clipped:
                    # a step shortened only to land on t_target must not
                    # shrink the working step size
                    h = max(h, hs * factor)
                else:
                    h = hs * factor
            else:
                factor = max(MIN_FACTOR, SAFETY * enorm ** -0.2)
                h = hs * min(factor, 1.0)

        for j in range(n_total):
            out[idx, j] = y[j]

    return STATUS_OK, t, n_steps
