"""Compiled inner loops for the master-equation and Schroedinger solvers.

Both solvers integrate a real linear system ``y' = (L0 + Omega_p(t) L1) y``
with ``L0``/``L1`` held in CSR form.  ``y`` holds the real and imaginary
parts of the independent state components (see ``dynamics._Reduction``).
"""

import math

import numba as nb
import numpy as np

PULSE_GAUSSIAN = 0
PULSE_KNOTS = 1

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_MAX_STEPS = 2
STATUS_NONFINITE = 3

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0

# reassociation and FMA contraction only: NaN/inf checks must stay meaningful
_FAST = {"reassoc", "contract", "nsz", "arcp"}


@nb.njit(cache=True, fastmath=_FAST)
def pulse_value(t, kind, fpars, knots, kvals, ksharp):
    if kind == PULSE_GAUSSIAN:
        omega_max = fpars[0]
        t_gate = fpars[1]
        tau = fpars[2] * t_gate
        tc = 0.5 * t_gate
        a = math.exp(-(tc * tc) / (tau * tau))
        v = omega_max * (math.exp(-((t - tc) ** 2) / (tau * tau)) - a) / (1.0 - a)
        return v if v > 0.0 else 0.0
    n = knots.shape[0]
    k = 0
    while k < n - 2 and t >= knots[k + 1]:
        k += 1
    lo = kvals[k]
    hi = kvals[k + 1]
    mid = 0.5 * (knots[k] + knots[k + 1])
    return 0.5 * (hi + lo) + 0.5 * (hi - lo) * math.erf(ksharp[k] * (t - mid))


@nb.njit(cache=True, fastmath=_FAST)
def apply_generator(y, f, p0, i0, d0, p1, i1, d1, out):
    """``out = (L0 + f L1) y`` for CSR matrices ``(p, i, d)``."""
    n = y.shape[0]
    for r in range(n):
        acc = 0.0
        for e in range(p0[r], p0[r + 1]):
            acc += d0[e] * y[i0[e]]
        if f != 0.0:
            acc1 = 0.0
            for e in range(p1[r], p1[r + 1]):
                acc1 += d1[e] * y[i1[e]]
            acc += f * acc1
        out[r] = acc


@nb.njit(cache=True, fastmath=_FAST)
def _rhs(t, y, out, kind, fpars, knots, kvals, ksharp, p0, i0, d0, p1, i1, d1):
    f = pulse_value(t, kind, fpars, knots, kvals, ksharp)
    apply_generator(y, f, p0, i0, d0, p1, i1, d1, out)


@nb.njit(cache=True, fastmath=_FAST)
def _rms(v, scale):
    acc = 0.0
    for i in range(v.shape[0]):
        z = v[i] / scale[i]
        acc += z * z
    return math.sqrt(acc / v.shape[0])


@nb.njit(cache=True, fastmath=_FAST)
def integrate(y0, stops, sample_row, out_states,
              kind, fpars, knots, kvals, ksharp,
              p0, i0, d0, p1, i1, d1,
              A, B, C, E, E3, E5, dop853, err_order,
              rtol, atol, max_step, max_steps):
    """Adaptive embedded Runge-Kutta from t=0 through every time in ``stops``.

    The state is written into ``out_states[sample_row[i]]`` whenever stop
    ``i`` is reached and ``sample_row[i] >= 0``.  Returns
    ``(status, t_reached, n_steps, n_fev)``.
    """
    n = y0.shape[0]
    n_stages = B.shape[0]
    K = np.zeros((n_stages + 1, n), dtype=np.float64)
    y = y0.copy()
    y_new = np.empty(n, dtype=np.float64)
    ytmp = np.empty(n, dtype=np.float64)
    scale = np.empty(n)
    errv = np.empty(n, dtype=np.float64)
    err3 = np.empty(n, dtype=np.float64)
    t = 0.0
    t_end = stops[stops.shape[0] - 1]
    exponent = -1.0 / (err_order + 1.0)

    _rhs(t, y, K[0], kind, fpars, knots, kvals, ksharp, p0, i0, d0, p1, i1, d1)
    n_fev = 1

    # initial step (Hairer, Norsett & Wanner II.4)
    for i in range(n):
        scale[i] = atol + abs(y[i]) * rtol
    dn0 = _rms(y, scale)
    dn1 = _rms(K[0], scale)
    if dn0 < 1e-5 or dn1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * dn0 / dn1
    h0 = min(h0, t_end)
    for i in range(n):
        ytmp[i] = y[i] + h0 * K[0, i]
    _rhs(h0, ytmp, K[1], kind, fpars, knots, kvals, ksharp, p0, i0, d0, p1, i1, d1)
    n_fev += 1
    for i in range(n):
        errv[i] = K[1, i] - K[0, i]
    dn2 = _rms(errv, scale) / h0
    if dn1 <= 1e-15 and dn2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(dn1, dn2)) ** (1.0 / (err_order + 1.0))
    h_abs = min(100.0 * h0, h1, max_step)

    si = 0
    n_steps = 0
    while si < stops.shape[0] and stops[si] <= 0.0:
        if sample_row[si] >= 0:
            out_states[sample_row[si]] = y
        si += 1

    while si < stops.shape[0]:
        target = stops[si]
        min_step = 10.0 * (np.nextafter(t, np.inf) - t)
        if h_abs > max_step:
            h_abs = max_step
        rejected = False
        while True:
            if h_abs < min_step:
                return STATUS_STEP_UNDERFLOW, t, n_steps, n_fev
            if n_steps >= max_steps:
                return STATUS_MAX_STEPS, t, n_steps, n_fev
            landing = t + 1.01 * h_abs >= target
            h = target - t if landing else h_abs

            for s in range(1, n_stages):
                for i in range(n):
                    ytmp[i] = y[i]
                for j in range(s):
                    a = h * A[s, j]
                    if a != 0.0:
                        for i in range(n):
                            ytmp[i] += a * K[j, i]
                _rhs(t + C[s] * h, ytmp, K[s], kind, fpars, knots, kvals, ksharp,
                     p0, i0, d0, p1, i1, d1)
            for i in range(n):
                y_new[i] = y[i]
            for j in range(n_stages):
                b = h * B[j]
                if b != 0.0:
                    for i in range(n):
                        y_new[i] += b * K[j, i]
            t_new = target if landing else t + h
            _rhs(t_new, y_new, K[n_stages], kind, fpars, knots, kvals, ksharp,
                 p0, i0, d0, p1, i1, d1)
            n_fev += n_stages
            n_steps += 1

            finite = True
            for i in range(n):
                ay = abs(y[i])
                an = abs(y_new[i])
                if not (an < 1e300):
                    finite = False
                scale[i] = atol + (ay if ay > an else an) * rtol
            if not finite:
                return STATUS_NONFINITE, t, n_steps, n_fev

            if dop853:
                for i in range(n):
                    errv[i] = 0.0
                    err3[i] = 0.0
                for j in range(n_stages + 1):
                    e5 = E5[j]
                    e3 = E3[j]
                    if e5 != 0.0:
                        for i in range(n):
                            errv[i] += e5 * K[j, i]
                    if e3 != 0.0:
                        for i in range(n):
                            err3[i] += e3 * K[j, i]
                s5 = _rms(errv, scale) ** 2 * n
                s3 = _rms(err3, scale) ** 2 * n
                if s5 == 0.0 and s3 == 0.0:
                    err = 0.0
                else:
                    err = h * s5 / math.sqrt((s5 + 0.01 * s3) * n)
            else:
                for i in range(n):
                    errv[i] = 0.0
                for j in range(n_stages + 1):
                    e = h * E[j]
                    if e != 0.0:
                        for i in range(n):
                            errv[i] += e * K[j, i]
                err = _rms(errv, scale)

            if err < 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * err ** exponent)
                if rejected:
                    factor = min(1.0, factor)
                if landing:
                    h_abs = max(h_abs, h * factor)
                else:
                    h_abs = h * factor
                break
            h_abs = h * max(MIN_FACTOR, SAFETY * err ** exponent)
            rejected = True

        t = t_new
        for i in range(n):
            y[i] = y_new[i]
            K[0, i] = K[n_stages, i]
        if landing:
            if sample_row[si] >= 0:
                out_states[sample_row[si]] = y
            si += 1
    return STATUS_OK, t, n_steps, n_fev
