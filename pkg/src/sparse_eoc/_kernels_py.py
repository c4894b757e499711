"""Pure-Python implementations of the hot kernels.

This module is the reference the compiled ``_kernels`` extension must agree
with. Activations are identified by an integer code:

    0 shifted ReLU, 1 soft threshold, 2 clipped ReLU, 3 clipped soft threshold

and unclipped kinds take ``m = inf``. Every closed form is written for the
ReLU-family integral over ``[tau, tau + m]``; the soft-threshold family is
the same integral doubled by symmetry.
"""
import math

import numpy as np

BACKEND = "python"

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _fold(code):
    return 2.0 if code in (1, 3) else 1.0


def _pieces(tau, m, q):
    sq = math.sqrt(q)
    a = tau / sq
    pa = math.exp(-0.5 * a * a) * _INV_SQRT2PI
    sfa = 0.5 * math.erfc(a * _INV_SQRT2)
    if math.isinf(m):
        return sq, a, pa, sfa, math.inf, 0.0, 0.0
    b = (tau + m) / sq
    pb = math.exp(-0.5 * b * b) * _INV_SQRT2PI
    sfb = 0.5 * math.erfc(b * _INV_SQRT2)
    return sq, a, pa, sfa, b, pb, sfb


def second_moment(code, tau, m, q):
    """E[phi(sqrt(q) Z)^2] for Z ~ N(0, 1)."""
    sq, a, pa, sfa, b, pb, sfb = _pieces(tau, m, q)
    i0 = sfa - sfb
    i1 = pa - pb
    i2 = a * pa + i0
    tail = 0.0
    if not math.isinf(m):
        i2 -= b * pb
        tail = m * m * sfb
    return _fold(code) * (q * i2 - 2.0 * sq * tau * i1 + tau * tau * i0 + tail)


def vmap(code, tau, m, sw2, sb2, q):
    return sw2 * second_moment(code, tau, m, q) + sb2


def vmap_d1(code, tau, m, sw2, q):
    sq, a, pa, sfa, b, pb, sfb = _pieces(tau, m, q)
    val = sfa - sfb
    if not math.isinf(m):
        val -= m / sq * pb
    return sw2 * _fold(code) * val


def vmap_d2(code, tau, m, sw2, q):
    sq, a, pa, sfa, b, pb, sfb = _pieces(tau, m, q)
    val = a * pa / (2.0 * q)
    if not math.isinf(m):
        val -= b * pb / (2.0 * q)
        val -= m * pb * (b * b - 1.0) / (2.0 * q * sq)
    return sw2 * _fold(code) * val


def slope_mass(code, tau, m, q):
    """Gaussian mass of the unit-slope region, E[phi'(sqrt(q) Z)^2]."""
    sq, a, pa, sfa, b, pb, sfb = _pieces(tau, m, q)
    return _fold(code) * (sfa - sfb)


def chi1(code, tau, m, sw2, q):
    return sw2 * slope_mass(code, tau, m, q)


def vmap_grid(code, tau, m, sw2, sb2, qs):
    qs = np.ascontiguousarray(qs, dtype=np.float64)
    out = np.empty_like(qs)
    for i in range(qs.shape[0]):
        out[i] = vmap(code, tau, m, sw2, sb2, qs[i])
    return out


def iterate_vmap(code, tau, m, sw2, sb2, q1, n, limit):
    """Trajectory q^1..q^n of the variance map starting from ``q1``.

    Stops after the first value exceeding ``limit``; returns the (possibly
    truncated) trajectory and whether it diverged.
    """
    out = np.empty(n, dtype=np.float64)
    q = q1
    for i in range(n):
        out[i] = q
        if not q <= limit:
            return out[: i + 1], True
        if i + 1 < n:
            q = vmap(code, tau, m, sw2, sb2, q)
    return out, False


def act_forward(code, tau, m, h):
    """Apply the activation to a 2-D array.

    Returns ``(x, d, zeros)``: activations, the 0/1 derivative mask
    (right-limit convention at kinks) and the count of exact zeros in ``x``.
    """
    h = np.asarray(h, dtype=np.float64)
    if code in (0, 2):
        r = h - tau
        d = ((r >= 0.0) & (r < m)).astype(np.float64)
        x = np.clip(r, 0.0, m) if code == 2 else np.maximum(r, 0.0)
    else:
        mag = np.abs(h) - tau
        x = np.sign(h) * (np.clip(mag, 0.0, m) if code == 3 else np.maximum(mag, 0.0))
        # right limits: [tau, tau+m) on the positive side, [-tau-m, -tau) on the negative
        d = (((h >= tau) & (h < tau + m)) | ((h >= -tau - m) & (h < -tau))).astype(np.float64)
    zeros = int(np.count_nonzero(x == 0.0))
    return x, d, zeros
