import math

import numpy as np
import pytest

from sparse_eoc import _kernels_py, activations, meanfield, spectrum

try:
    from sparse_eoc import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

BACKENDS = [pytest.param(_kernels_py, id="python")]
BACKENDS.append(
    pytest.param(_kernels_c, id="cython", marks=pytest.mark.skipif(_kernels_c is None, reason="extension not built"))
)


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route every kernel call through one backend for the test's duration."""
    k = request.param
    for mod in (activations, meanfield, spectrum):
        monkeypatch.setattr(mod, "kernels", k)
    return k


def erf_series(x: float) -> float:
    """Maclaurin series for erf, written independently of the package."""
    total, term, n = 0.0, x, 0
    terms = []
    while True:
        t = term / (2 * n + 1)
        terms.append(t)
        if abs(t) < 1e-18 * max(1.0, abs(x)):
            break
        n += 1
        term *= -x * x / n
    total = math.fsum(terms)
    return 2.0 / math.sqrt(math.pi) * total


def cdf_series(x: float) -> float:
    return 0.5 * (1.0 + erf_series(x / math.sqrt(2.0)))


def bisect(f, lo, hi, tol=1e-13):
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def mc_expectation(f, q, n=10**7, seed=12345, chunk=10**6):
    """Monte-Carlo mean and standard error of ``f(sqrt(q) Z)``."""
    g = np.random.default_rng(seed)
    s, s2, done = 0.0, 0.0, 0
    while done < n:
        k = min(chunk, n - done)
        v = f(math.sqrt(q) * g.standard_normal(k))
        s += v.sum()
        s2 += (v * v).sum()
        done += k
    mean = s / n
    var = s2 / n - mean * mean
    return mean, math.sqrt(var / n)
