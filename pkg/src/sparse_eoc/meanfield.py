"""Mean-field variance and correlation maps and edge-of-chaos solving.

Conventions: ``q`` is the pre-activation variance, ``sigma_w2``/``sigma_b2``
the weight and bias variances, ``V`` the variance map

    V(q) = sigma_w2 * E[phi(sqrt(q) Z)^2] + sigma_b2,

and ``chi1 = sigma_w2 * E[phi'(sqrt(q*) Z)^2]`` the slope of the correlation
map at rho = 1. The closed forms live in the kernel backend; the quadrature
routines here are independent cross-checks.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from ._backend import kernels
from .activations import ActivationSpec, Kind, tau_for_sparsity
from .errors import DomainError, EocInfeasibleError, NoSolutionError, PreconditionError
from .special import (
    QuadratureRule,
    SQRT2,
    erf,
    erf_inv,
    gaussian_expectation,
    gaussian_pair_expectation,
    std_normal_pdf,
)

MARGINAL_TOL = 1e-6
DIVERGENCE_LIMIT = 1e12
FIXED_POINT_TOL = 1e-10
DEFAULT_GRID = 2048


@dataclass(frozen=True)
class MeanFieldParams:
    sigma_w2: float
    sigma_b2: float = 0.0

    def __post_init__(self):
        if not self.sigma_w2 > 0.0:
            raise DomainError(f"sigma_w2 must be positive, got {self.sigma_w2!r}")
        if not self.sigma_b2 >= 0.0:
            raise DomainError(f"sigma_b2 must be non-negative, got {self.sigma_b2!r}")
        object.__setattr__(self, "sigma_w2", float(self.sigma_w2))
        object.__setattr__(self, "sigma_b2", float(self.sigma_b2))

    def scaled(self, w_factor: float) -> "MeanFieldParams":
        return MeanFieldParams(self.sigma_w2 * w_factor, self.sigma_b2)

    def to_dict(self) -> dict:
        return {"sigma_w2": self.sigma_w2, "sigma_b2": self.sigma_b2}

    @classmethod
    def from_dict(cls, doc: dict) -> "MeanFieldParams":
        return cls(float(doc["sigma_w2"]), float(doc.get("sigma_b2", 0.0)))


class Stability(enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    MARGINAL = "marginal"


def classify(vprime: float, tol: float = MARGINAL_TOL) -> Stability:
    if vprime < 1.0 - tol:
        return Stability.STABLE
    if vprime > 1.0 + tol:
        return Stability.UNSTABLE
    return Stability.MARGINAL


@dataclass(frozen=True)
class FixedPoint:
    q: float
    vprime: float
    vsecond: float
    stability: Stability

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "vprime": self.vprime,
            "vsecond": self.vsecond,
            "stability": self.stability.value,
        }


@dataclass(frozen=True)
class FixedPointScan:
    """Fixed points found on a grid, sorted by ``q``.

    ``continuum`` is set when ``V(q) = q`` holds on the whole grid (ReLU on
    the edge of chaos with zero bias); ``points`` is then empty.
    """

    points: tuple
    continuum: bool = False

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]


@dataclass(frozen=True)
class EocSolution:
    activation: ActivationSpec
    s: float
    params: MeanFieldParams
    q_star: float
    chi1: float
    vprime_at_qstar: float
    vsecond_at_qstar: float

    @property
    def tau(self) -> float:
        return self.activation.tau

    @property
    def m(self) -> Optional[float]:
        return self.activation.m

    def to_dict(self) -> dict:
        return {
            "activation": self.activation.to_dict(),
            "s": self.s,
            "params": self.params.to_dict(),
            "tau": self.tau,
            "m": self.m,
            "q_star": self.q_star,
            "chi1": self.chi1,
            "vprime_at_qstar": self.vprime_at_qstar,
            "vsecond_at_qstar": self.vsecond_at_qstar,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EocSolution":
        return cls(
            activation=ActivationSpec.from_dict(doc["activation"]),
            s=float(doc["s"]),
            params=MeanFieldParams.from_dict(doc["params"]),
            q_star=float(doc["q_star"]),
            chi1=float(doc["chi1"]),
            vprime_at_qstar=float(doc["vprime_at_qstar"]),
            vsecond_at_qstar=float(doc["vsecond_at_qstar"]),
        )


@dataclass(frozen=True)
class Trajectory:
    values: np.ndarray
    diverged: bool

    def __len__(self):
        return len(self.values)


def _check_q(q):
    if not q > 0.0:
        raise DomainError(f"variance must be positive, got {q!r}")
    return float(q)


def _args(spec: ActivationSpec):
    return spec.kind.code, spec.tau, spec.clip


# -- closed forms -----------------------------------------------------------

def second_moment(spec: ActivationSpec, q: float) -> float:
    """``E[phi(sqrt(q) Z)^2]``."""
    return kernels.second_moment(*_args(spec), _check_q(q))


def variance_map(spec: ActivationSpec, params: MeanFieldParams, q: float) -> float:
    return kernels.vmap(*_args(spec), params.sigma_w2, params.sigma_b2, _check_q(q))


def variance_map_d1(spec: ActivationSpec, params: MeanFieldParams, q: float) -> float:
    return kernels.vmap_d1(*_args(spec), params.sigma_w2, _check_q(q))


def variance_map_d2(spec: ActivationSpec, params: MeanFieldParams, q: float) -> float:
    return kernels.vmap_d2(*_args(spec), params.sigma_w2, _check_q(q))


def chi1(spec: ActivationSpec, params: MeanFieldParams, q_star: float) -> float:
    return kernels.chi1(*_args(spec), params.sigma_w2, _check_q(q_star))


def chi1_gap(spec: ActivationSpec, params: MeanFieldParams, q_star: float) -> float:
    """``chi1 - V'(q*)`` written out directly; zero for unclipped kinds."""
    q_star = _check_q(q_star)
    if spec.m is None:
        return 0.0
    m, tau = spec.m, spec.tau
    gap = params.sigma_w2 * m / math.sqrt(2.0 * math.pi * q_star) * math.exp(
        -((m + tau) ** 2) / (2.0 * q_star)
    )
    return 2.0 * gap if spec.kind.odd else gap


def variance_map_quadrature(
    spec: ActivationSpec,
    params: MeanFieldParams,
    q: float,
    rule: Optional[QuadratureRule] = None,
) -> float:
    """Variance map by numerical integration.

    Panels split at the activation kinks unless an explicit Gauss-Hermite
    ``rule`` is passed.
    """
    f = lambda x: np.square(spec.apply(x))  # noqa: E731
    if rule is not None:
        e = gaussian_expectation(f, q, rule)
    else:
        e = gaussian_expectation(f, q, breakpoints=spec.kinks())
    return params.sigma_w2 * e + params.sigma_b2


def correlation_map(
    spec: ActivationSpec,
    params: MeanFieldParams,
    q_star: float,
    rho: float,
    rule: Optional[QuadratureRule] = None,
) -> float:
    """Correlation map ``R(rho)`` at the variance fixed point ``q_star``."""
    q_star = _check_q(q_star)
    if not -1.0 <= rho <= 1.0:
        raise DomainError(f"correlation must lie in [-1, 1], got {rho!r}")
    resid = abs(variance_map(spec, params, q_star) - q_star)
    if resid > 1e-6 * q_star:
        raise PreconditionError(
            f"q*={q_star} is not a fixed point of the variance map (|V(q*) - q*| = {resid:.3g})"
        )
    if rule is not None:
        e = gaussian_pair_expectation(spec.apply, q_star, rho, rule)
    else:
        e = gaussian_pair_expectation(spec.apply, q_star, rho, breakpoints=spec.kinks())
    return (params.sigma_w2 * e + params.sigma_b2) / q_star


# -- edge of chaos ---------------------------------------------------------

def eoc_sigma_w2(kind, s: float, q_star: float, m: Optional[float] = None) -> float:
    """Weight variance putting ``chi1 = 1`` at sparsity ``s``."""
    kind = Kind.parse(kind)
    if kind.clipped:
        if m is None or not m > 0.0:
            raise DomainError(f"{kind.value} requires a clip magnitude m > 0")
        shift = m / math.sqrt(2.0 * q_star)
        if kind is Kind.CLIPPED_RELU:
            return 2.0 / (erf(shift + erf_inv(2.0 * s - 1.0)) - 2.0 * s + 1.0)
        return 1.0 / (erf(shift + erf_inv(s)) - s)
    return 1.0 / (1.0 - s)


def _eoc_spec(kind, s, q_star, m):
    kind = Kind.parse(kind)
    if not 0.0 < s < 1.0:
        raise DomainError(f"sparsity must lie in (0, 1), got {s!r}")
    if not q_star > 0.0:
        raise DomainError(f"q* must be positive, got {q_star!r}")
    if kind.clipped and m is None:
        raise DomainError(f"{kind.value} requires a clip magnitude m")
    tau = tau_for_sparsity(kind, s, q_star)
    return ActivationSpec(kind, tau, m if kind.clipped else None)


def eoc_vprime(kind, s: float, m: float, q_star: float = 1.0) -> float:
    """``V'(q*)`` on the edge of chaos, without requiring a feasible bias."""
    spec = _eoc_spec(kind, s, q_star, m)
    sw2 = eoc_sigma_w2(spec.kind, s, q_star, spec.m)
    return kernels.vmap_d1(*_args(spec), sw2, q_star)


def eoc_solve(kind, s: float, m: Optional[float] = None, q_star: float = 1.0) -> EocSolution:
    """Edge-of-chaos initialisation for target sparsity ``s``.

    Picks ``tau`` for the sparsity, ``sigma_w2`` so that ``chi1 = 1`` and
    ``sigma_b2`` so that ``q_star`` is a fixed point.

    Raises
    ------
    EocInfeasibleError
        If the required bias variance is negative.
    """
    spec = _eoc_spec(kind, s, q_star, m)
    sw2 = eoc_sigma_w2(spec.kind, s, q_star, spec.m)
    sb2 = q_star - sw2 * second_moment(spec, q_star)
    if sb2 < 0.0:
        if sb2 < -1e-12 * q_star:
            raise EocInfeasibleError(spec.kind.value, s, spec.m, q_star, sb2)
        sb2 = 0.0
    params = MeanFieldParams(sw2, sb2)
    return EocSolution(
        activation=spec,
        s=float(s),
        params=params,
        q_star=float(q_star),
        chi1=chi1(spec, params, q_star),
        vprime_at_qstar=variance_map_d1(spec, params, q_star),
        vsecond_at_qstar=variance_map_d2(spec, params, q_star),
    )


def solve_m_for_vprime(
    kind, s: float, q_star: float, target_vprime: float, bracket=(1e-4, 100.0)
) -> float:
    """Clip magnitude ``m`` giving ``V'(q*) = target_vprime`` on the EoC.

    ``V'(q*)`` increases with ``m`` towards 1, so a bracketing root finder
    on ``bracket`` suffices.
    """
    kind = Kind.parse(kind)
    if not kind.clipped:
        raise DomainError("only clipped kinds have a clip magnitude to solve for")
    if not 0.0 < target_vprime < 1.0:
        raise DomainError(f"target V'(q*) must lie in (0, 1), got {target_vprime!r}")
    g = lambda m: eoc_vprime(kind, s, m, q_star) - target_vprime  # noqa: E731
    lo, hi = bracket
    glo, ghi = g(lo), g(hi)
    if glo * ghi > 0.0:
        raise NoSolutionError(
            f"V'(q*)={target_vprime} not reachable for m in [{lo}, {hi}] "
            f"(range {glo + target_vprime:.6g} .. {ghi + target_vprime:.6g})"
        )
    return brentq(g, lo, hi, xtol=1e-13, rtol=1e-15, maxiter=500)


# -- fixed points and trajectories -------------------------------------------

def _fixed_point(spec, params, q):
    vp = variance_map_d1(spec, params, q)
    return FixedPoint(q, vp, variance_map_d2(spec, params, q), classify(vp))


def _tangencies(spec, params, qs, g):
    # touching roots (V' = 1 without a sign change), e.g. the EoC point itself
    out = []
    dv = lambda q: variance_map_d1(spec, params, q) - 1.0  # noqa: E731
    for i in range(1, len(qs) - 1):
        if g[i - 1] * g[i] <= 0.0 or g[i] * g[i + 1] <= 0.0:
            continue
        if abs(g[i]) > abs(g[i - 1]) or abs(g[i]) > abs(g[i + 1]):
            continue
        lo, hi = qs[i - 1], qs[i + 1]
        if dv(lo) * dv(hi) > 0.0:
            continue
        q = brentq(dv, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
        if abs(variance_map(spec, params, q) - q) <= FIXED_POINT_TOL * max(1.0, q):
            out.append(q)
    return out


def _dedupe(roots):
    out = []
    for r in roots:
        if not out or abs(r - out[-1]) > 1e-9 * max(1.0, r):
            out.append(r)
    return out


def find_fixed_points(
    spec: ActivationSpec,
    params: MeanFieldParams,
    q_range: Sequence[float] = (1e-4, 100.0),
    grid_n: int = DEFAULT_GRID,
) -> FixedPointScan:
    """Locate solutions of ``V(q) = q`` on a log-spaced grid over ``q_range``.

    Each sign change of ``V(q) - q`` is refined to a relative residual of
    1e-10.
    """
    lo, hi = float(q_range[0]), float(q_range[1])
    if not 0.0 < lo < hi:
        raise DomainError(f"need 0 < q_lo < q_hi, got {q_range!r}")
    if grid_n < 16:
        raise DomainError("grid_n must be at least 16")
    qs = np.geomspace(lo, hi, grid_n)
    g = kernels.vmap_grid(*_args(spec), params.sigma_w2, params.sigma_b2, qs) - qs
    tol = FIXED_POINT_TOL * np.maximum(1.0, qs)
    if np.all(np.abs(g) <= tol):
        return FixedPointScan((), continuum=True)

    h = lambda q: variance_map(spec, params, q) - q  # noqa: E731
    roots = []
    for i in range(grid_n):
        if g[i] == 0.0:
            roots.append(qs[i])
        elif i + 1 < grid_n and g[i] * g[i + 1] < 0.0:
            roots.append(brentq(h, qs[i], qs[i + 1], xtol=1e-15, rtol=1e-15, maxiter=500))
    roots += _tangencies(spec, params, qs, g)
    roots = _dedupe(sorted(roots))
    points = tuple(_fixed_point(spec, params, r) for r in roots)
    return FixedPointScan(points)


def input_variance(params: MeanFieldParams, q0: float, variance_preserving: bool = False) -> float:
    """First-layer pre-activation variance for raw input variance ``q0``."""
    if variance_preserving:
        return float(q0)
    return params.sigma_w2 * q0 + params.sigma_b2


def iterate_variance(
    spec: ActivationSpec,
    params: MeanFieldParams,
    q0: float,
    depth: int,
    *,
    variance_preserving: bool = False,
    limit: float = DIVERGENCE_LIMIT,
) -> Trajectory:
    """Layer variances ``q^1 .. q^depth`` from input variance ``q0``.

    The first layer sees raw input (``q^1 = sigma_w2 q0 + sigma_b2``, or
    ``q0`` with the variance-preserving first layer); later layers apply
    the variance map. Truncated at the first value above ``limit``.
    """
    _check_q(q0)
    if depth < 1:
        raise DomainError("depth must be >= 1")
    q1 = input_variance(params, q0, variance_preserving)
    values, diverged = kernels.iterate_vmap(
        *_args(spec), params.sigma_w2, params.sigma_b2, q1, int(depth), limit
    )
    return Trajectory(values, bool(diverged))


def iterate_from(spec, params, q1: float, depth: int, limit: float = DIVERGENCE_LIMIT) -> Trajectory:
    """Trajectory starting at a given first-layer variance ``q1``."""
    _check_q(q1)
    values, diverged = kernels.iterate_vmap(
        *_args(spec), params.sigma_w2, params.sigma_b2, float(q1), int(depth), limit
    )
    return Trajectory(values, bool(diverged))


def iterate_correlation(
    spec: ActivationSpec, params: MeanFieldParams, q_star: float, rho0: float, depth: int
) -> np.ndarray:
    """Correlations ``rho^1 .. rho^depth`` obtained by applying ``R`` repeatedly."""
    if depth < 1:
        raise DomainError("depth must be >= 1")
    out = np.empty(depth)
    rho = float(rho0)
    for i in range(depth):
        rho = min(1.0, max(-1.0, correlation_map(spec, params, q_star, rho)))
        out[i] = rho
    return out


# -- curves ------------------------------------------------------------------

def variance_curve(spec: ActivationSpec, params: MeanFieldParams, qs: Iterable[float]) -> np.ndarray:
    """Rows ``(q, V(q), V'(q), V''(q))``."""
    rows = []
    for q in qs:
        q = float(q)
        if q <= 0.0:
            # limit q -> 0+
            rows.append((q, params.sigma_b2, float("nan"), float("nan")))
            continue
        rows.append(
            (q, variance_map(spec, params, q), variance_map_d1(spec, params, q),
             variance_map_d2(spec, params, q))
        )
    return np.array(rows, dtype=float).reshape(-1, 4)


def correlation_curve(
    spec: ActivationSpec, params: MeanFieldParams, q_star: float, rhos: Iterable[float]
) -> np.ndarray:
    """Rows ``(rho, R(rho))``."""
    rows = [(float(r), correlation_map(spec, params, q_star, float(r))) for r in rhos]
    return np.array(rows, dtype=float).reshape(-1, 2)
