"""Input-output Jacobian spectrum moments and the backward gradient recurrence.

For activations whose slope is 0 or 1 the moments of the squared diagonal
derivative matrix ``D`` do not depend on the order::

    mu_k = E[phi'(sqrt(q*) Z)^(2k)] = P(phi'(sqrt(q*) Z) = 1) = mu

so the spectrum of ``J J^T`` depends on the activation only through ``mu``
and ``chi1 = sigma_w2 * mu``.  The moment generating function of ``D^2``
is ``M(z) = mu * z / (1 - z)``; at the edge of chaos ``mu = 1 / sigma_w2``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ._backend import kernels
from .activations import ActivationSpec
from .errors import DomainError
from .meanfield import MeanFieldParams
from .special import gaussian_expectation

GAUSSIAN_S1 = -1.0
ORTHOGONAL_S1 = 0.0
_WEIGHT_S1 = {"gaussian": GAUSSIAN_S1, "orthogonal": ORTHOGONAL_S1}


@dataclass(frozen=True)
class SpectrumReport:
    """Summary statistics of the ``J J^T`` spectrum for a depth-``depth`` net."""

    mu: float
    m1: float
    m2: float
    variance: float
    s1: float
    depth: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "SpectrumReport":
        return cls(
            mu=float(doc["mu"]),
            m1=float(doc["m1"]),
            m2=float(doc["m2"]),
            variance=float(doc["variance"]),
            s1=float(doc["s1"]),
            depth=int(doc["depth"]),
        )


def weights_s1(name: str) -> float:
    """First S-transform moment for a weight ensemble name."""
    try:
        return _WEIGHT_S1[str(name).lower()]
    except KeyError:
        raise DomainError(f"unknown weight ensemble {name!r}; use 'gaussian' or 'orthogonal'") from None


def mu_k(spec: ActivationSpec, q_star: float, k: int = 1) -> float:
    """``E[phi'(sqrt(q*) Z)^(2k)]``; identical for every ``k >= 1``."""
    if not q_star > 0.0:
        raise DomainError(f"q* must be positive, got {q_star!r}")
    if k < 1:
        raise DomainError(f"moment order must be >= 1, got {k!r}")
    return kernels.slope_mass(spec.kind.code, spec.tau, spec.clip, float(q_star))


def mu_k_quadrature(spec: ActivationSpec, q_star: float, k: int = 1) -> float:
    """Quadrature estimate of ``mu_k``, split at the activation kinks."""
    if not q_star > 0.0:
        raise DomainError(f"q* must be positive, got {q_star!r}")
    f = lambda x: spec.derivative(x) ** (2 * k)  # noqa: E731
    return gaussian_expectation(f, q_star, breakpoints=spec.kinks())


def jacobian_moments(
    spec: ActivationSpec,
    params: MeanFieldParams,
    q_star: float,
    depth: int,
    s1: float = GAUSSIAN_S1,
) -> SpectrumReport:
    """First two moments and variance of the ``J J^T`` spectrum.

    Parameters
    ----------
    s1 : float
        ``-1`` for Gaussian weights, ``0`` for orthogonal weights.

    Notes
    -----
    ``m1 = chi1^L`` and ``m2 = chi1^(2L) * L * (1/mu + 1/L - 1 - s1)``, so
    ``variance = chi1^(2L) * L * (1/mu - 1 - s1)``, which reduces to
    ``L * (sigma_w2 - 1 - s1)`` on the edge of chaos.
    """
    if depth < 1:
        raise DomainError(f"depth must be >= 1, got {depth!r}")
    if s1 not in (GAUSSIAN_S1, ORTHOGONAL_S1):
        raise DomainError(f"s1 must be -1 (gaussian) or 0 (orthogonal), got {s1!r}")
    mu = mu_k(spec, q_star)
    if mu <= 0.0:
        raise DomainError("activation has no unit-slope mass at this q*")
    chi = params.sigma_w2 * mu
    scale = chi ** (2 * depth)
    m1 = chi**depth
    core = 1.0 / mu - 1.0 - s1
    m2 = scale * depth * (core + 1.0 / depth)
    return SpectrumReport(
        mu=mu, m1=m1, m2=m2, variance=scale * depth * core, s1=float(s1), depth=int(depth)
    )


def predicted_grad_profile(chi1_value: float, widths: Sequence[int], q_tilde_last: float = 1.0) -> np.ndarray:
    """Expected squared gradient norms per layer from the backward recurrence.

    ``qt[l] = qt[l+1] * (widths[l+1] / widths[l]) * chi1``, anchored at
    ``qt[-1] = q_tilde_last``.
    """
    widths = np.asarray(widths, dtype=float)
    if widths.ndim != 1 or widths.size == 0 or np.any(widths <= 0):
        raise DomainError("widths must be a non-empty sequence of positive sizes")
    out = np.empty(widths.size)
    out[-1] = q_tilde_last
    for l in range(widths.size - 2, -1, -1):
        out[l] = out[l + 1] * (widths[l + 1] / widths[l]) * chi1_value
    return out


def chi1_scale_for(target_chi1: float, spec: ActivationSpec, params: MeanFieldParams, q_star: float) -> float:
    """Factor on ``sigma_w2`` that moves ``chi1`` at ``q_star`` to ``target_chi1``."""
    current = params.sigma_w2 * mu_k(spec, q_star)
    if not (target_chi1 > 0.0 and math.isfinite(target_chi1)):
        raise DomainError(f"target chi1 must be positive, got {target_chi1!r}")
    return target_chi1 / current
