"""Sparsifying activation functions.

Four families are supported, all piecewise linear with slopes 0 or 1:

=================  =========================================================
shifted ReLU       ``max(0, x - tau)``
soft threshold     ``sign(x) * max(0, |x| - tau)``
clipped ReLU       ``min(m, max(0, x - tau))``
clipped soft thr.  ``sign(x) * min(m, max(0, |x| - tau))``
=================  =========================================================

The ReLU family zeroes everything below ``tau``; the soft-threshold family
zeroes ``[-tau, tau]``.  Clipping bounds the output magnitude by ``m`` and
leaves the zero set unchanged.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._backend import kernels
from .errors import DomainError
from .special import SQRT2, erf, erf_inv, std_normal_cdf, std_normal_quantile


class Kind(enum.Enum):
    SHIFTED_RELU = "shifted-relu"
    SOFT_THRESHOLD = "st"
    CLIPPED_RELU = "crelu"
    CLIPPED_SOFT_THRESHOLD = "cst"

    @property
    def code(self) -> int:
        return _CODES[self]

    @property
    def clipped(self) -> bool:
        return self in (Kind.CLIPPED_RELU, Kind.CLIPPED_SOFT_THRESHOLD)

    @property
    def odd(self) -> bool:
        """True for the soft-threshold family (odd functions of x)."""
        return self in (Kind.SOFT_THRESHOLD, Kind.CLIPPED_SOFT_THRESHOLD)

    @classmethod
    def parse(cls, name) -> "Kind":
        if isinstance(name, Kind):
            return name
        key = str(name).strip().lower().replace("_", "-")
        try:
            return _ALIASES[key]
        except KeyError:
            raise DomainError(f"unknown activation kind {name!r}") from None


_CODES = {
    Kind.SHIFTED_RELU: 0,
    Kind.SOFT_THRESHOLD: 1,
    Kind.CLIPPED_RELU: 2,
    Kind.CLIPPED_SOFT_THRESHOLD: 3,
}

_ALIASES = {
    "shifted-relu": Kind.SHIFTED_RELU,
    "shiftedrelu": Kind.SHIFTED_RELU,
    "relu": Kind.SHIFTED_RELU,
    "relu-tau": Kind.SHIFTED_RELU,
    "st": Kind.SOFT_THRESHOLD,
    "soft-threshold": Kind.SOFT_THRESHOLD,
    "softthreshold": Kind.SOFT_THRESHOLD,
    "crelu": Kind.CLIPPED_RELU,
    "clipped-relu": Kind.CLIPPED_RELU,
    "clippedrelu": Kind.CLIPPED_RELU,
    "cst": Kind.CLIPPED_SOFT_THRESHOLD,
    "clipped-soft-threshold": Kind.CLIPPED_SOFT_THRESHOLD,
    "clippedsoftthreshold": Kind.CLIPPED_SOFT_THRESHOLD,
}


@dataclass(frozen=True)
class ActivationSpec:
    """An activation family with its threshold ``tau`` and clip level ``m``.

    ``m`` must be given for the clipped kinds and omitted otherwise.
    """

    kind: Kind
    tau: float = 0.0
    m: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        tau = float(self.tau)
        if not (tau >= 0.0 and math.isfinite(tau)):
            raise DomainError(f"tau must be finite and >= 0, got {self.tau!r}")
        object.__setattr__(self, "tau", tau)
        if self.kind.clipped:
            if self.m is None or not (float(self.m) > 0.0 and math.isfinite(float(self.m))):
                raise DomainError(f"{self.kind.value} requires a finite clip magnitude m > 0")
            object.__setattr__(self, "m", float(self.m))
        elif self.m is not None:
            raise DomainError(f"{self.kind.value} does not take a clip magnitude")

    @property
    def clip(self) -> float:
        """Clip magnitude, ``inf`` for the unclipped kinds."""
        return self.m if self.m is not None else math.inf

    def kinks(self) -> tuple:
        """Points where the activation is not differentiable."""
        pts = [self.tau]
        if self.m is not None:
            pts.append(self.tau + self.m)
        if self.kind.odd:
            pts += [-p for p in pts]
        return tuple(sorted(set(pts)))

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind.odd:
            mag = np.clip(np.abs(x) - self.tau, 0.0, self.clip)
            return np.sign(x) * mag
        return np.clip(x - self.tau, 0.0, self.clip)

    __call__ = apply

    def derivative(self, x):
        """Slope of the activation: 1 on the linear segments, 0 elsewhere.

        At a kink the right-hand limit is returned.
        """
        x = np.asarray(x, dtype=float)
        lo, hi = self.tau, self.tau + self.clip
        d = (x >= lo) & (x < hi)
        if self.kind.odd:
            d |= (x >= -hi) & (x < -lo)
        return d.astype(float)

    def forward(self, h: np.ndarray):
        """Fused activation pass over a 2-D array.

        Returns ``(x, dmask, n_zeros)``.
        """
        h = np.asarray(h, dtype=np.float64)
        if h.ndim != 2:
            shape = h.shape
            x, d, z = kernels.act_forward(self.kind.code, self.tau, self.clip, h.reshape(shape[0], -1))
            return x.reshape(shape), d.reshape(shape), z
        return kernels.act_forward(self.kind.code, self.tau, self.clip, h)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "tau": self.tau, "m": self.m}

    @classmethod
    def from_dict(cls, doc: dict) -> "ActivationSpec":
        return cls(kind=Kind.parse(doc["kind"]), tau=doc.get("tau", 0.0), m=doc.get("m"))


def tau_for_sparsity(kind, s: float, q_star: float) -> float:
    """Smallest threshold giving expected sparsity ``s`` at variance ``q_star``."""
    kind = Kind.parse(kind)
    if not 0.0 < s < 1.0:
        raise DomainError(f"sparsity must lie in (0, 1), got {s!r}")
    if not q_star > 0.0:
        raise DomainError(f"q* must be positive, got {q_star!r}")
    if kind.odd:
        return math.sqrt(2.0 * q_star) * erf_inv(s)
    return math.sqrt(q_star) * std_normal_quantile(s)


def expected_sparsity(spec: ActivationSpec, q: float) -> float:
    """Probability that the activation of ``N(0, q)`` is exactly zero."""
    if not q > 0.0:
        raise DomainError(f"variance must be positive, got {q!r}")
    if spec.kind.odd:
        return erf(spec.tau / (SQRT2 * math.sqrt(q)))
    return std_normal_cdf(spec.tau / math.sqrt(q))
