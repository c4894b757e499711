"""Finite-width networks at a given initialisation.

Dense layers compute ``h = x W^T + b`` on a batch ``x`` of shape
``(batch, in)``.  Conv1D layers act on ``(batch, channels, positions)`` with
circular padding and kernel width ``2k + 1``::

    h[j, a] = sum_{i, t} W[j, i, t] * x[i, a + t - k] + b[j]

Weights are i.i.d. ``N(0, sigma_w2 / fan)`` with ``fan`` the number of
inputs feeding one unit (``N`` or ``C (2k + 1)``), biases ``N(0, sigma_b2)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import rng
from .activations import ActivationSpec
from .errors import DomainError, PreconditionError, ShapeError
from .meanfield import MeanFieldParams

DIVERGENCE_FACTOR = 10.0


class Arch(enum.Enum):
    DENSE = "dense"
    CONV1D = "conv1d"

    @classmethod
    def parse(cls, name) -> "Arch":
        if isinstance(name, Arch):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise DomainError(f"unknown architecture {name!r}") from None


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture and initialisation of a finite-width network.

    ``in_features`` is the input width (or input channels for Conv1D) and
    defaults to ``width``.
    """

    activation: ActivationSpec
    init: MeanFieldParams
    depth: int
    width: int
    arch: Arch = Arch.DENSE
    kernel_half_width: int = 0
    spatial_len: int = 1
    seed: int = 0
    first_layer_variance_preserving: bool = False
    in_features: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch.parse(self.arch))
        if self.depth < 1:
            raise DomainError(f"depth must be >= 1, got {self.depth}")
        if self.width < 1:
            raise DomainError(f"width must be >= 1, got {self.width}")
        if self.in_features is None:
            object.__setattr__(self, "in_features", self.width)
        elif self.in_features < 1:
            raise DomainError("in_features must be >= 1")
        if self.arch is Arch.CONV1D:
            if self.kernel_half_width < 0:
                raise DomainError("kernel_half_width must be >= 0")
            if self.spatial_len <= 2 * self.kernel_half_width:
                raise DomainError("Conv1D requires spatial_len > 2k")
        object.__setattr__(self, "seed", rng.check_seed(self.seed))

    @property
    def taps(self) -> int:
        return 2 * self.kernel_half_width + 1 if self.arch is Arch.CONV1D else 1

    def fan_in(self, layer: int) -> int:
        n_in = self.in_features if layer == 1 else self.width
        return n_in * self.taps

    def with_(self, **changes) -> "NetworkSpec":
        doc = {f: getattr(self, f) for f in self.__dataclass_fields__}
        doc.update(changes)
        return NetworkSpec(**doc)

    def to_dict(self) -> dict:
        return {
            "activation": self.activation.to_dict(),
            "init": self.init.to_dict(),
            "depth": self.depth,
            "width": self.width,
            "arch": self.arch.value,
            "kernel_half_width": self.kernel_half_width,
            "spatial_len": self.spatial_len,
            "seed": self.seed,
            "first_layer_variance_preserving": self.first_layer_variance_preserving,
            "in_features": self.in_features,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkSpec":
        doc = dict(doc)
        doc["activation"] = ActivationSpec.from_dict(doc["activation"])
        doc["init"] = MeanFieldParams.from_dict(doc["init"])
        return cls(**doc)


@dataclass(frozen=True)
class Network:
    spec: NetworkSpec
    weights: tuple
    biases: tuple


@dataclass(frozen=True)
class LayerStats:
    layer: int
    q_emp: float
    sparsity_emp: float
    grad_norm: Optional[float] = None

    def row(self) -> tuple:
        return (self.layer, self.q_emp, self.sparsity_emp, self.grad_norm)


LAYER_STATS_HEADER = ("layer", "q_emp", "sparsity_emp", "grad_norm")


@dataclass
class ForwardTrace:
    """Per-layer pre-activations, activations and derivative masks."""

    inputs: np.ndarray
    h: List[np.ndarray] = field(default_factory=list)
    x: List[np.ndarray] = field(default_factory=list)
    d: List[np.ndarray] = field(default_factory=list)
    zeros: List[int] = field(default_factory=list)


def init_network(spec: NetworkSpec) -> Network:
    """Sample weights and biases; layer ``l`` uses its own substreams."""
    weights, biases = [], []
    for layer in range(1, spec.depth + 1):
        fan = spec.fan_in(layer)
        n_in = spec.in_features if layer == 1 else spec.width
        if layer == 1 and spec.first_layer_variance_preserving:
            w_var, b_var = 1.0 / fan, 0.0
        else:
            w_var, b_var = spec.init.sigma_w2 / fan, spec.init.sigma_b2
        shape = (spec.width, n_in) if spec.arch is Arch.DENSE else (spec.width, n_in, spec.taps)
        w = rng.substream(spec.seed, rng.WEIGHTS, layer).standard_normal(shape) * math.sqrt(w_var)
        if b_var > 0.0:
            b = rng.substream(spec.seed, rng.BIASES, layer).standard_normal(spec.width) * math.sqrt(b_var)
        else:
            b = np.zeros(spec.width)
        w.setflags(write=False)
        b.setflags(write=False)
        weights.append(w)
        biases.append(b)
    return Network(spec, tuple(weights), tuple(biases))


# -- layer primitives ----------------------------------------------------------

def _shifted_stack(x: np.ndarray, k: int) -> np.ndarray:
    # (B, C, S) -> (B, C * (2k+1), S) with entry [i*(2k+1)+t, a] = x[i, a + t - k]
    b, c, s = x.shape
    cols = np.stack([np.roll(x, -(t - k), axis=-1) for t in range(2 * k + 1)], axis=2)
    return cols.reshape(b, c * (2 * k + 1), s)


def _affine(net: Network, layer: int, x: np.ndarray) -> np.ndarray:
    w, b = net.weights[layer - 1], net.biases[layer - 1]
    if net.spec.arch is Arch.DENSE:
        return x @ w.T + b
    k = net.spec.kernel_half_width
    # one equal-shape product per position keeps circular shifts bit-exact
    cols = np.ascontiguousarray(_shifted_stack(x, k).transpose(2, 0, 1))
    h = np.matmul(cols, w.reshape(w.shape[0], -1).T).transpose(1, 2, 0)
    return h + b[:, None]


def _affine_transpose(net: Network, layer: int, delta: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the layer input given the gradient w.r.t. its output."""
    w = net.weights[layer - 1]
    if net.spec.arch is Arch.DENSE:
        return delta @ w
    k = net.spec.kernel_half_width
    out = np.zeros((delta.shape[0], w.shape[1], delta.shape[2]))
    for t in range(2 * k + 1):
        out += np.matmul(w[:, :, t].T, np.roll(delta, t - k, axis=-1))
    return out


def _check_inputs(net: Network, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    spec = net.spec
    if spec.arch is Arch.DENSE:
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != spec.in_features:
            raise ShapeError(f"expected inputs of shape (batch, {spec.in_features}), got {x.shape}")
    else:
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (spec.in_features, spec.spatial_len):
            raise ShapeError(
                f"expected inputs of shape (batch, {spec.in_features}, {spec.spatial_len}), got {x.shape}"
            )
    return x


def normalize_inputs(inputs: np.ndarray, q0: float) -> np.ndarray:
    """Rescale every sample so its mean square equals ``q0``; zero rows stay zero."""
    x = np.asarray(inputs, dtype=np.float64)
    flat = x.reshape(x.shape[0], -1)
    ms = np.mean(flat * flat, axis=1)
    scale = np.where(ms > 0.0, np.sqrt(q0 / np.where(ms > 0.0, ms, 1.0)), 0.0)
    return (flat * scale[:, None]).reshape(x.shape)


def gaussian_inputs(spec: NetworkSpec, batch: int, seed: int = 0, q0: Optional[float] = None) -> np.ndarray:
    """Standard Gaussian inputs shaped for ``spec``, optionally rescaled to ``q0``."""
    if spec.arch is Arch.DENSE:
        shape = (batch, spec.in_features)
    else:
        shape = (batch, spec.in_features, spec.spatial_len)
    x = rng.substream(seed, rng.INPUTS).standard_normal(shape)
    return normalize_inputs(x, q0) if q0 is not None else x


def forward(net: Network, inputs, normalize_input_q: Optional[float] = None) -> ForwardTrace:
    x = _check_inputs(net, inputs)
    if normalize_input_q is not None:
        x = normalize_inputs(x, normalize_input_q)
    trace = ForwardTrace(inputs=x)
    act = net.spec.activation
    with np.errstate(over="ignore", invalid="ignore"):
        for layer in range(1, net.spec.depth + 1):
            h = _affine(net, layer, x)
            x, d, z = act.forward(h)
            trace.h.append(h)
            trace.x.append(x)
            trace.d.append(d)
            trace.zeros.append(z)
    return trace


def _stats_from_trace(trace: ForwardTrace, grads=None) -> List[LayerStats]:
    out = []
    for i, h in enumerate(trace.h):
        with np.errstate(over="ignore", invalid="ignore"):
            q = float(np.mean(h * h))
        sparsity = trace.zeros[i] / trace.x[i].size
        g = None if grads is None else float(grads[i])
        out.append(LayerStats(i + 1, q, sparsity, g))
    return out


def forward_stats(net: Network, inputs, normalize_input_q: Optional[float] = None) -> List[LayerStats]:
    """Per-layer mean square pre-activation and fraction of exact zeros.

    ``q_emp`` averages ``|h^l|^2 / N`` over the batch (and positions for
    Conv1D).
    """
    return _stats_from_trace(forward(net, inputs, normalize_input_q))


def backward_stats(
    net: Network,
    inputs,
    normalize_input_q: Optional[float] = None,
    target_seed: int = 0,
) -> List[LayerStats]:
    """Forward statistics plus backpropagated gradient norms.

    The loss is ``0.5 * |x^L - y|^2`` summed over the batch with fixed
    standard Gaussian targets ``y``.  ``grad_norm`` is the root mean over
    the batch of ``|dL/dh^l|^2``.
    """
    trace = forward(net, inputs, normalize_input_q)
    last = trace.x[-1]
    y = rng.substream(target_seed, rng.TARGETS).standard_normal(last.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        delta = (last - y) * trace.d[-1]
        norms = [None] * net.spec.depth
        norms[-1] = _rms_norm(delta)
        for layer in range(net.spec.depth - 1, 0, -1):
            delta = _affine_transpose(net, layer + 1, delta) * trace.d[layer - 1]
            norms[layer - 1] = _rms_norm(delta)
    return _stats_from_trace(trace, norms)


def _rms_norm(delta: np.ndarray) -> float:
    flat = delta.reshape(delta.shape[0], -1)
    return float(np.sqrt(np.mean(np.sum(flat * flat, axis=1))))


def is_diverged(stats: Sequence[LayerStats], q_star: float, factor: float = DIVERGENCE_FACTOR) -> bool:
    """True when some layer's ``q_emp`` exceeds ``factor * q_star`` or is not finite."""
    return any(not (s.q_emp <= factor * q_star) for s in stats)


def grad_ratio_geomean(stats: Sequence[LayerStats]) -> float:
    """Geometric mean over layers of ``|delta^l|^2 / |delta^(l+1)|^2``."""
    g = np.array([s.grad_norm for s in stats], dtype=float)
    if g.size < 2:
        raise DomainError("need at least two layers")
    logs = 2.0 * (np.log(g[:-1]) - np.log(g[1:]))
    return float(np.exp(np.mean(logs)))


def empirical_cnn_covariance(net: Network, inputs, layer: int, offsets: Optional[Sequence[int]] = None):
    """Spatial second-moment matrix of the layer-``layer`` pre-activations.

    Entry ``[a, a']`` averages ``h_j(a) h_j(a')`` over channels and batch.
    With ``offsets`` the circular averages at those spatial offsets are
    returned instead of the matrix.
    """
    if net.spec.arch is not Arch.CONV1D:
        raise DomainError("empirical_cnn_covariance requires a Conv1D network")
    if not 1 <= layer <= net.spec.depth:
        raise DomainError(f"layer must lie in [1, {net.spec.depth}], got {layer}")
    h = forward(net, inputs).h[layer - 1]
    b, c, s = h.shape
    flat = h.transpose(1, 0, 2).reshape(b * c, s)
    cov = flat.T @ flat / (b * c)
    if offsets is None:
        return cov
    idx = np.arange(s)
    return np.array([np.mean(cov[idx, (idx + o) % s]) for o in offsets])


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float


def monte_carlo_variance_map(
    spec: ActivationSpec, params: MeanFieldParams, q: float, width: int = 1000, trials: int = 100, seed: int = 0
) -> MonteCarloEstimate:
    """One random layer applied to ``N(0, q)`` pre-activations.

    Each trial draws fresh inputs, weights and biases and records
    ``|W phi(h) + b|^2 / width``.
    """
    if width < 100 or trials < 10:
        raise PreconditionError("need width >= 100 and trials >= 10")
    if not q > 0.0:
        raise DomainError(f"variance must be positive, got {q!r}")
    sw, sb = math.sqrt(params.sigma_w2 / width), math.sqrt(params.sigma_b2)
    vals = np.empty(trials)
    for t in range(trials):
        g = rng.substream(seed, rng.TRIALS, t)
        h = g.standard_normal(width) * math.sqrt(q)
        w = g.standard_normal((width, width)) * sw
        out = w @ spec.apply(h) + g.standard_normal(width) * sb
        vals[t] = np.mean(out * out)
    return MonteCarloEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials)))


@dataclass(frozen=True)
class SeedSweep:
    """Outcome of the same architecture over several seeds."""

    seeds: tuple
    diverged: tuple
    stats: tuple

    @property
    def divergence_rate(self) -> float:
        return sum(self.diverged) / len(self.diverged)

    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "diverged": list(self.diverged),
            "divergence_rate": self.divergence_rate,
            "mean_sparsity": [float(np.mean([s.sparsity_emp for s in st])) for st in self.stats],
            "max_q_emp": [float(max(s.q_emp for s in st)) for st in self.stats],
        }


def sweep_seeds(
    spec: NetworkSpec, seeds: Sequence[int], q_star: float, batch: int = 16, gradients: bool = False
) -> SeedSweep:
    """Run forward (and optionally backward) statistics for each seed.

    Inputs are Gaussian, rescaled so that the first-layer variance equals
    ``q_star`` in expectation.
    """
    flags, all_stats = [], []
    for seed in seeds:
        net = init_network(spec.with_(seed=seed))
        if spec.first_layer_variance_preserving:
            q0 = q_star
        else:
            q0 = max(q_star - spec.init.sigma_b2, 0.0) / spec.init.sigma_w2
        x = gaussian_inputs(spec, batch, seed=seed, q0=q0)
        st = backward_stats(net, x, target_seed=seed) if gradients else forward_stats(net, x)
        flags.append(is_diverged(st, q_star))
        all_stats.append(tuple(st))
    return SeedSweep(tuple(int(s) for s in seeds), tuple(flags), tuple(all_stats))
