"""Plain SGD training of deep dense networks with a linear softmax readout.

Hidden layers are initialised from a :class:`~sparse_eoc.simulate.NetworkSpec`
(normally on the edge of chaos with a variance-preserving first layer).  The
readout maps the last hidden layer to class logits and starts from
``N(0, 1/N)`` weights and zero bias.  Every input vector is rescaled so that
its mean square equals ``TrainConfig.input_q`` before entering the network.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np

from . import rng
from .data import Dataset
from .errors import DomainError, ShapeError
from .simulate import Arch, NetworkSpec, init_network, normalize_inputs

GRAD_LOG_STEPS = 15
HOLDOUT = 0.1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 5
    batch_size: int = 64
    seed: int = 0
    input_q: float = 1.0
    holdout: float = HOLDOUT

    def __post_init__(self):
        if not self.learning_rate > 0.0:
            raise DomainError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch_size must be positive")
        if not self.input_q > 0.0:
            raise DomainError("input_q must be positive")
        rng.check_seed(self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


@dataclass
class TrainReport:
    loss_curve: List[float]
    test_accuracy: float
    test_sparsity: float
    grad_norm_log: List[List[float]]
    diverged: bool
    diverged_step: Optional[int] = None
    initial_sparsity: float = float("nan")
    holdout_accuracy: float = float("nan")
    steps: int = 0

    def to_dict(self) -> dict:
        return {
            "loss_curve": [_finite_or_str(v) for v in self.loss_curve],
            "test_accuracy": self.test_accuracy,
            "test_sparsity": self.test_sparsity,
            "grad_norm_log": [[_finite_or_str(v) for v in row] for row in self.grad_norm_log],
            "diverged": self.diverged,
            "diverged_step": self.diverged_step,
            "initial_sparsity": self.initial_sparsity,
            "holdout_accuracy": self.holdout_accuracy,
            "steps": self.steps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def max_logged_grad(self) -> float:
        vals = [v for row in self.grad_norm_log for v in row]
        if not vals:
            return float("nan")
        arr = np.array(vals, dtype=float)
        return float(np.inf) if np.any(~np.isfinite(arr)) else float(arr.max())


def _finite_or_str(v):
    v = float(v)
    return v if math.isfinite(v) else str(v)


@dataclass
class MLP:
    """Mutable copy of a dense network plus its readout layer."""

    spec: NetworkSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    readout_w: np.ndarray
    readout_b: np.ndarray

    @classmethod
    def from_spec(cls, spec: NetworkSpec, n_classes: int) -> "MLP":
        if spec.arch is not Arch.DENSE:
            raise DomainError("training supports dense networks only")
        net = init_network(spec)
        g = rng.substream(spec.seed, rng.READOUT)
        wr = g.standard_normal((n_classes, spec.width)) / math.sqrt(spec.width)
        return cls(
            spec,
            [w.copy() for w in net.weights],
            [b.copy() for b in net.biases],
            wr,
            np.zeros(n_classes),
        )

    def forward(self, x: np.ndarray):
        """Returns ``(logits, activations, masks, layer_sparsity)``."""
        act = self.spec.activation
        xs, ds, sp = [x], [], []
        h = x
        for w, b in zip(self.weights, self.biases):
            h, d, z = act.forward(xs[-1] @ w.T + b)
            xs.append(h)
            ds.append(d)
            sp.append(z / h.size)
        logits = xs[-1] @ self.readout_w.T + self.readout_b
        return logits, xs, ds, sp

    def gradients(self, x: np.ndarray, labels: np.ndarray):
        """Mean cross-entropy over the batch and its gradients.

        Returns ``(loss, g_w, g_b, g_readout_w, g_readout_b, layer_sparsity)``
        where ``g_w`` and ``g_b`` are lists over hidden layers.
        """
        logits, xs, ds, sp = self.forward(x)
        loss, dlogits = _softmax_xent(logits, labels)
        depth = len(self.weights)
        g_w, g_b = [None] * depth, [None] * depth
        delta = (dlogits @ self.readout_w) * ds[-1]
        for l in range(depth - 1, -1, -1):
            g_w[l] = delta.T @ xs[l]
            g_b[l] = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ self.weights[l]) * ds[l - 1]
        return loss, g_w, g_b, dlogits.T @ xs[-1], dlogits.sum(axis=0), sp


def _softmax_xent(logits: np.ndarray, labels: np.ndarray):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = labels.shape[0]
    loss = -np.mean(np.log(np.maximum(p[np.arange(n), labels], 1e-300)))
    p[np.arange(n), labels] -= 1.0
    return loss, p / n


def prepare_inputs(features: np.ndarray, input_q: float) -> np.ndarray:
    return normalize_inputs(features, input_q)


def evaluate(model: MLP, dataset: Dataset, input_q: float = 1.0, batch_size: int = 1000) -> dict:
    """Accuracy and mean hidden-layer zero fraction on ``dataset``."""
    if dataset.n_features != model.spec.in_features:
        raise ShapeError(f"dataset has {dataset.n_features} features, network expects {model.spec.in_features}")
    x_all = prepare_inputs(dataset.features, input_q)
    correct, zeros, total = 0, 0.0, 0
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, len(dataset), batch_size):
            x = x_all[start : start + batch_size]
            logits, xs, _, _ = model.forward(x)
            pred = np.argmax(np.nan_to_num(logits, nan=-np.inf), axis=1)
            correct += int(np.sum(pred == dataset.labels[start : start + batch_size]))
            zeros += sum(float(np.sum(a == 0.0)) for a in xs[1:])
            total += x.shape[0]
    n_hidden = model.spec.depth * model.spec.width
    return {"accuracy": correct / max(total, 1), "mean_sparsity": zeros / max(total * n_hidden, 1)}


def train_sgd(spec: NetworkSpec, train: Dataset, test: Dataset, config: TrainConfig) -> TrainReport:
    """Train with minibatch SGD on softmax cross-entropy.

    A ``config.holdout`` fraction of ``train`` is held out.  Training stops
    early, flagged as diverged, when the loss stops being finite or a hidden
    layer outputs only zeros on a batch.  ``grad_norm_log[t][l]`` is the
    Frobenius norm of the loss gradient for layer ``l``'s weights at step
    ``t`` (first 15 steps).
    """
    if len(train) == 0:
        raise DomainError("training set is empty")
    if train.n_features != spec.in_features:
        raise ShapeError(f"dataset has {train.n_features} features, network expects {spec.in_features}")
    fit, held = train.split(config.holdout, seed=config.seed)
    model = MLP.from_spec(spec, train.n_classes)
    x_fit = prepare_inputs(fit.features, config.input_q)
    y_fit = fit.labels
    initial = evaluate(model, test, config.input_q)["mean_sparsity"]

    lr = config.learning_rate
    losses, grad_log = [], []
    diverged, div_step, step = False, None, 0
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            order = rng.substream(config.seed, rng.SHUFFLE, epoch).permutation(len(fit))
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                loss, g_w, g_b, g_wr, g_br, sp = model.gradients(x_fit[idx], y_fit[idx])
                losses.append(float(loss))
                if not math.isfinite(loss) or max(sp) >= 1.0:
                    diverged, div_step = True, step
                    break
                for l in range(spec.depth):
                    model.weights[l] -= lr * g_w[l]
                    model.biases[l] -= lr * g_b[l]
                model.readout_w -= lr * g_wr
                model.readout_b -= lr * g_br
                if step < GRAD_LOG_STEPS:
                    grad_log.append([float(np.linalg.norm(g)) for g in g_w])
                step += 1
            if diverged:
                break

    result = evaluate(model, test, config.input_q)
    held_acc = evaluate(model, held, config.input_q)["accuracy"] if len(held) else float("nan")
    return TrainReport(
        loss_curve=losses,
        test_accuracy=result["accuracy"],
        test_sparsity=result["mean_sparsity"],
        grad_norm_log=grad_log,
        diverged=diverged,
        diverged_step=div_step,
        initial_sparsity=initial,
        holdout_accuracy=held_acc,
        steps=step,
    )


def default_input_q(spec_or_solution, q_star: float = 1.0) -> float:
    """Input mean square used for training.

    ``q*`` for clipped kinds and plain ReLU; ``0.75 q*`` for unclipped kinds
    with ``tau > 0``, starting on the stable side of the one-sided fixed
    point.
    """
    act = getattr(spec_or_solution, "activation", spec_or_solution)
    if act.kind.clipped or act.tau == 0.0:
        return q_star
    return 0.75 * q_star


def eoc_network(solution, depth: int = 30, width: int = 100, in_features: int = 784, seed: int = 0) -> NetworkSpec:
    """Dense network on the edge of chaos with a variance-preserving first layer."""
    return NetworkSpec(
        activation=solution.activation,
        init=solution.params,
        depth=depth,
        width=width,
        in_features=in_features,
        seed=seed,
        first_layer_variance_preserving=True,
    )
