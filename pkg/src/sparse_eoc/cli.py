"""Command-line interface.

Every subcommand accepts ``--config FILE`` (a JSON run configuration) and
flags; flags override values from the file.  Exit codes: 0 success,
2 usage or domain error, 3 infeasible edge of chaos, 4 divergence (only
with ``--fail-on-divergence``), 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .activations import ActivationSpec, Kind
from .data import find_mnist, load_idx, synthetic_split
from .errors import DomainError, EocInfeasibleError, NoSolutionError, PreconditionError, ShapeError
from .meanfield import (
    MeanFieldParams,
    correlation_curve,
    eoc_solve,
    find_fixed_points,
    solve_m_for_vprime,
    variance_curve,
)
from .output import csv_text, emit, json_text
from .simulate import LAYER_STATS_HEADER, Arch, NetworkSpec, sweep_seeds
from .spectrum import jacobian_moments, weights_s1
from .sweep import SWEEP_HEADER, analytic_row, custom_grid, default_grid, solve_cell
from .trainer import TrainConfig, default_input_q, eoc_network, train_sgd

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_DIVERGED = 4

Q_ZERO = 1e-300  # stands in for the q -> 0+ limit in curve output


class UsageError(Exception):
    pass


# -- run configuration -------------------------------------------------------

@dataclass(frozen=True)
class EocRequest:
    kind: Kind
    s: float
    m: Optional[float] = None
    vprime: Optional[float] = None

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "s": self.s, "m": self.m, "vprime": self.vprime}


@dataclass(frozen=True)
class RunConfig:
    """Parsed run configuration.

    Exactly one of ``eoc`` or the pair ``(activation, params)`` is set.
    """

    q_star: float = 1.0
    activation: Optional[ActivationSpec] = None
    params: Optional[MeanFieldParams] = None
    eoc: Optional[EocRequest] = None
    network: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    out: Optional[str] = None
    format: Optional[str] = None

    def __post_init__(self):
        explicit = self.activation is not None or self.params is not None
        if explicit and self.eoc is not None:
            raise UsageError("give either explicit (activation, params) or an eoc request, not both")
        if explicit and (self.activation is None or self.params is None):
            raise UsageError("explicit mode needs both an activation and sigma_w2")
        if self.eoc is not None and self.eoc.m is not None and self.eoc.vprime is not None:
            raise UsageError("give at most one of m and vprime")
        if not self.q_star > 0.0:
            raise UsageError(f"q* must be positive, got {self.q_star}")
        if self.format not in (None, "csv", "json"):
            raise UsageError(f"unknown format {self.format!r}")

    @property
    def has_model(self) -> bool:
        return self.eoc is not None or self.activation is not None

    def to_dict(self) -> dict:
        doc = {"q_star": self.q_star, "network": dict(self.network), "train": dict(self.train)}
        if self.eoc is not None:
            doc["eoc"] = self.eoc.to_dict()
        if self.activation is not None:
            doc["activation"] = self.activation.to_dict()
            doc["params"] = self.params.to_dict()
        if self.out is not None:
            doc["out"] = self.out
        if self.format is not None:
            doc["format"] = self.format
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        """Parse a configuration, also accepting documents this CLI emits."""
        if "config" in doc and isinstance(doc["config"], dict):
            doc = doc["config"]
        try:
            eoc = None
            if doc.get("eoc") is not None:
                e = doc["eoc"]
                eoc = EocRequest(Kind.parse(e["kind"]), float(e["s"]), _opt(e.get("m")), _opt(e.get("vprime")))
            act = ActivationSpec.from_dict(doc["activation"]) if doc.get("activation") else None
            params = MeanFieldParams.from_dict(doc["params"]) if doc.get("params") else None
            return cls(
                q_star=float(doc.get("q_star", 1.0)),
                activation=act,
                params=params,
                eoc=eoc,
                network=dict(doc.get("network") or {}),
                train=dict(doc.get("train") or {}),
                out=doc.get("out"),
                format=doc.get("format"),
            )
        except (KeyError, TypeError) as exc:
            raise UsageError(f"malformed configuration: {exc}") from None

    def resolve(self):
        """``(activation, params, solution)``; ``solution`` is None in explicit mode."""
        if self.eoc is not None:
            req = self.eoc
            m = req.m
            if req.kind.clipped and m is None:
                if req.vprime is None:
                    raise UsageError(f"{req.kind.value} needs --m or --vprime")
                m = solve_m_for_vprime(req.kind, req.s, self.q_star, req.vprime)
            sol = eoc_solve(req.kind, req.s, m if req.kind.clipped else None, self.q_star)
            return sol.activation, sol.params, sol
        if self.activation is None:
            raise UsageError("no activation given; use --kind with --s or --sigma-w2")
        return self.activation, self.params, None


def _opt(v):
    return None if v is None else float(v)


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    return RunConfig.from_dict(doc).to_dict()


_NETWORK_FLAGS = {
    "depth": "depth",
    "width": "width",
    "seed": "seed",
    "arch": "arch",
    "kernel_half_width": "kernel_half_width",
    "spatial_len": "spatial_len",
    "seeds": "seeds",
    "batch": "batch",
}
_TRAIN_FLAGS = {
    "epochs": "epochs",
    "lr": "learning_rate",
    "batch_size": "batch_size",
    "input_q": "input_q",
    "mnist_dir": "mnist_dir",
    "subset": "subset",
    "separation": "separation",
}


def build_config(args) -> RunConfig:
    """Merge the config file with command-line flags (flags win)."""
    doc = _load_config(getattr(args, "config", None))
    if args.qstar is not None:
        doc["q_star"] = args.qstar
    existing_kind = (doc.get("eoc") or {}).get("kind") or (doc.get("activation") or {}).get("kind")
    kind = args.kind if args.kind is not None else existing_kind
    if args.s is not None:
        if kind is None:
            raise UsageError("--s needs --kind")
        prev = doc.get("eoc") or {}
        m, vprime = args.m, args.vprime
        if m is None and vprime is None:
            m, vprime = prev.get("m"), prev.get("vprime")
        doc["eoc"] = {"kind": kind, "s": args.s, "m": m, "vprime": vprime}
        doc.pop("activation", None)
        doc.pop("params", None)
    elif args.sigma_w2 is not None:
        if kind is None:
            raise UsageError("--sigma-w2 needs --kind")
        prev_a, prev_p = doc.get("activation") or {}, doc.get("params") or {}
        tau = args.tau if args.tau is not None else prev_a.get("tau", 0.0)
        m = args.m if args.m is not None else prev_a.get("m")
        sb2 = args.sigma_b2 if args.sigma_b2 is not None else prev_p.get("sigma_b2", 0.0)
        doc["activation"] = {"kind": kind, "tau": tau, "m": m}
        doc["params"] = {"sigma_w2": args.sigma_w2, "sigma_b2": sb2}
        doc.pop("eoc", None)
    else:
        if doc.get("eoc"):
            e = doc["eoc"]
            if args.kind is not None:
                e["kind"] = args.kind
            if args.m is not None:
                e["m"], e["vprime"] = args.m, None
            if args.vprime is not None:
                e["vprime"], e["m"] = args.vprime, None
        elif doc.get("activation"):
            a, p = doc["activation"], doc["params"]
            if args.kind is not None:
                a["kind"] = args.kind
            if args.tau is not None:
                a["tau"] = args.tau
            if args.m is not None:
                a["m"] = args.m
            if args.sigma_b2 is not None:
                p["sigma_b2"] = args.sigma_b2
        elif any(getattr(args, k) is not None for k in ("kind", "m", "vprime", "tau", "sigma_b2")):
            raise UsageError("give --s (edge-of-chaos solve) or --sigma-w2 (explicit parameters)")
    net = dict(doc.get("network") or {})
    for flag, key in _NETWORK_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            net[key] = v
    if getattr(args, "no_variance_preserving", False):
        net["first_layer_variance_preserving"] = False
    tr = dict(doc.get("train") or {})
    for flag, key in _TRAIN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            tr[key] = v
    if getattr(args, "synthetic", False):
        tr["mnist_dir"] = None
    doc["network"], doc["train"] = net, tr
    if args.out is not None:
        doc["out"] = args.out
    if args.format is not None:
        doc["format"] = args.format
    return RunConfig.from_dict(doc)


# -- subcommands ---------------------------------------------------------------

def _fmt(cfg: RunConfig, default: str) -> str:
    return cfg.format or default


def cmd_eoc(args, cfg: RunConfig) -> int:
    if cfg.eoc is None:
        raise UsageError("eoc needs --kind and --s")
    _, _, sol = cfg.resolve()
    doc = sol.to_dict()
    if _fmt(cfg, "json") == "json":
        emit(json_text(doc), cfg.out)
    else:
        header = ("kind", "s", "tau", "m", "sigma_w2", "sigma_b2", "q_star", "chi1", "vprime_at_qstar", "vsecond_at_qstar")
        p = sol.params
        row = (sol.activation.kind.value, sol.s, sol.tau, sol.m, p.sigma_w2, p.sigma_b2, sol.q_star, sol.chi1,
               sol.vprime_at_qstar, sol.vsecond_at_qstar)
        emit(csv_text(header, [row]), cfg.out)
    return EXIT_OK


def _grid(lo, hi, n, name):
    if n < 1:
        raise UsageError("--n must be >= 1")
    if n == 1:
        return np.array([lo])
    if not hi > lo:
        raise UsageError(f"invalid {name} range [{lo}, {hi}]")
    return np.linspace(lo, hi, n)


def cmd_vmap(args, cfg: RunConfig) -> int:
    act, params, _ = cfg.resolve()
    lo = 0.0 if args.q_min is None else args.q_min
    hi = 3.0 * cfg.q_star if args.q_max is None else args.q_max
    if lo < 0.0:
        raise UsageError("--q-min must be >= 0")
    qs = _grid(lo, hi, args.n, "q")
    curve = variance_curve(act, params, np.where(qs == 0.0, Q_ZERO, qs))
    curve[:, 0] = qs
    if _fmt(cfg, "csv") == "csv":
        emit(csv_text(("q", "V", "dV", "d2V"), curve.tolist()), cfg.out)
    else:
        emit(json_text({"config": cfg.to_dict(), "q": curve[:, 0], "V": curve[:, 1], "dV": curve[:, 2],
                        "d2V": curve[:, 3]}), cfg.out)
    return EXIT_OK


def cmd_cmap(args, cfg: RunConfig) -> int:
    act, params, _ = cfg.resolve()
    lo = -1.0 if args.rho_min is None else args.rho_min
    hi = 1.0 if args.rho_max is None else args.rho_max
    if lo < -1.0 or hi > 1.0:
        raise UsageError("correlation range must lie within [-1, 1]")
    curve = correlation_curve(act, params, cfg.q_star, _grid(lo, hi, args.n, "rho"))
    if _fmt(cfg, "csv") == "csv":
        emit(csv_text(("rho", "R"), curve.tolist()), cfg.out)
    else:
        emit(json_text({"config": cfg.to_dict(), "rho": curve[:, 0], "R": curve[:, 1]}), cfg.out)
    return EXIT_OK


def cmd_fixed_points(args, cfg: RunConfig) -> int:
    act, params, _ = cfg.resolve()
    lo = 1e-4 if args.q_min is None else args.q_min
    hi = 100.0 * cfg.q_star if args.q_max is None else args.q_max
    scan = find_fixed_points(act, params, (lo, hi), args.grid)
    if _fmt(cfg, "json") == "json":
        emit(json_text({"config": cfg.to_dict(), "continuum": scan.continuum,
                        "fixed_points": [p.to_dict() for p in scan]}), cfg.out)
    else:
        rows = [(p.q, p.vprime, p.vsecond, p.stability.value) for p in scan]
        emit(csv_text(("q", "vprime", "vsecond", "stability"), rows), cfg.out)
    return EXIT_OK


def cmd_spectrum(args, cfg: RunConfig) -> int:
    act, params, _ = cfg.resolve()
    depth = args.depth if args.depth is not None else cfg.network.get("depth", 30)
    rep = jacobian_moments(act, params, cfg.q_star, int(depth), weights_s1(args.weights))
    if _fmt(cfg, "json") == "json":
        doc = rep.to_dict()
        doc["weights"] = args.weights
        doc["config"] = cfg.to_dict()
        emit(json_text(doc), cfg.out)
    else:
        d = rep.to_dict()
        keys = ("mu", "m1", "m2", "variance", "s1", "depth")
        emit(csv_text(keys, [[d[k] for k in keys]]), cfg.out)
    return EXIT_OK


def _network_spec(cfg: RunConfig, act, params, defaults: dict) -> NetworkSpec:
    net = {**defaults, **cfg.network}
    return NetworkSpec(
        activation=act,
        init=params,
        depth=int(net["depth"]),
        width=int(net["width"]),
        arch=Arch.parse(net.get("arch", "dense")),
        kernel_half_width=int(net.get("kernel_half_width", 0)),
        spatial_len=int(net.get("spatial_len", 1)),
        seed=int(net.get("seed", 0)),
        first_layer_variance_preserving=bool(net.get("first_layer_variance_preserving", True)),
    )


def cmd_simulate(args, cfg: RunConfig) -> int:
    act, params, _ = cfg.resolve()
    spec = _network_spec(cfg, act, params, {"depth": 20, "width": 1000})
    n_seeds = int(cfg.network.get("seeds", 1))
    base = spec.seed
    seeds = list(range(base, base + n_seeds))
    batch = int(cfg.network.get("batch", 16))
    result = sweep_seeds(spec, seeds, cfg.q_star, batch=batch, gradients=args.gradients)
    if _fmt(cfg, "json") == "json":
        doc = result.to_dict()
        doc["config"] = cfg.to_dict()
        doc["layers"] = [[list(s.row()) for s in st] for st in result.stats]
        emit(json_text(doc), cfg.out)
    else:
        rows = [(seed,) + s.row() for seed, st in zip(result.seeds, result.stats) for s in st]
        emit(csv_text(("seed",) + LAYER_STATS_HEADER, rows), cfg.out)
    if args.fail_on_divergence and any(result.diverged):
        return EXIT_DIVERGED
    return EXIT_OK


def _datasets(cfg: RunConfig):
    tr = cfg.train
    subset = int(tr.get("subset", 10000))
    seed = int(tr.get("seed", cfg.network.get("seed", 0)))
    mnist_dir = tr.get("mnist_dir")
    if mnist_dir:
        train_paths, test_paths = find_mnist(mnist_dir, "train"), find_mnist(mnist_dir, "test")
        if train_paths is None or test_paths is None:
            raise UsageError(f"MNIST files not found in {mnist_dir}")
        train = load_idx(*train_paths).subset(subset, seed)
        return train, load_idx(*test_paths), "mnist"
    train, test = synthetic_split(n_train=subset, separation=float(tr.get("separation", 80.0)), seed=0)
    return train, test, "synthetic"


def _train_config(cfg: RunConfig, act) -> TrainConfig:
    tr = cfg.train
    input_q = tr.get("input_q")
    if input_q is None:
        input_q = default_input_q(act, cfg.q_star)
    return TrainConfig(
        learning_rate=float(tr.get("learning_rate", 0.01)),
        epochs=int(tr.get("epochs", 5)),
        batch_size=int(tr.get("batch_size", 64)),
        seed=int(cfg.network.get("seed", 0)),
        input_q=float(input_q),
    )


def cmd_train(args, cfg: RunConfig) -> int:
    act, params, _ = cfg.resolve()
    train, test, source = _datasets(cfg)
    spec = _network_spec(cfg, act, params, {"depth": 30, "width": 100}).with_(in_features=train.n_features)
    tcfg = _train_config(cfg, act)
    report = train_sgd(spec, train, test, tcfg)
    if _fmt(cfg, "json") == "json":
        doc = report.to_dict()
        doc.update({"config": cfg.to_dict(), "dataset": source, "train_config": tcfg.to_dict()})
        emit(json_text(doc), cfg.out)
    else:
        emit(csv_text(("step", "loss"), list(enumerate(report.loss_curve))), cfg.out)
    if args.grad_log_out:
        header = ("step",) + tuple(f"layer_{i + 1}" for i in range(spec.depth))
        emit(csv_text(header, [(i,) + tuple(r) for i, r in enumerate(report.grad_norm_log)]), args.grad_log_out)
    if args.fail_on_divergence and report.diverged:
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig) -> int:
    if args.kinds or args.s_values or args.vprimes:
        kinds = args.kinds or [k.value for k in Kind]
        s_values = args.s_values or [0.6, 0.7, 0.8, 0.85]
        vprimes = args.vprimes or [0.5, 0.7, 0.9]
        cells = custom_grid(kinds, s_values, vprimes)
    else:
        cells = default_grid()
    data = None if args.analytic_only else _datasets(cfg)
    rows, any_div = [], False
    for cell in cells:
        sol, status = solve_cell(cell, cfg.q_star)
        row = analytic_row(cell, sol, status)
        if sol is not None and data is not None:
            train, test, _ = data
            net = {"depth": 30, "width": 100, **cfg.network}
            spec = eoc_network(sol, int(net["depth"]), int(net["width"]), train.n_features, int(net.get("seed", 0)))
            rep = train_sgd(spec, train, test, _train_config(cfg, sol.activation))
            row[6:9] = [rep.test_accuracy, rep.test_sparsity, rep.diverged]
            any_div |= rep.diverged
        rows.append(row)
    if _fmt(cfg, "csv") == "csv":
        emit(csv_text(SWEEP_HEADER, rows), cfg.out)
    else:
        emit(json_text({"config": cfg.to_dict(), "rows": [dict(zip(SWEEP_HEADER, r)) for r in rows]}), cfg.out)
    if args.fail_on_divergence and any_div:
        return EXIT_DIVERGED
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--config", help="JSON run configuration; flags override it")
    g.add_argument("--kind", help="shifted-relu, st, crelu or cst")
    g.add_argument("--s", type=float, help="target sparsity (solves the edge of chaos)")
    g.add_argument("--m", type=float, help="clip magnitude")
    g.add_argument("--vprime", type=float, help="target V'(q*) used to choose m")
    g.add_argument("--qstar", type=float, help="fixed-point variance q* (default 1)")
    g.add_argument("--tau", type=float, help="threshold, explicit mode only")
    g.add_argument("--sigma-w2", dest="sigma_w2", type=float, help="weight variance, explicit mode")
    g.add_argument("--sigma-b2", dest="sigma_b2", type=float, help="bias variance, explicit mode")
    o = p.add_argument_group("output")
    o.add_argument("--out", help="output path (default stdout)")
    o.add_argument("--format", choices=("csv", "json"))


def _net_flags(p, seeds: bool = False) -> None:
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--seed", type=int)
    if seeds:
        p.add_argument("--seeds", type=int, help="number of consecutive seeds")
        p.add_argument("--batch", type=int, help="inputs per seed (default 16)")
        p.add_argument("--arch", choices=("dense", "conv1d"))
        p.add_argument("--kernel-half-width", dest="kernel_half_width", type=int)
        p.add_argument("--spatial-len", dest="spatial_len", type=int)
    p.add_argument("--no-variance-preserving", dest="no_variance_preserving", action="store_true",
                   help="use (sigma_w2, sigma_b2) in the first layer too")
    p.add_argument("--fail-on-divergence", dest="fail_on_divergence", action="store_true")


def _train_flags(p) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--input-q", dest="input_q", type=float)
    p.add_argument("--mnist-dir", dest="mnist_dir", help="directory holding the MNIST IDX files")
    p.add_argument("--synthetic", action="store_true", help="use synthetic blobs even if --mnist-dir is set")
    p.add_argument("--subset", type=int, help="training samples (default 10000)")
    p.add_argument("--separation", type=float, help="synthetic class separation (default 80)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparse-eoc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eoc", help="solve for edge-of-chaos initialisation")
    _common(p)
    p.set_defaults(func=cmd_eoc)

    p = sub.add_parser("vmap", help="variance map curve")
    _common(p)
    p.add_argument("--q-min", dest="q_min", type=float)
    p.add_argument("--q-max", dest="q_max", type=float)
    p.add_argument("--n", type=int, default=101)
    p.set_defaults(func=cmd_vmap)

    p = sub.add_parser("cmap", help="correlation map curve")
    _common(p)
    p.add_argument("--rho-min", dest="rho_min", type=float)
    p.add_argument("--rho-max", dest="rho_max", type=float)
    p.add_argument("--n", type=int, default=101)
    p.set_defaults(func=cmd_cmap)

    p = sub.add_parser("fixed-points", help="fixed points of the variance map")
    _common(p)
    p.add_argument("--q-min", dest="q_min", type=float)
    p.add_argument("--q-max", dest="q_max", type=float)
    p.add_argument("--grid", type=int, default=2048)
    p.set_defaults(func=cmd_fixed_points)

    p = sub.add_parser("spectrum", help="Jacobian spectrum moments")
    _common(p)
    p.add_argument("--depth", type=int)
    p.add_argument("--weights", choices=("gaussian", "orthogonal"), default="gaussian")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("simulate", help="finite-width propagation statistics")
    _common(p)
    _net_flags(p, seeds=True)
    p.add_argument("--gradients", action="store_true", help="also backpropagate gradient norms")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="SGD training at desk scale")
    _common(p)
    _net_flags(p)
    _train_flags(p)
    p.add_argument("--grad-log-out", dest="grad_log_out", help="CSV path for per-layer gradient norms")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="grid of kinds, sparsities and V'(q*) targets")
    _common(p)
    _net_flags(p)
    _train_flags(p)
    p.add_argument("--analytic-only", dest="analytic_only", action="store_true")
    p.add_argument("--kinds", nargs="+")
    p.add_argument("--s-values", dest="s_values", nargs="+", type=float)
    p.add_argument("--vprimes", nargs="+", type=float)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"sparse-eoc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EocInfeasibleError, NoSolutionError) as exc:
        print(f"sparse-eoc {args.command}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DomainError, PreconditionError, ShapeError) as exc:
        print(f"sparse-eoc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"sparse-eoc {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
