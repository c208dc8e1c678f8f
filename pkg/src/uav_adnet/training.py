"""Seeded minibatch training with Adam and early stopping on validation error."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericError, ParseError
from .grid import stack_bits
from .nn import ModelConfig, Network, check_inputs, layer_shapes, load_network, loss_and_grads, reconstruct_batch, save_network

logger = logging.getLogger(__name__)

OCCUPANCY_CLIP = 1e-3


@dataclass(frozen=True)
class TrainOptions:
    epochs_max: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs_max < 1 or self.batch_size < 1:
            raise ConfigError("epochs_max and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")


@dataclass(frozen=True)
class CurvePoint:
    epoch: int
    e_train: float
    e_val: float


@dataclass
class LossCurve:
    points: list[CurvePoint] = field(default_factory=list)

    def append(self, epoch, e_train, e_val):
        if self.points and epoch <= self.points[-1].epoch:
            raise ValueError("curve epochs must be strictly increasing")
        self.points.append(CurvePoint(int(epoch), float(e_train), float(e_val)))

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def __eq__(self, other):
        return isinstance(other, LossCurve) and self.points == other.points

    @property
    def e_train(self):
        return [p.e_train for p in self.points]

    @property
    def e_val(self):
        return [p.e_val for p in self.points]

    def at(self, epoch) -> CurvePoint:
        for p in self.points:
            if p.epoch == epoch:
                return p
        raise KeyError(epoch)


class Adam:
    """Adam with bias-corrected moment estimates."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self._tmp: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        """``p -= lr * m_hat / (sqrt(v_hat) + eps)``, computed in place."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            tmp = self._tmp.get(name)
            if tmp is None:
                tmp = self._tmp[name] = np.empty_like(g)
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=tmp)
            m += tmp
            v *= self.beta2
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - self.beta2
            v += tmp
            np.divide(v, c2, out=tmp)
            np.sqrt(tmp, out=tmp)
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= self.lr / c1
            params[name] -= tmp


def sample_arrays(samples: Sequence, config: ModelConfig):
    X = stack_bits([s.grid for s in samples])
    G = np.stack([s.gps for s in samples]) if config.use_gps else None
    return check_inputs(config, X, G)


def reconstruction_error(net: Network, samples: Sequence) -> float:
    """Mean over samples of the per-cell squared reconstruction error (``z = mu``)."""
    if len(samples) == 0:
        raise ValueError("reconstruction_error needs at least one sample")
    X, G = sample_arrays(samples, net.config)
    return _recon_error(net, X, G)


def _recon_error(net, X, G):
    x_hat = reconstruct_batch(net, X, G)
    return float(np.mean(np.mean((X - x_hat) ** 2, axis=1)))


@dataclass
class TrainState:
    """Everything needed to continue a run bit-for-bit."""

    net: Network
    optimizer: Adam
    curve: LossCurve
    best: Network
    best_val: float = np.inf
    wait: int = 0
    stopped: bool = False

    @property
    def epoch(self) -> int:
        return self.curve[-1].epoch if len(self.curve) else 0

    def save(self, path, opts: TrainOptions | None = None) -> None:
        extra = {
            "kind": "train_state",
            "adam_t": self.optimizer.t,
            "best_val": self.best_val if np.isfinite(self.best_val) else None,
            "wait": self.wait,
            "stopped": self.stopped,
            "curve": [[p.epoch, p.e_train, p.e_val] for p in self.curve],
            "options": asdict(opts) if opts else None,
        }
        tensors = {}
        for name in self.net.params:
            if name in self.optimizer.m:
                tensors[f"adam.m.{name}"] = self.optimizer.m[name]
                tensors[f"adam.v.{name}"] = self.optimizer.v[name]
            tensors[f"best.{name}"] = self.best.params[name]
        save_network(path, self.net, extra, tensors)

    @classmethod
    def load(cls, path, opts: TrainOptions) -> "TrainState":
        net, extra, tensors = load_network(path)
        if extra.get("kind") != "train_state":
            raise ParseError(f"{path} is a model checkpoint, not a training state")
        opt = Adam(opts.learning_rate, opts.beta1, opts.beta2, opts.eps)
        opt.t = int(extra["adam_t"])
        for name in net.params:
            if f"adam.m.{name}" in tensors:
                opt.m[name] = tensors[f"adam.m.{name}"].copy()
                opt.v[name] = tensors[f"adam.v.{name}"].copy()
        best = Network(net.config, {n: tensors[f"best.{n}"].copy() for n in net.params})
        curve = LossCurve()
        for epoch, e_train, e_val in extra["curve"]:
            curve.append(epoch, e_train, e_val)
        best_val = extra["best_val"]
        return cls(net, opt, curve, best, np.inf if best_val is None else best_val,
                   int(extra["wait"]), bool(extra["stopped"]))


def start_state(config: ModelConfig, opts: TrainOptions, X=None) -> TrainState:
    """Fresh network; with training grids ``X`` the output bias starts at the
    logit of each cell's occupancy rate instead of zero."""
    net = Network.initialize(config, seed=[opts.seed, 0xC0FFEE])
    if X is not None:
        rate = np.clip(np.mean(X, axis=0), OCCUPANCY_CLIP, 1.0 - OCCUPANCY_CLIP)
        net.params["dec.out.b"] = np.log(rate) - np.log1p(-rate)
    return TrainState(net, Adam(opts.learning_rate, opts.beta1, opts.beta2, opts.eps), LossCurve(), net.copy())


def run_epoch(state: TrainState, X, G, opts: TrainOptions, epoch: int) -> float:
    """One pass over the training arrays; returns the mean minibatch objective."""
    net, cfg = state.net, state.net.config
    rng = np.random.default_rng([opts.seed, epoch])
    order = rng.permutation(X.shape[0])
    totals = []
    for start in range(0, len(order), opts.batch_size):
        idx = order[start:start + opts.batch_size]
        eps = rng.standard_normal((len(idx), cfg.latent_dim))
        try:
            total, _, _, grads = loss_and_grads(net, X[idx], None if G is None else G[idx], eps)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}: {exc}", parameter=exc.parameter, epoch=epoch) from None
        state.optimizer.step(net.params, grads)
        totals.append(total)
    for name, p in net.params.items():
        if not np.isfinite(p).all():
            raise NumericError(f"epoch {epoch}: parameter {name} became non-finite", parameter=name, epoch=epoch)
    return float(np.mean(totals))


def fit_network(train_samples, val_samples, config: ModelConfig, opts: TrainOptions = TrainOptions(),
                state: TrainState | None = None) -> TrainState:
    """Train until ``opts.epochs_max`` or early stop; resumable from ``state``."""
    if len(train_samples) == 0 or len(val_samples) == 0:
        raise ValueError("training needs nonempty train and validation sets")
    X, G = sample_arrays(train_samples, config)
    Xv, Gv = sample_arrays(val_samples, config)
    if state is None:
        state = start_state(config, opts, X)
    elif state.net.config != config:
        raise ConfigError("resumed state was trained with a different model configuration")
    for epoch in range(state.epoch + 1, opts.epochs_max + 1):
        if state.stopped:
            break
        run_epoch(state, X, G, opts, epoch)
        e_train = _recon_error(state.net, X, G)
        e_val = _recon_error(state.net, Xv, Gv)
        if not (np.isfinite(e_train) and np.isfinite(e_val)):
            raise NumericError(f"non-finite reconstruction error at epoch {epoch}", epoch=epoch)
        state.curve.append(epoch, e_train, e_val)
        logger.debug("epoch %d e_train=%.6f e_val=%.6f", epoch, e_train, e_val)
        if e_val < state.best_val:
            state.best_val, state.wait = e_val, 0
            state.best = state.net.copy()
        else:
            state.wait += 1
            if state.wait >= opts.patience:
                state.stopped = True
    return state


def train(dataset, config: ModelConfig, opts: TrainOptions = TrainOptions()) -> tuple[Network, LossCurve]:
    """Train on ``dataset = (train, val)``; returns the lowest-validation-error network."""
    train_samples, val_samples = dataset
    state = fit_network(train_samples, val_samples, config, opts)
    return state.best, state.curve


# -- curve files ------------------------------------------------------------------

def export_curve(curve: LossCurve, path) -> None:
    if not len(curve):
        raise ValueError("cannot export an empty curve")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "e_train", "e_val"])
        for p in curve:
            writer.writerow([p.epoch, format(p.e_train, ".17g"), format(p.e_val, ".17g")])


def read_curve(path) -> LossCurve:
    curve = LossCurve()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            curve.append(int(row["epoch"]), float(row["e_train"]), float(row["e_val"]))
    return curve
