"""Fully connected softmax classifier trained on (randomized) bit strings.

Plain numpy: mini-batch cross-entropy, SGD with momentum or Adam, inverted
dropout on hidden layers, and a finite-difference gradient check.
"""

from __future__ import annotations

import copy
import csv
import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "OptimizerConfig",
    "DenseNetConfig",
    "DenseNet",
    "EpochStats",
    "TrainingDiverged",
    "forward",
    "loss_and_grads",
    "train",
    "evaluate",
    "predict",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
    "write_trace_csv",
]

log = logging.getLogger(__name__)

ACTIVATION_CODES = {"relu": 0, "tanh": 1, "sigmoid": 2, "linear": 3}
CHECKPOINT_MAGIC = b"LTFC"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        name = self.name.lower()
        if name == "adadelta":
            warnings.warn("adadelta is not implemented; using adam", stacklevel=3)
            name = "adam"
        if name not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.name!r}")
        object.__setattr__(self, "name", name)
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class DenseNetConfig:
    hidden: Tuple[int, ...] = (128,)
    activations: Tuple[str, ...] = ("relu",)
    dropout: Tuple[float, ...] = (0.5,)
    n_classes: int = 2
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("hidden", "activations", "dropout"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not (len(self.hidden) == len(self.activations) == len(self.dropout)):
            raise ValueError("hidden, activations and dropout must have one entry per hidden layer")
        for a in self.activations:
            if a not in ACTIVATION_CODES:
                raise ValueError(f"unknown activation {a!r}")
        for d in self.dropout:
            if not 0.0 <= d < 1.0:
                raise ValueError("dropout must lie in [0, 1)")
        if min(self.hidden, default=1) < 1 or self.n_classes < 2:
            raise ValueError("layer widths must be positive and n_classes >= 2")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")


class DenseNet:
    """Weights ``W[i]`` of shape ``(fan_in, fan_out)`` and biases ``b[i]``.

    ``activations[i]`` applies to hidden layer ``i``; the last layer is
    always softmax.  ``dropout`` rates are only used in training mode.
    """

    def __init__(self, weights, biases, activations, dropout=None):
        self.weights: List[np.ndarray] = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases: List[np.ndarray] = [np.asarray(b, dtype=np.float64) for b in biases]
        self.activations: List[str] = list(activations)
        self.dropout: List[float] = list(dropout) if dropout is not None else [0.0] * len(self.activations)
        self.training = False
        if len(self.weights) != len(self.biases) or len(self.activations) != len(self.weights) - 1:
            raise ValueError("need one activation per hidden layer and one bias per weight matrix")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError("inconsistent layer shapes")
        for w0, w1 in zip(self.weights, self.weights[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ValueError("consecutive layer widths do not match")

    @classmethod
    def init(cls, input_width: int, config: DenseNetConfig) -> "DenseNet":
        rng = np.random.default_rng(config.seed)
        dims = [input_width, *config.hidden, config.n_classes]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims, dims[1:]):
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, config.activations, config.dropout)

    @classmethod
    def zeros(cls, input_width: int, config: DenseNetConfig) -> "DenseNet":
        dims = [input_width, *config.hidden, config.n_classes]
        return cls(
            [np.zeros((a, b)) for a, b in zip(dims, dims[1:])],
            [np.zeros(b) for b in dims[1:]],
            config.activations,
            config.dropout,
        )

    @property
    def dims(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> List[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "DenseNet":
        return copy.deepcopy(self)

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())


def _as_batch(net: DenseNet, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != net.input_width:
        raise ValueError(f"expected input width {net.input_width}, got {x.shape[-1]}")
    return x, single


def _forward_cache(net: DenseNet, x: np.ndarray, rng: Optional[np.random.Generator] = None):
    pre, post, masks = [], [x], []
    a = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        pre.append(z)
        if i == len(net.weights) - 1:
            a = _softmax(z)
            post.append(a)
            break
        a = _act(net.activations[i], z)
        rate = net.dropout[i]
        if rng is not None and rate > 0:
            mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
            a = a * mask
        else:
            mask = None
        masks.append(mask)
        post.append(a)
    return pre, post, masks


def forward(net: DenseNet, x) -> np.ndarray:
    """Class probabilities (inference mode: no dropout)."""
    x, single = _as_batch(net, x)
    probs = _forward_cache(net, x)[1][-1]
    return probs[0] if single else probs


def predict(net: DenseNet, x) -> np.ndarray:
    # argmax returns the lowest index on ties
    return np.argmax(forward(net, np.atleast_2d(x)), axis=1)


def loss_and_grads(net: DenseNet, x, y, rng: Optional[np.random.Generator] = None):
    """Mean cross-entropy and its gradients ``[dW..., db...]``."""
    x, _ = _as_batch(net, x)
    y = np.asarray(y, dtype=np.intp)
    n = x.shape[0]
    pre, post, masks = _forward_cache(net, x, rng)
    probs = post[-1]
    loss = -np.mean(np.log(np.clip(probs[np.arange(n), y], 1e-300, None)))
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gw: List[np.ndarray] = [None] * len(net.weights)
    gb: List[np.ndarray] = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        gw[i] = post[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ net.weights[i].T
        if masks[i - 1] is not None:
            delta = delta * masks[i - 1]
        # post[i] holds the dropped-out activation; recompute the clean one for the derivative
        z = pre[i - 1]
        delta = delta * _act_grad(net.activations[i - 1], z, _act(net.activations[i - 1], z))
    return float(loss), gw + gb


class _Optimizer:
    def __init__(self, cfg: OptimizerConfig, params: Sequence[np.ndarray]):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params] if cfg.name == "adam" else None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        if c.name == "sgd":
            for p, g, m in zip(params, grads, self.m):
                m *= c.momentum
                m -= c.lr * g
                p += m
            return
        b1t = 1.0 - c.beta1**self.t
        b2t = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.lr * (m / b1t) / (np.sqrt(v / b2t) + c.eps)


class EpochStats(NamedTuple):
    epoch: int
    train_acc: float
    test_acc: Optional[float]
    loss: float


def evaluate(net: DenseNet, x, y) -> float:
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("cannot evaluate on an empty set")
    return float(np.mean(predict(net, x) == y))


def _mean_loss(net: DenseNet, x: np.ndarray, y: np.ndarray) -> float:
    probs = forward(net, x)
    return float(-np.mean(np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None))))


def train(
    net: DenseNet,
    x,
    y,
    config: DenseNetConfig,
    x_test=None,
    y_test=None,
) -> Tuple[DenseNet, List[EpochStats]]:
    """Train a copy of ``net``; returns it with one EpochStats per epoch.

    The reported loss is the full training-set cross-entropy in inference
    mode after each epoch.
    """
    x, _ = _as_batch(net, x)
    y = np.asarray(y, dtype=np.intp)
    if x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise ValueError("need a non-empty training set with one label per row")
    if y.min() < 0 or y.max() >= net.n_classes:
        raise ValueError(f"labels must lie in [0, {net.n_classes})")
    if len(config.dropout) != len(net.activations):
        raise ValueError("config describes a different number of hidden layers than the network")
    net = net.copy()
    net.dropout = list(config.dropout)
    rng = np.random.default_rng(config.seed)
    opt = _Optimizer(config.optimizer, net.params())
    trace: List[EpochStats] = []
    n = x.shape[0]
    for epoch in range(1, config.epochs + 1):
        net.training = True
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_grads(net, x[idx], y[idx], rng)
            if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
                raise TrainingDiverged(f"non-finite loss/gradient at epoch {epoch}, batch starting at row {start}")
            opt.step(net.params(), grads)
        net.training = False
        if not net.all_finite():
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
        train_loss = _mean_loss(net, x, y)
        if not np.isfinite(train_loss):
            raise TrainingDiverged(f"non-finite training loss after epoch {epoch}")
        test_acc = evaluate(net, x_test, y_test) if x_test is not None else None
        trace.append(EpochStats(epoch, evaluate(net, x, y), test_acc, train_loss))
        log.debug("epoch %d loss %.5f train %.4f test %s", epoch, train_loss, trace[-1].train_acc, test_acc)
    return net, trace


def gradient_check(net: DenseNet, x, y, step: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    The relative error of a parameter is ``|a - n| / max(|a| + |n|, 1e-8)``.
    Dropout is disabled.
    """
    x, _ = _as_batch(net, x)
    y = np.atleast_1d(np.asarray(y, dtype=np.intp))
    _, grads = loss_and_grads(net, x, y)
    worst = 0.0
    for param, grad in zip(net.params(), grads):
        flat = param.reshape(-1)
        gflat = grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss_and_grads(net, x, y)[0]
            flat[j] = orig - step
            down = loss_and_grads(net, x, y)[0]
            flat[j] = orig
            num = (up - down) / (2.0 * step)
            err = abs(num - gflat[j]) / max(abs(num) + abs(gflat[j]), 1e-8)
            worst = max(worst, err)
    return worst


def save_checkpoint(net: DenseNet, path) -> None:
    """Binary layout: magic, version, layer count, dims, activation codes, f64 LE params."""
    dims = net.dims
    head = CHECKPOINT_MAGIC + struct.pack("<BI", CHECKPOINT_VERSION, len(net.weights))
    head += struct.pack(f"<{len(dims)}I", *dims)
    head += bytes(ACTIVATION_CODES[a] for a in net.activations)
    body = b"".join(
        np.ascontiguousarray(w, dtype="<f8").tobytes() + np.ascontiguousarray(b, dtype="<f8").tobytes()
        for w, b in zip(net.weights, net.biases)
    )
    Path(path).write_bytes(head + body)


def load_checkpoint(path) -> DenseNet:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a dense-net checkpoint (bad magic)")
    version, n_layers = struct.unpack_from("<BI", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 9
    dims = struct.unpack_from(f"<{n_layers + 1}I", data, off)
    off += 4 * (n_layers + 1)
    names = {v: k for k, v in ACTIVATION_CODES.items()}
    activations = [names[c] for c in data[off : off + n_layers - 1]]
    off += n_layers - 1
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=off).reshape(fan_in, fan_out)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(data):
        raise ValueError(f"checkpoint has {len(data) - off} trailing bytes")
    return DenseNet(weights, biases, activations)


def write_trace_csv(trace: Sequence[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_acc", "test_acc", "loss"])
        for row in trace:
            writer.writerow([row.epoch, f"{row.train_acc:.6f}", "" if row.test_acc is None else f"{row.test_acc:.6f}", f"{row.loss:.8f}"])
