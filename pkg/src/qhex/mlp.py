"""Fully connected regressor with hand-written backpropagation.

Training runs a fixed sequence of optimizer phases (SGD with momentum, then
Adam, then RMSprop by default) on one mean-squared-error objective. Parameters
carry over between phases; optimizer state does not.
"""
import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .dataset import N_INPUTS, shuffle_batches

log = logging.getLogger(__name__)

MODEL_MAGIC = b"QHXM"
MODEL_VERSION = 1
DEFAULT_LAYERS = (N_INPUTS, 64, 32, 1)
LOG_HEADER = ("phase", "epoch", "iter", "train_loss", "train_rmse", "val_loss", "val_rmse")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MLPParams:
    """Weights ``W[k]`` of shape ``(fan_in, fan_out)`` and biases ``b[k]``.

    Hidden layers use a rectifier, the output layer is linear.
    """

    weights: list
    biases: list

    def __post_init__(self):
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight/bias shapes {w.shape}/{b.shape} disagree")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k}: input dim {w.shape[0]} != previous output dim")

    @property
    def layer_dims(self):
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def arrays(self):
        """Parameters in optimizer order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_params(layer_dims=DEFAULT_LAYERS, seed=0):
    """Glorot-uniform weights, zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid layer dims {layer_dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def forward(p, x):
    """Predictions for a batch ``x`` of shape ``(B, fan_in)`` (or one row).

    Returns ``(pred, cache)``; ``pred`` has shape ``(B,)`` for a single
    output unit.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = np.atleast_2d(x)
    cache = [a]
    last = len(p.weights) - 1
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = a @ w + b
        a = z if k == last else np.maximum(z, 0.0)
        cache.append(a)
    out = a[:, 0] if a.shape[1] == 1 else a
    return (out[0] if single else out), cache


def predict(p, x, chunk=65536):
    x = np.asarray(x, dtype=float)
    return np.concatenate([forward(p, x[i:i + chunk])[0] for i in range(0, len(x), chunk)]) \
        if len(x) else np.empty(0)


def mse_loss(preds, targets):
    """Mean over samples of the squared error."""
    preds = np.asarray(preds, dtype=float).ravel()
    targets = np.asarray(targets, dtype=float).ravel()
    if len(preds) != len(targets):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(targets)} targets")
    if len(preds) == 0:
        raise ValueError("empty batch")
    return float(np.mean((preds - targets) ** 2))


def rmse(preds, targets):
    return float(np.sqrt(mse_loss(preds, targets)))


def mse_grad(preds, targets):
    preds = np.asarray(preds, dtype=float)
    return 2.0 * (preds - np.asarray(targets, dtype=float)) / len(preds)


def backward(p, cache, d_out):
    """Gradients of the loss w.r.t. every weight and bias.

    ``d_out`` is dLoss/dPrediction per sample. Returns a list in
    :meth:`MLPParams.arrays` order.
    """
    delta = np.asarray(d_out, dtype=float).reshape(len(cache[0]), -1)
    grads = [None] * (2 * len(p.weights))
    for k in range(len(p.weights) - 1, -1, -1):
        a_in = cache[k]
        grads[2 * k] = a_in.T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k:
            delta = (delta @ p.weights[k].T) * (cache[k] > 0)
    return grads


@dataclass
class OptState:
    """Per-parameter buffers for one optimizer phase."""

    kind: str
    buffers: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def fresh(cls, kind, params):
        shapes = [np.zeros_like(a) for a in params]
        if kind == "sgdm":
            buffers = {"velocity": shapes}
        elif kind == "adam":
            buffers = {"m": shapes, "v": [np.zeros_like(a) for a in params]}
        elif kind == "rmsprop":
            buffers = {"s": shapes}
        else:
            raise ValueError(f"unknown optimizer {kind!r}")
        return cls(kind, buffers, 0)

    def is_zero(self):
        return self.step == 0 and all(not np.any(b) for bufs in self.buffers.values() for b in bufs)


def sgdm_step(params, grads, state, lr, momentum=0.9):
    """``v <- mu v + g; p <- p - lr v`` (in place)."""
    for p, g, v in zip(params, grads, state.buffers["velocity"]):
        v *= momentum
        v += g
        p -= lr * v
    state.step += 1
    return params, state


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update (in place)."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.buffers["m"], state.buffers["v"]):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def rmsprop_step(params, grads, state, lr, rho=0.9, eps=1e-8):
    """``s <- rho s + (1 - rho) g^2; p <- p - lr g / (sqrt(s) + eps)``."""
    for p, g, s in zip(params, grads, state.buffers["s"]):
        s *= rho
        s += (1.0 - rho) * g * g
        p -= lr * g / (np.sqrt(s) + eps)
    state.step += 1
    return params, state


@dataclass
class Phase:
    optimizer: str
    lr: float
    epochs: int = 10
    batch_size: int = 256

    def __post_init__(self):
        if self.optimizer not in ("sgdm", "adam", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr > 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError(f"invalid phase {self}")


def default_phases():
    return [Phase("sgdm", 1e-2), Phase("adam", 1e-3), Phase("rmsprop", 1e-4)]


@dataclass
class TrainConfig:
    """Three-phase schedule and optimizer constants.

    ``val_subset`` caps the validation samples scored every iteration; a
    fixed, seeded subset keeps the per-iteration log affordable.
    """

    phases: list = field(default_factory=default_phases)
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    rho: float = 0.9
    rms_eps: float = 1e-8
    seed: int = 0
    layer_dims: tuple = DEFAULT_LAYERS
    val_subset: int = 4096
    divergence_factor: float = 10.0

    def __post_init__(self):
        self.phases = [ph if isinstance(ph, Phase) else Phase(**ph) for ph in self.phases]
        if not self.phases:
            raise ValueError("need at least one training phase")
        self.layer_dims = tuple(self.layer_dims)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, *row):
        self.records.append(tuple(row))

    def __len__(self):
        return len(self.records)

    def column(self, name):
        k = LOG_HEADER.index(name)
        return np.array([r[k] for r in self.records])

    def to_csv(self):
        lines = [",".join(LOG_HEADER)]
        for phase, epoch, it, *vals in self.records:
            lines.append(f"{phase},{epoch},{it}," + ",".join(f"{v:.9e}" for v in vals))
        return "\n".join(lines) + "\n"

    def save(self, path):
        _atomic_write(path, self.to_csv().encode("utf-8"))


def _subset(n, k, seed):
    if n <= k:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=k, replace=False))


def train(p, split, cfg=None, on_phase_start=None):
    """Run the configured optimizer phases on ``split.train``.

    ``p`` is copied, never modified. Every iteration appends one log record
    with the batch's train loss/RMSE and the loss/RMSE on a fixed validation
    subset.

    Raises
    ------
    TrainingDiverged
        If a batch loss is non-finite or exceeds ``divergence_factor`` times
        the initial training loss.
    """
    cfg = cfg or TrainConfig()
    train_set, val_set = split.train, split.val
    if len(train_set) == 0:
        raise ValueError("empty training split")
    if p.layer_dims[0] != train_set.inputs.shape[1]:
        raise ValueError(f"model expects {p.layer_dims[0]} inputs, data has {train_set.inputs.shape[1]}")
    p = p.copy()
    params = p.arrays()
    x_tr, y_tr = train_set.inputs, train_set.targets
    have_val = val_set is not None and len(val_set) > 0
    if have_val:
        vi = _subset(len(val_set), cfg.val_subset, cfg.seed + 1)
        x_val, y_val = val_set.inputs[vi], val_set.targets[vi]
    ref = _subset(len(train_set), cfg.val_subset, cfg.seed + 2)
    initial = mse_loss(predict(p, x_tr[ref]), y_tr[ref])
    limit = cfg.divergence_factor * max(initial, 1e-12)
    tlog = TrainLog()
    for k, ph in enumerate(cfg.phases):
        state = OptState.fresh(ph.optimizer, params)
        if on_phase_start is not None:
            on_phase_start(k, ph, state)
        it = 0
        for epoch in range(ph.epochs):
            seed = cfg.seed + 1000 * (k + 1) + epoch
            for batch in shuffle_batches(len(train_set), ph.batch_size, seed):
                pred, cache = forward(p, x_tr[batch])
                loss = mse_loss(pred, y_tr[batch])
                if not np.isfinite(loss) or loss > limit:
                    raise TrainingDiverged(f"diverged in phase {k + 1} ({ph.optimizer}) at iteration {it + 1}: "
                                           f"loss {loss:.6g} vs initial {initial:.6g}")
                grads = backward(p, cache, mse_grad(pred, y_tr[batch]))
                if ph.optimizer == "sgdm":
                    sgdm_step(params, grads, state, ph.lr, cfg.momentum)
                elif ph.optimizer == "adam":
                    adam_step(params, grads, state, ph.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
                else:
                    rmsprop_step(params, grads, state, ph.lr, cfg.rho, cfg.rms_eps)
                it += 1
                if have_val:
                    vloss = mse_loss(predict(p, x_val), y_val)
                else:
                    vloss = float("nan")
                tlog.append(k + 1, epoch + 1, it, loss, np.sqrt(loss), vloss, np.sqrt(vloss))
        log.info("phase %d (%s) done: last train loss %.3e", k + 1, ph.optimizer,
                 tlog.records[-1][3] if tlog.records else float("nan"))
    return p, tlog


def _atomic_write(path, payload):
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def model_bytes(p):
    dims = p.layer_dims
    parts = [struct.pack("<4sBI", MODEL_MAGIC, MODEL_VERSION, len(dims)),
             struct.pack(f"<{len(dims)}I", *dims)]
    for w, b in zip(p.weights, p.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def save_model(p, path):
    """``QHXM`` file: version byte, u32 dim count, u32 dims, then per layer
    the ``(fan_in, fan_out)`` weights row-major and the biases, all f64 LE."""
    _atomic_write(path, model_bytes(p))


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    head = struct.Struct("<4sBI")
    if len(raw) < head.size:
        raise ValueError(f"{path}: truncated model header")
    magic, version, n = head.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: model version {version} unsupported (expected {MODEL_VERSION})")
    off = head.size
    dims = struct.unpack_from(f"<{n}I", raw, off)
    off += 4 * n
    expected = off + 8 * sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} does not match dims {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(raw, "<f8", fan_in * fan_out, off).reshape(fan_in, fan_out).copy()
        off += 8 * fan_in * fan_out
        b = np.frombuffer(raw, "<f8", fan_out, off).copy()
        off += 8 * fan_out
        weights.append(w)
        biases.append(b)
    return MLPParams(weights, biases)
