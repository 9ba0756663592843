"""Two-layer bidirectional LSTM regressor in numpy, trained with Adam.

Layout per sample: a window of ``w`` days with ``D`` input features. Each
layer runs a forward and a backward LSTM over the window and concatenates
their hidden states per step. Dropout follows each layer. The final forward
state and final backward state of layer 2 feed a tanh dense layer and a
linear output.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from ._kernels import row_products
from .ingest import AlignedFrame

log = logging.getLogger(__name__)

GATES = ("input", "forget", "cell", "output")
LSTM_BLOCKS = ("l1f", "l1b", "l2f", "l2b")
CHECKPOINT_VERSION = 1


class NetError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class ModelConfig:
    hidden: int = 32
    fc: int = 16
    dropout: float = 0.1
    learning_rate: float = 1e-3
    batch: int = 32
    window: int = 3
    epochs: int = 200
    patience: int | None = 20
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1 or self.fc < 1:
            raise NetError("hidden and fc must be positive")
        if self.fc > self.hidden:
            raise NetError(f"fc ({self.fc}) must not exceed hidden ({self.hidden})")
        if not 0.0 <= self.dropout <= 0.5:
            raise NetError(f"dropout {self.dropout} outside [0, 0.5]")
        if self.learning_rate < 0:
            raise NetError("learning rate must be non-negative")
        if self.window < 1 or self.batch < 1 or self.epochs < 0:
            raise NetError("window and batch must be positive, epochs non-negative")

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})


def param_shapes(n_inputs: int, hidden: int, fc: int) -> dict:
    H = hidden
    return {
        "l1f_W": (4 * H, n_inputs + H), "l1f_b": (4 * H,),
        "l1b_W": (4 * H, n_inputs + H), "l1b_b": (4 * H,),
        "l2f_W": (4 * H, 3 * H), "l2f_b": (4 * H,),
        "l2b_W": (4 * H, 3 * H), "l2b_b": (4 * H,),
        "fc_W": (fc, 2 * H), "fc_b": (fc,),
        "out_W": (1, fc), "out_b": (1,),
    }


def init_params(n_inputs: int, config: ModelConfig, rng: np.random.Generator | None = None) -> dict:
    """Uniform(-1/sqrt(hidden), 1/sqrt(hidden)) recurrent weights, forget bias 1.0;
    dense layers uniform with their fan-in."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    H = config.hidden
    params = {}
    for name, shape in param_shapes(n_inputs, H, config.fc).items():
        if name.startswith("l"):
            k = 1.0 / np.sqrt(H)
        else:
            fan_in = 2 * H if name.startswith("fc") else config.fc
            k = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-k, k, size=shape)
    for block in LSTM_BLOCKS:
        params[f"{block}_b"][H:2 * H] = 1.0
    return params


@dataclass
class Cache:
    X: np.ndarray
    steps: dict
    masks: tuple
    out1: np.ndarray
    hfin: np.ndarray
    hd: np.ndarray
    afc: np.ndarray
    yhat: np.ndarray


def _rows(x, W):
    """``x @ W.T`` with a fixed summation order, so a row's result never
    depends on the rest of the batch or on zero-padded inputs."""
    return row_products(np.ascontiguousarray(x), np.ascontiguousarray(W.T))


def _run_direction(x, W, b, reverse):
    """One LSTM direction over ``x`` (T, B, Din); hidden states in time order."""
    T, B, _ = x.shape
    H = W.shape[0] // 4
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((T, B, H))
    steps = []
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        xh = np.concatenate([x[t], h], axis=1)
        a = _rows(xh, W) + b
        gates = expit(a)
        g = np.tanh(a[:, 2 * H:3 * H])
        i, f, o = gates[:, :H], gates[:, H:2 * H], gates[:, 3 * H:]
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[t] = h
        steps.append((t, xh, i, f, g, o, c_prev, tc))
    return hs, steps


def _backprop_direction(dhs, steps, W):
    H = W.shape[0] // 4
    d_in = W.shape[1] - H
    T, B, _ = dhs.shape
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[0])
    dx = np.zeros((T, B, d_in))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    da = np.empty((B, 4 * H))
    for t, xh, i, f, g, o, c_prev, tc in reversed(steps):
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        da[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dW += da.T @ xh
        db += da.sum(axis=0)
        dxh = da @ W
        dx[t] = dxh[:, :d_in]
        dh_next = dxh[:, d_in:]
    return dx, dW, db


def _locate_nonfinite(steps_by_block):
    for block, steps in steps_by_block.items():
        for t, _xh, i, f, g, o, c_prev, tc in steps:
            for gate, arr in zip(GATES, (i, f, g, o)):
                if not np.isfinite(arr).all():
                    return f"{block} step {t} gate {gate}"
            if not np.isfinite(tc).all():
                return f"{block} step {t} cell state"
    return "dense head"


def _mask(rng, shape, rate):
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward(params: dict, config: ModelConfig, X, training: bool = False,
            rng: np.random.Generator | None = None):
    """Predict for a window ``(w, D)`` or a batch ``(B, w, D)``.

    Returns ``(yhat, cache)``; ``cache`` is only built in training mode, where
    inverted dropout is applied using ``rng``.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[2] + config.hidden != params["l1f_W"].shape[1]:
        raise NetError(f"input shape {X.shape} does not match the parameters")
    T = X.shape[1]
    x = X.transpose(1, 0, 2)
    use_dropout = training and config.dropout > 0
    if use_dropout and rng is None:
        raise NetError("training-mode dropout needs an rng")

    h1f, s1f = _run_direction(x, params["l1f_W"], params["l1f_b"], reverse=False)
    h1b, s1b = _run_direction(x, params["l1b_W"], params["l1b_b"], reverse=True)
    out1 = np.concatenate([h1f, h1b], axis=2)
    m1 = _mask(rng, out1.shape, config.dropout) if use_dropout else None
    in2 = out1 * m1 if m1 is not None else out1

    h2f, s2f = _run_direction(in2, params["l2f_W"], params["l2f_b"], reverse=False)
    h2b, s2b = _run_direction(in2, params["l2b_W"], params["l2b_b"], reverse=True)
    hfin = np.concatenate([h2f[T - 1], h2b[0]], axis=1)
    m2 = _mask(rng, hfin.shape, config.dropout) if use_dropout else None
    hd = hfin * m2 if m2 is not None else hfin

    afc = np.tanh(_rows(hd, params["fc_W"]) + params["fc_b"])
    yhat = (_rows(afc, params["out_W"]) + params["out_b"])[:, 0]
    if not np.isfinite(yhat).all():
        where = _locate_nonfinite({"l1f": s1f, "l1b": s1b, "l2f": s2f, "l2b": s2b})
        raise NetError(f"non-finite activation at {where}")
    cache = None
    if training:
        cache = Cache(X, {"l1f": s1f, "l1b": s1b, "l2f": s2f, "l2b": s2b}, (m1, m2), out1, hfin, hd, afc, yhat)
    if single:
        return float(yhat[0]), cache
    return yhat, cache


def backward(params: dict, config: ModelConfig, cache: Cache | None, target) -> dict:
    """Gradient of the batch-mean squared error with respect to every parameter."""
    if cache is None:
        raise NetError("backward needs the cache of a training-mode forward pass")
    H = config.hidden
    y = np.atleast_1d(np.asarray(target, dtype=np.float64))
    B, T = cache.X.shape[0], cache.X.shape[1]
    m1, m2 = cache.masks
    grads = {}

    dy = 2.0 * (cache.yhat - y) / B
    grads["out_W"] = dy[None, :] @ cache.afc
    grads["out_b"] = np.array([dy.sum()])
    dzfc = (dy[:, None] @ params["out_W"]) * (1.0 - cache.afc * cache.afc)
    grads["fc_W"] = dzfc.T @ cache.hd
    grads["fc_b"] = dzfc.sum(axis=0)
    dhfin = dzfc @ params["fc_W"]
    if m2 is not None:
        dhfin = dhfin * m2

    dh2f = np.zeros((T, B, H))
    dh2b = np.zeros((T, B, H))
    dh2f[T - 1] = dhfin[:, :H]
    dh2b[0] = dhfin[:, H:]
    dx2f, grads["l2f_W"], grads["l2f_b"] = _backprop_direction(dh2f, cache.steps["l2f"], params["l2f_W"])
    dx2b, grads["l2b_W"], grads["l2b_b"] = _backprop_direction(dh2b, cache.steps["l2b"], params["l2b_W"])
    dout1 = dx2f + dx2b
    if m1 is not None:
        dout1 = dout1 * m1
    _, grads["l1f_W"], grads["l1f_b"] = _backprop_direction(
        np.ascontiguousarray(dout1[:, :, :H]), cache.steps["l1f"], params["l1f_W"])
    _, grads["l1b_W"], grads["l1b_b"] = _backprop_direction(
        np.ascontiguousarray(dout1[:, :, H:]), cache.steps["l1b"], params["l1b_W"])
    return {k: grads[k] for k in params}


def mse_loss(params, config, X, y, training=False, rng=None) -> float:
    yhat, _ = forward(params, config, X, training, rng)
    return float(np.mean((np.asarray(yhat) - np.asarray(y)) ** 2))


@dataclass
class WindowSample:
    input: np.ndarray  # features x w, days t-w+1..t
    target: float  # target on day t+1
    day: int  # index of day t in the frame


def make_windows(frame: AlignedFrame, target_name: str, w: int,
                 inputs: Sequence[str] | None = None) -> list[WindowSample]:
    """One sample per day t with a full window behind it and a next day ahead."""
    names = list(inputs) if inputs is not None else [f for f in frame.features if f != target_name]
    D = frame.n_days
    if w < 1 or w >= D:
        raise NetError(f"window {w} must be in [1, {D - 1}] for a {D}-day frame")
    M = frame.select(names).values
    y = frame.row(target_name)
    return [WindowSample(M[:, t - w + 1:t + 1].copy(), float(y[t + 1]), t) for t in range(w - 1, D - 1)]


def stack_windows(samples: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        return np.zeros((0, 0, 0)), np.zeros(0)
    X = np.stack([s.input.T for s in samples])
    y = np.array([s.target for s in samples])
    return X, y


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainResult:
    params: dict
    history: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss
    best_epoch: int | None = None
    stopped_early: bool = False


def predict_normalized(params, config, X, chunk: int = 512) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        return np.zeros(0)
    return np.concatenate([forward(params, config, X[i:i + chunk])[0] for i in range(0, X.shape[0], chunk)])


def train(samples: Sequence[WindowSample], config: ModelConfig,
          val_samples: Sequence[WindowSample] | None = None,
          on_epoch: Callable[[int, float, float | None], None] | None = None) -> TrainResult:
    """Fit a fresh network on ``samples`` (already chronologically split).

    Mini-batches are reshuffled each epoch. With ``val_samples`` early
    stopping watches validation MSE and the best epoch's weights are
    returned; otherwise it watches the training loss. ``on_epoch`` may raise
    to abort (used for pruning).
    """
    X, y = stack_windows(samples)
    n = len(samples)
    if n == 0:
        raise NetError("no training samples")
    if config.batch > n:
        raise NetError(f"batch {config.batch} exceeds the {n} training samples")
    init_ss, shuffle_ss, drop_ss = np.random.SeedSequence(config.seed).spawn(3)
    params = init_params(X.shape[2], config, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)
    Xv, yv = stack_windows(val_samples) if val_samples else (None, None)

    opt = Adam(params, config.learning_rate)
    result = TrainResult(params)
    best = np.inf
    best_params = None
    wait = 0
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        squared = []
        for start in range(0, n, config.batch):
            idx = perm[start:start + config.batch]
            yhat, cache = forward(params, config, X[idx], training=True, rng=drop_rng)
            squared.extend(((yhat - y[idx]) ** 2).tolist())
            opt.step(params, backward(params, config, cache, y[idx]))
        train_loss = math.fsum(squared) / n  # exact sum: independent of the shuffle
        if not np.isfinite(train_loss):
            raise TrainingDiverged(epoch)
        val_loss = None
        if Xv is not None:
            val_loss = float(np.mean((predict_normalized(params, config, Xv) - yv) ** 2))
            if not np.isfinite(val_loss):
                raise TrainingDiverged(epoch)
        result.history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)
        monitor = val_loss if val_loss is not None else train_loss
        if monitor < best:
            best = monitor
            result.best_epoch = epoch
            wait = 0
            if Xv is not None:
                best_params = copy.deepcopy(params)
        else:
            wait += 1
            if config.patience is not None and wait >= config.patience:
                result.stopped_early = True
                break
    if best_params is not None:
        params = best_params
    result.params = params
    return result


def predict_series(params, config, samples: Sequence[WindowSample], target_bounds) -> np.ndarray:
    """Predictions for ``samples`` mapped back through the target's min-max bounds."""
    if target_bounds is None:
        raise NetError("target normalisation bounds are required to de-normalise predictions")
    if len(samples) == 0:
        return np.zeros(0)
    X, _ = stack_windows(samples)
    lo, hi = target_bounds
    return predict_normalized(params, config, X) * (hi - lo) + lo


def checkpoint(params, config, inputs: Sequence[str], target: str, target_bounds) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "inputs": list(inputs),
        "target": target,
        "target_bounds": [float(target_bounds[0]), float(target_bounds[1])],
        "params": {k: v.tolist() for k, v in params.items()},
    }


def load_checkpoint(doc: dict):
    if doc.get("version") != CHECKPOINT_VERSION:
        raise NetError(f"unsupported checkpoint version {doc.get('version')}")
    config = ModelConfig(**doc["config"])
    params = {k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()}
    return params, config, doc["inputs"], doc["target"], tuple(doc["target_bounds"])
