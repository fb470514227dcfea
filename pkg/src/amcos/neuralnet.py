"""Feedforward network with Softplus hidden layers, trained by Adam.

The default topology is four hidden layers of 200 units with one or two
affine output heads (the two-head variant prices the put and the call
from a shared trunk).  The loss is the mean squared error over all
output entries, which for two heads equals the average of the head-wise
errors.  Inputs are affinely normalized to [0, 1] using bounds stored on
the network, so a saved model is self-contained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import DivergenceDetected, FormatError

__all__ = [
    "Mlp",
    "TrainConfig",
    "MetricsReport",
    "TrainResult",
    "softplus",
    "init_glorot",
    "forward",
    "grad",
    "AdamState",
    "adam_step",
    "train",
    "metrics",
    "save_weights",
    "load_weights",
]

DEFAULT_HIDDEN = (200, 200, 200, 200)

_WEIGHTS_VERSION = 1


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + e^x) with an overflow-safe branch for x > 30."""
    x = np.asarray(x, dtype=float)
    out = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class Mlp:
    """Weights, biases and input-normalization bounds of one network."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_low: np.ndarray | None = None
    input_high: np.ndarray | None = None

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    @property
    def n_heads(self) -> int:
        return self.weights[-1].shape[1]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        if self.input_low is None:
            return x
        return (x - self.input_low) / (self.input_high - self.input_low)


def init_glorot(widths: tuple[int, ...], seed: int) -> Mlp:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError("widths must list at least input and output sizes, all positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights=weights, biases=biases)


def _forward_cached(net: Mlp, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Pre-activations and activations per layer (activations[0] is the input)."""
    zs: list[np.ndarray] = []
    acts: list[np.ndarray] = [net.normalize(x)]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w + b
        zs.append(z)
        acts.append(z if i == last else softplus(z))
    return zs, acts


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Network output for a single sample (1-D) or a batch (2-D)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    _, acts = _forward_cached(net, np.atleast_2d(x))
    out = acts[-1]
    return out[0] if single else out


def grad(net: Mlp, batch_x: np.ndarray, batch_y: np.ndarray) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Loss and its gradients w.r.t. every weight matrix and bias vector.

    The loss is the squared error averaged over all output entries
    (batch rows times heads).
    """
    batch_x = np.atleast_2d(np.asarray(batch_x, dtype=float))
    batch_y = np.asarray(batch_y, dtype=float)
    if batch_y.ndim == 1:
        batch_y = batch_y[:, None]
    if batch_x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    zs, acts = _forward_cached(net, batch_x)
    resid = acts[-1] - batch_y
    loss = float(np.mean(resid**2))

    d_weights = [np.empty_like(w) for w in net.weights]
    d_biases = [np.empty_like(b) for b in net.biases]
    delta = 2.0 * resid / resid.size
    for i in range(len(net.weights) - 1, -1, -1):
        d_weights[i] = acts[i].T @ delta
        d_biases[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * _sigmoid(zs[i - 1])
    return loss, d_weights, d_biases


@dataclass
class AdamState:
    """First/second moment accumulators; step count drives bias correction."""

    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: Mlp) -> "AdamState":
        return cls(
            m_w=[np.zeros_like(w) for w in net.weights],
            v_w=[np.zeros_like(w) for w in net.weights],
            m_b=[np.zeros_like(b) for b in net.biases],
            v_b=[np.zeros_like(b) for b in net.biases],
        )


def adam_step(state: AdamState, net: Mlp, d_weights: list[np.ndarray], d_biases: list[np.ndarray], lr: float) -> None:
    """One Adam update of ``net`` in place (bias-corrected moments)."""
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for i in range(len(net.weights)):
        for params, g, m, v in (
            (net.weights[i], d_weights[i], state.m_w[i], state.v_w[i]),
            (net.biases[i], d_biases[i], state.m_b[i], state.v_b[i]),
        ):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)


@dataclass(frozen=True)
class MetricsReport:
    """Per-head evaluation metrics; MAPE is None when a true value is zero."""

    mse: tuple[float, ...]
    mae: tuple[float, ...]
    mape: tuple[float | None, ...]
    r2: tuple[float, ...]


def metrics(y: np.ndarray, yhat: np.ndarray) -> MetricsReport:
    """MSE, MAE, MAPE and R^2 per output head."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if yhat.ndim == 1:
        yhat = yhat[:, None]
    if y.shape != yhat.shape or y.shape[0] < 1:
        raise ValueError("y and yhat must have equal, non-empty shapes")
    mse, mae, mape, r2 = [], [], [], []
    for h in range(y.shape[1]):
        err = yhat[:, h] - y[:, h]
        mse.append(float(np.mean(err**2)))
        mae.append(float(np.mean(np.abs(err))))
        mape.append(None if np.any(y[:, h] == 0.0) else float(np.mean(np.abs(err) / y[:, h])))
        ss_tot = float(np.sum((y[:, h] - y[:, h].mean()) ** 2))
        ss_res = float(np.sum(err**2))
        r2.append(1.0 - ss_res / ss_tot if ss_tot > 0.0 else (1.0 if ss_res == 0.0 else -np.inf))
    return MetricsReport(mse=tuple(mse), mae=tuple(mae), mape=tuple(mape), r2=tuple(r2))


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch Adam settings; the learning rate is halved every
    ``halving_period`` epochs."""

    epochs: int = 800
    batch_size: int = 1024
    learning_rate: float = 1e-3
    halving_period: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.halving_period < 1 or self.epochs < 1:
            raise ValueError("batch_size, halving_period and epochs must be positive")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * 0.5 ** (epoch // self.halving_period)


@dataclass
class TrainResult:
    net: Mlp
    history: list[dict]
    test_metrics: MetricsReport


def train(net: Mlp, data: Dataset, cfg: TrainConfig, log_every: int = 0) -> TrainResult:
    """Mini-batch Adam over the train split, tracking validation metrics.

    Rows must be split-tagged.  Raises ``DivergenceDetected`` when the
    loss stops being finite.  The returned history has one record per
    epoch; the final report evaluates the test split.
    """
    x_train, y_train = data.rows("train")
    x_val, y_val = data.rows("val")
    x_test, y_test = data.rows("test")
    if len(x_train) == 0 or len(x_val) == 0 or len(x_test) == 0:
        raise ValueError("dataset must be split-tagged before training")

    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_net(net)
    history: list[dict] = []
    n = x_train.shape[0]
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, dw, db = grad(net, x_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise DivergenceDetected(f"training loss became {loss} at epoch {epoch}")
            adam_step(state, net, dw, db, lr)
            epoch_loss += loss
            n_batches += 1
        val_report = metrics(y_val, forward(net, x_val))
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": epoch_loss / n_batches,
            "val_mse": float(np.mean(val_report.mse)),
            "val_mae": float(np.mean(val_report.mae)),
        }
        history.append(record)
        if log_every and (epoch + 1) % log_every == 0:
            print(
                f"epoch {epoch + 1}/{cfg.epochs}  lr {lr:.2e}  "
                f"train {record['train_loss']:.3e}  val {record['val_mse']:.3e}",
                flush=True,
            )
    return TrainResult(net=net, history=history, test_metrics=metrics(y_test, forward(net, x_test)))


def save_weights(net: Mlp, path: str) -> None:
    """Write a versioned .npz archive with shapes, weights and normalization."""
    payload = {
        "header": np.frombuffer(
            json.dumps(
                {
                    "format": "amcos-mlp",
                    "version": _WEIGHTS_VERSION,
                    "widths": list(net.widths),
                    "normalized": net.input_low is not None,
                }
            ).encode(),
            dtype=np.uint8,
        )
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        payload[f"w{i}"] = w
        payload[f"b{i}"] = b
    if net.input_low is not None:
        payload["input_low"] = net.input_low
        payload["input_high"] = net.input_high
    np.savez(path, **payload)


def load_weights(path: str) -> Mlp:
    """Read a network written by :func:`save_weights`."""
    with np.load(path) as archive:
        if "header" not in archive:
            raise FormatError("missing header block")
        try:
            header = json.loads(bytes(archive["header"]).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"corrupted header: {exc}") from exc
        if header.get("format") != "amcos-mlp":
            raise FormatError(f"unexpected format tag {header.get('format')!r}")
        if header.get("version") != _WEIGHTS_VERSION:
            raise FormatError(
                f"weight file version {header.get('version')} not supported "
                f"(expected {_WEIGHTS_VERSION})"
            )
        widths = header["widths"]
        weights, biases = [], []
        for i in range(len(widths) - 1):
            if f"w{i}" not in archive or f"b{i}" not in archive:
                raise FormatError(f"missing arrays for layer {i}")
            w = archive[f"w{i}"]
            b = archive[f"b{i}"]
            if w.shape != (widths[i], widths[i + 1]) or b.shape != (widths[i + 1],):
                raise FormatError(f"layer {i} shape mismatch")
            weights.append(w)
            biases.append(b)
        low = archive["input_low"] if header.get("normalized") else None
        high = archive["input_high"] if header.get("normalized") else None
    return Mlp(weights=weights, biases=biases, input_low=low, input_high=high)
