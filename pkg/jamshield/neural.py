"""Numpy neural learners: dense ReLU/softmax networks and a stacked LSTM.

Both expose the same shape of API: init, forward returning a cache,
backward returning gradients in parameter order, and a loss. Training is
mini-batch Adam with early stopping on the epoch loss.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .config import (
    ADAM_BETAS,
    ADAM_EPSILON,
    EARLY_STOP_DELTA,
    EARLY_STOP_PATIENCE,
    LSTM_FORGET_BIAS,
)
from .errors import ConfigError, SchemaError

logger = logging.getLogger(__name__)


def glorot_uniform(fan_in: int, fan_out: int, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def one_hot(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    Y = np.zeros((len(labels), 2))
    Y[np.arange(len(labels)), labels] = 1.0
    return Y


def cross_entropy(logits: np.ndarray, Y: np.ndarray) -> float:
    return float(-np.mean(np.sum(Y * log_softmax(logits, axis=1), axis=1)))


# Dense networks

@dataclass
class DenseParams:
    weights: List[np.ndarray] = field(repr=False)
    biases: List[np.ndarray] = field(repr=False)
    dropout: float = 0.0

    @property
    def sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def width(self) -> int:
        return self.weights[0].shape[0]

    def parameters(self) -> List[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out


def init_dense(width: int, hidden: Sequence[int], rng: np.random.Generator, dropout: float = 0.0) -> DenseParams:
    if not 0.0 <= dropout < 1.0:
        raise ConfigError(f"Dropout must be in [0, 1), got {dropout}")
    sizes = [width] + list(hidden) + [2]
    weights = [glorot_uniform(a, b, (a, b), rng) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return DenseParams(weights=weights, biases=biases, dropout=dropout)


def dense_forward(params: DenseParams, X: np.ndarray,
                  rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, dict]:
    """Logits and the activations needed by backward. Dropout is applied only when rng is given."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] != params.width:
        raise SchemaError(f"Network expects {params.width} features, got {X.shape[1]}")

    activations = [X]
    masks: List[Optional[np.ndarray]] = []
    h = X
    last = len(params.weights) - 1
    for layer, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        if layer == last:
            return z, {"activations": activations, "masks": masks}
        h = np.maximum(z, 0.0)
        mask = None
        if rng is not None and params.dropout > 0:
            keep = 1.0 - params.dropout
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        masks.append(mask)
        activations.append(h)
    raise AssertionError("unreachable")


def dense_backward(params: DenseParams, cache: dict, logits: np.ndarray, Y: np.ndarray) -> List[np.ndarray]:
    """Gradients of the mean cross-entropy, ordered like params.parameters()."""
    activations = cache["activations"]
    masks = cache["masks"]
    delta = (softmax(logits, axis=1) - Y) / Y.shape[0]

    grads: List[np.ndarray] = []
    for layer in range(len(params.weights) - 1, -1, -1):
        h = activations[layer]
        grads.append(delta.sum(axis=0))
        grads.append(h.T @ delta)
        if layer == 0:
            break
        delta = delta @ params.weights[layer].T
        if masks[layer - 1] is not None:
            delta = delta * masks[layer - 1]
        delta = delta * (h > 0)
    grads.reverse()
    return grads


def dense_hidden(params: DenseParams, X: np.ndarray) -> np.ndarray:
    """Last hidden-layer activations (inference mode)."""
    h = np.asarray(X, dtype=float)
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
    return h


def dense_predict_proba(params: DenseParams, X: np.ndarray) -> np.ndarray:
    logits, _ = dense_forward(params, X)
    return softmax(logits, axis=1)


def dense_loss_and_grads(params: DenseParams, X: np.ndarray, Y: np.ndarray,
                         rng: Optional[np.random.Generator] = None) -> Tuple[float, List[np.ndarray]]:
    logits, cache = dense_forward(params, X, rng)
    return cross_entropy(logits, Y), dense_backward(params, cache, logits, Y)


# LSTM

@dataclass
class LstmParams:
    """Stacked LSTM; layer l has W[l] of shape (input + hidden, 4 * hidden), gate order i, f, o, g."""

    W: List[np.ndarray] = field(repr=False)
    b: List[np.ndarray] = field(repr=False)
    Wy: np.ndarray = field(repr=False)
    by: np.ndarray = field(repr=False)

    @property
    def hidden(self) -> int:
        return self.Wy.shape[0]

    @property
    def width(self) -> int:
        return self.W[0].shape[0] - self.hidden

    @property
    def layers(self) -> int:
        return len(self.W)

    def parameters(self) -> List[np.ndarray]:
        out = []
        for W, b in zip(self.W, self.b):
            out.extend([W, b])
        out.extend([self.Wy, self.by])
        return out


def init_lstm(width: int, hidden: int, layers: int, rng: np.random.Generator) -> LstmParams:
    if layers < 1 or hidden < 1:
        raise ConfigError(f"LSTM needs layers >= 1 and hidden >= 1, got {layers}, {hidden}")
    W, b = [], []
    for layer in range(layers):
        fan_in = (width if layer == 0 else hidden) + hidden
        W.append(glorot_uniform(fan_in, 4 * hidden, (fan_in, 4 * hidden), rng))
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = LSTM_FORGET_BIAS
        b.append(bias)
    Wy = glorot_uniform(hidden, 2, (hidden, 2), rng)
    return LstmParams(W=W, b=b, Wy=Wy, by=np.zeros(2))


def lstm_forward(params: LstmParams, X: np.ndarray) -> Tuple[np.ndarray, dict]:
    """X is (batch, steps, width); logits come from the top layer's final hidden state."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 3 or X.shape[2] != params.width:
        raise SchemaError(f"LSTM expects (batch, steps, {params.width}) windows, got shape {X.shape}")

    B, steps, _ = X.shape
    H = params.hidden
    layer_input = [X[:, t, :] for t in range(steps)]
    caches = []
    for W, b in zip(params.W, params.b):
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        steps_cache = []
        outputs = []
        for t in range(steps):
            xh = np.concatenate([layer_input[t], h], axis=1)
            z = xh @ W + b
            i = expit(z[:, :H])
            f = expit(z[:, H:2 * H])
            o = expit(z[:, 2 * H:3 * H])
            g = np.tanh(z[:, 3 * H:])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            steps_cache.append((xh, i, f, o, g, c_prev, tc))
            outputs.append(h)
        caches.append(steps_cache)
        layer_input = outputs

    h_last = layer_input[-1]
    logits = h_last @ params.Wy + params.by
    return logits, {"caches": caches, "h_last": h_last}


def lstm_hidden(params: LstmParams, X: np.ndarray) -> np.ndarray:
    """Top-layer hidden state after the last step."""
    _, cache = lstm_forward(params, X)
    return cache["h_last"]


def lstm_backward(params: LstmParams, cache: dict, logits: np.ndarray, Y: np.ndarray) -> List[np.ndarray]:
    """Backpropagation through time; gradients ordered like params.parameters()."""
    H = params.hidden
    delta = (softmax(logits, axis=1) - Y) / Y.shape[0]
    dWy = cache["h_last"].T @ delta
    dby = delta.sum(axis=0)

    caches = cache["caches"]
    steps = len(caches[0])
    # gradient flowing into each step's output of the current layer
    d_out = [np.zeros_like(delta @ params.Wy.T) for _ in range(steps)]
    d_out[-1] = delta @ params.Wy.T

    layer_grads = []
    for layer in range(params.layers - 1, -1, -1):
        W = params.W[layer]
        in_width = W.shape[0] - H
        dW = np.zeros_like(W)
        db = np.zeros_like(params.b[layer])
        dh_next = np.zeros_like(d_out[0])
        dc_next = np.zeros_like(d_out[0])
        d_in = [None] * steps
        for t in range(steps - 1, -1, -1):
            xh, i, f, o, g, c_prev, tc = caches[layer][t]
            dh = d_out[t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc ** 2) + dc_next
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                do * o * (1.0 - o),
                dg * (1.0 - g ** 2),
            ], axis=1)
            dW += xh.T @ dz
            db += dz.sum(axis=0)
            dxh = dz @ W.T
            d_in[t] = dxh[:, :in_width]
            dh_next = dxh[:, in_width:]
            dc_next = dc * f
        layer_grads.append((dW, db))
        d_out = d_in

    grads: List[np.ndarray] = []
    for dW, db in reversed(layer_grads):
        grads.extend([dW, db])
    grads.extend([dWy, dby])
    return grads


def lstm_predict_proba(params: LstmParams, X: np.ndarray) -> np.ndarray:
    logits, _ = lstm_forward(params, X)
    return softmax(logits, axis=1)


def lstm_loss_and_grads(params: LstmParams, X: np.ndarray, Y: np.ndarray,
                        rng: Optional[np.random.Generator] = None) -> Tuple[float, List[np.ndarray]]:
    logits, cache = lstm_forward(params, X)
    return cross_entropy(logits, Y), lstm_backward(params, cache, logits, Y)


# Training

class AdamOptimizer:
    def __init__(self, parameters: List[np.ndarray], lr: float,
                 betas: Tuple[float, float] = ADAM_BETAS, epsilon: float = ADAM_EPSILON):
        self.parameters = parameters
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.epsilon = epsilon
        self.m = [np.zeros_like(p) for p in parameters]
        self.v = [np.zeros_like(p) for p in parameters]
        self.t = 0

    def step(self, grads: List[np.ndarray]) -> None:
        """In-place update of the parameter arrays."""
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.parameters, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)


LossAndGrads = Callable[[object, np.ndarray, np.ndarray, Optional[np.random.Generator]], Tuple[float, List[np.ndarray]]]


def train_network(params, loss_and_grads: LossAndGrads, X: np.ndarray, y: np.ndarray,
                  lr: float, batch: int, epochs: int, rng: np.random.Generator,
                  delta: float = EARLY_STOP_DELTA, patience: int = EARLY_STOP_PATIENCE) -> List[float]:
    """Mini-batch Adam. Returns the per-epoch mean training loss."""
    if lr <= 0 or batch < 1 or epochs < 1:
        raise ConfigError(f"Invalid training settings: lr={lr}, batch={batch}, epochs={epochs}")

    Y = one_hot(y)
    n = len(Y)
    optimizer = AdamOptimizer(params.parameters(), lr)
    history: List[float] = []
    best = math.inf
    stale = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = loss_and_grads(params, X[idx], Y[idx], rng)
            optimizer.step(grads)
            total += loss * len(idx)
        epoch_loss = total / n
        history.append(epoch_loss)

        if best - epoch_loss < delta:
            stale += 1
            if stale >= patience:
                logger.debug(f"Early stop after epoch {epoch + 1}, loss {epoch_loss:.6f}")
                break
        else:
            stale = 0
        best = min(best, epoch_loss)

    return history


def numerical_gradient_check(params, loss_and_grads: LossAndGrads, X: np.ndarray, y: np.ndarray,
                             step: float) -> Tuple[float, float, int]:
    """(max relative error, analytic gradient norm, parameter count) against central differences."""
    Y = one_hot(y)
    _, analytic = loss_and_grads(params, X, Y, None)

    worst = 0.0
    count = 0
    for p, g in zip(params.parameters(), analytic):
        flat = p.reshape(-1)
        grad = g.reshape(-1)
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + step
            plus, _ = loss_and_grads(params, X, Y, None)
            flat[k] = original - step
            minus, _ = loss_and_grads(params, X, Y, None)
            flat[k] = original
            numeric = (plus - minus) / (2.0 * step)
            error = abs(grad[k] - numeric) / max(abs(grad[k]) + abs(numeric), 1e-4)
            worst = max(worst, error)
            count += 1

    norm = float(np.sqrt(sum(float(np.sum(g ** 2)) for g in analytic)))
    return worst, norm, count


def params_to_payload(params, encode) -> dict:
    if isinstance(params, DenseParams):
        return {
            "type": "dense",
            "dropout": params.dropout,
            "weights": [encode(W) for W in params.weights],
            "biases": [encode(b) for b in params.biases],
        }
    return {
        "type": "lstm",
        "W": [encode(W) for W in params.W],
        "b": [encode(b) for b in params.b],
        "Wy": encode(params.Wy),
        "by": encode(params.by),
    }


def params_from_payload(payload: dict, decode):
    if payload["type"] == "dense":
        return DenseParams(
            weights=[decode(W) for W in payload["weights"]],
            biases=[decode(b) for b in payload["biases"]],
            dropout=float(payload.get("dropout", 0.0)),
        )
    return LstmParams(
        W=[decode(W) for W in payload["W"]],
        b=[decode(b) for b in payload["b"]],
        Wy=decode(payload["Wy"]),
        by=decode(payload["by"]),
    )
