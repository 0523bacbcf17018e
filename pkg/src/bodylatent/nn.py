"""Small fully connected ReLU networks with hand-written backprop and Adam."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import container


class TrainingError(RuntimeError):
    pass


class Mlp:
    """Affine layers with ReLU between them and an identity output layer.

    Weights are stored as ``(w_in, w_out)`` so a batch ``X`` maps to ``X @ W + b``.
    """

    def __init__(self, widths, weights=None, biases=None, seed=0):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"need at least an input and an output width, got {widths}")
        self.widths = widths
        if weights is None:
            rng = np.random.default_rng(seed)
            weights = []
            for a, b in zip(widths[:-1], widths[1:]):
                lim = math.sqrt(6.0 / a)  # He-uniform
                weights.append(rng.uniform(-lim, lim, size=(a, b)))
        if biases is None:
            biases = [np.zeros(b) for b in widths[1:]]
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[i], widths[i + 1]) or b.shape != (widths[i + 1],):
                raise ValueError(f"layer {i} parameters do not match widths {widths[i]}->{widths[i + 1]}")

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))

    def params(self) -> list:
        """Flat list ``[W0, b0, W1, b1, ...]`` of the live arrays."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.widths, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"input width {x.shape[-1]} does not match network input {self.n_in}")
        return x

    def forward_cached(self, X):
        X = self._check(X)
        if X.ndim == 2 and len(X) == 1:
            # BLAS uses a different kernel for a single row; doubling keeps rows bit-identical
            # to their values inside any larger batch
            out, acts = self.forward_cached(np.concatenate([X, X]))
            return out[:1], [a[:1] for a in acts]
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, dout):
        """Reverse pass from cached activations; returns (param grads like ``params()``, dX)."""
        g = np.asarray(dout, dtype=np.float64)
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            a = acts[i]
            grads[2 * i] = a.T @ g
            grads[2 * i + 1] = g.sum(0)
            g = g @ self.weights[i].T
            if i > 0:
                # ReLU subgradient is zero at zero
                g = g * (acts[i] > 0)
        return grads, g


def forward(net: Mlp, x) -> np.ndarray:
    x = net._check(x)
    if x.ndim != 1:
        raise ValueError("forward expects a single vector; use forward_batch for matrices")
    return net.forward_cached(x[None])[0][0]


def forward_batch(net: Mlp, X) -> np.ndarray:
    X = net._check(X)
    if X.ndim != 2:
        raise ValueError("forward_batch expects a 2-D array")
    return net.forward_cached(X)[0]


def backward(net: Mlp, x, cot):
    """Parameter gradients and input gradient of ``<net(x), cot>``; accepts a vector or a batch."""
    x = net._check(x)
    single = x.ndim == 1
    X = x[None] if single else x
    C = np.asarray(cot, dtype=np.float64)
    C = C[None] if single else C
    if C.shape != (len(X), net.n_out):
        raise ValueError(f"cotangent shape {C.shape} does not match output ({len(X)}, {net.n_out})")
    _, acts = net.forward_cached(X)
    grads, dx = net.backward(acts, C)
    return grads, (dx[0] if single else dx)


@dataclass
class AdamState:
    shapes: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros(s) for s in self.shapes]
            self.v = [np.zeros(s) for s in self.shapes]

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        return cls([p.shape for p in params], **hyper)


def adam_step(params, grads, state: AdamState) -> None:
    """In-place Adam update of ``params``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ValueError("gradient shape does not match its parameter")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def minibatches(n: int, batch: int, seed: int, epoch: int):
    order = np.random.default_rng([seed, epoch]).permutation(n)
    for lo in range(0, n, batch):
        yield order[lo : lo + batch]


def run_training(params, n: int, loss_and_grads, epochs: int, batch: int, seed: int, state: AdamState,
                 log_every: int = 0, log=None, lr_final: float | None = None) -> list:
    """Generic minibatch Adam loop; ``loss_and_grads(idx)`` returns (loss, grads like params).

    With ``lr_final`` the learning rate decays geometrically from ``state.lr`` over the run.
    """
    history = []
    lr0 = state.lr
    total = epochs * (-(-n // batch))
    step = 0
    for epoch in range(epochs):
        for idx in minibatches(n, batch, seed, epoch):
            if lr_final is not None and total > 1:
                state.lr = lr0 * (lr_final / lr0) ** (step / (total - 1))
            step += 1
            loss, grads = loss_and_grads(idx)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, step {state.step}")
            adam_step(params, grads, state)
            history.append(float(loss))
        if log and log_every and (epoch + 1) % log_every == 0:
            log(f"epoch {epoch + 1}/{epochs} loss {history[-1]:.6g}")
    return history


def mse_loss(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def train_regression(net: Mlp, dataset, loss=mse_loss, epochs: int = 100, batch: int = 32, seed: int = 0,
                     lr: float = 1e-3, state: AdamState | None = None) -> list:
    """Fit ``net`` to ``(X, Y)``; ``loss(pred, target)`` returns (value, dvalue/dpred)."""
    X, Y = (np.asarray(a, dtype=np.float64) for a in dataset)
    params = net.params()
    state = state or AdamState.for_params(params, lr=lr)

    def step(idx):
        pred, acts = net.forward_cached(X[idx])
        value, dpred = loss(pred, Y[idx])
        grads, _ = net.backward(acts, dpred)
        return value, grads

    history = run_training(params, len(X), step, epochs, batch, seed, state)
    if not history:
        value, _ = loss(forward_batch(net, X), Y)
        history = [value]
    return history


def net_arrays(net: Mlp, prefix: str = "") -> dict:
    out = {f"{prefix}widths": np.array(net.widths, dtype=np.float64)}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}W{i}"] = w
        out[f"{prefix}b{i}"] = b
    return out


def net_from_arrays(arrays: dict, prefix: str = "") -> Mlp:
    try:
        widths = [int(w) for w in arrays[f"{prefix}widths"]]
        n = len(widths) - 1
        weights = [arrays[f"{prefix}W{i}"] for i in range(n)]
        biases = [arrays[f"{prefix}b{i}"] for i in range(n)]
    except KeyError as exc:
        raise container.ContainerError(f"missing network array {exc}") from None
    try:
        return Mlp(widths, weights, biases)
    except ValueError as exc:
        raise container.ContainerError(f"weight table mismatch: {exc}") from None


def save_weights(net: Mlp, path) -> None:
    container.write(path, "mlp", net_arrays(net))


def load_weights(path) -> Mlp:
    arrays, _ = container.read(path, "mlp")
    return net_from_arrays(arrays)
