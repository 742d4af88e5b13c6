"""Minimal dense network engine: layers, activations, losses, Adam.

Everything runs in float64; gradients are hand-derived and covered by
central-finite-difference tests.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, UsageError

NORMS = ("l1", "l2sq")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BN_MOMENTUM = 0.99
BN_EPS = 1e-3


def glorot_uniform(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


class DenseLayer:
    """Affine map y = x @ W.T + b with W of shape (out, in)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.W = glorot_uniform(rng, n_out, n_in)
        self.b = np.zeros(n_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.W.shape[1]:
            raise ShapeError(f"dense expects (batch, {self.W.shape[1]}), got {x.shape}")
        if cache:
            self._x = x
        return x @ self.W.T + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise UsageError("backward without cached forward")
        if dy.shape != (self._x.shape[0], self.W.shape[0]):
            raise ShapeError(f"dense backward expects {(self._x.shape[0], self.W.shape[0])}, got {dy.shape}")
        self.dW = dy.T @ self._x
        self.db = dy.sum(axis=0)
        return dy @ self.W

    def parameters(self):
        return [("W", self.W), ("b", self.b)]

    def gradients(self):
        return [self.dW, self.db]

    def param_count(self) -> int:
        return self.W.size + self.b.size


class BatchNormLayer:
    """Batch normalization over axis 0.

    Train mode normalizes by batch statistics and updates running stats with
    r <- momentum*r + (1-momentum)*batch_stat; infer mode uses running stats.
    Parameter count convention: 4n total (2n trainable + 2n running stats).
    """

    def __init__(self, n: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        if not 0.0 < momentum < 1.0:
            raise UsageError("momentum must lie in (0, 1)")
        self.gamma = np.ones(n)
        self.beta = np.zeros(n)
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.momentum = momentum
        self.eps = eps
        self.dgamma = np.zeros(n)
        self.dbeta = np.zeros(n)
        self._cache: tuple | None = None

    @property
    def n(self) -> int:
        return self.gamma.size

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.n:
            raise ShapeError(f"batchnorm expects (batch, {self.n}), got {x.shape}")
        if train:
            if x.shape[0] < 2:
                raise UsageError("batchnorm train mode needs batch >= 2")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xc = x - mean
            xhat = xc * inv_std
            self.running_mean = self.momentum * self.running_mean + (1.0 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1.0 - self.momentum) * var
            self._cache = (xc, inv_std, xhat)
            return self.gamma * xhat + self.beta
        self._cache = None
        xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return self.gamma * xhat + self.beta

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise UsageError("batchnorm backward requires a cached train-mode forward")
        xc, inv_std, xhat = self._cache
        n = dy.shape[0]
        self.dbeta = dy.sum(axis=0)
        self.dgamma = (dy * xhat).sum(axis=0)
        dxhat = dy * self.gamma
        dvar = (dxhat * xc * -0.5 * inv_std**3).sum(axis=0)
        dmean = (dxhat * -inv_std).sum(axis=0) + dvar * (-2.0 * xc).mean(axis=0)
        return dxhat * inv_std + dvar * 2.0 * xc / n + dmean / n

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def gradients(self):
        return [self.dgamma, self.dbeta]

    def state_tensors(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def param_count(self) -> int:
        return 4 * self.n


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, x)


def relu_grad(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # Subgradient 0 at exactly 0.
    return dy * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


def loss_and_grad(pred: np.ndarray, target: np.ndarray, norm: str) -> tuple[float, np.ndarray]:
    """Mean loss over all elements and its gradient w.r.t. pred.

    "l1": mean absolute error, subgradient sign(diff)/N (0 at ties).
    "l2sq": mean squared error, gradient 2*diff/N.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    n = diff.size
    if norm == "l1":
        return float(np.abs(diff).mean()), np.sign(diff) / n
    if norm == "l2sq":
        return float((diff**2).mean()), 2.0 * diff / n
    raise UsageError(f"unknown norm {norm!r}; expected one of {NORMS}")


def per_sample_error(pred: np.ndarray, target: np.ndarray, norm: str) -> np.ndarray:
    """Reconstruction error per batch row, averaged over the remaining axes."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    diff = (pred - target).reshape(pred.shape[0], -1)
    if norm == "l1":
        return np.abs(diff).mean(axis=1)
    if norm == "l2sq":
        return (diff**2).mean(axis=1)
    raise UsageError(f"unknown norm {norm!r}; expected one of {NORMS}")


class Adam:
    """Adam with bias correction; one independent (m, v) pair per parameter tensor."""

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float = 1e-3,
        beta1: float = ADAM_BETA1,
        beta2: float = ADAM_BETA2,
        eps: float = ADAM_EPS,
    ):
        self.params = params
        self.lr = lr
        self.base_lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeError(f"expected {len(self.params)} gradient tensors, got {len(grads)}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def lr_at_epoch(epoch: int, base_lr: float = 1e-3, decay: float = 0.95, every: int = 5) -> float:
    """Exponential schedule: base_lr * decay^floor(epoch/every), epochs from 0."""
    if epoch < 0:
        raise UsageError("epoch must be >= 0")
    return base_lr * decay ** (epoch // every)


def set_lr(state: Adam, epoch: int, decay: float = 0.95, every: int = 5) -> Adam:
    state.lr = lr_at_epoch(epoch, state.base_lr, decay, every)
    return state
