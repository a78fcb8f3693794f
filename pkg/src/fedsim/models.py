"""Differentiable toy models exposed as gradient oracles.

Two architectures: a softmax linear classifier and a one-hidden-layer tanh MLP.
Parameters live in a single flat float64 vector so server-side sparsification
operates on plain coordinates. Flattening layout:

* softmax_linear: row-major by output class, ``theta[c*m + j]`` multiplies
  feature j for class c (d = C*m).
* mlp_1hidden: hidden weights first (h x m, row-major), then output weights
  (C x h, row-major); d = h*m + C*h. Activation is tanh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDeviceError, ParameterError
from .numkit import as_vector, l2_clip


@dataclass(frozen=True)
class Batch:
    """Feature matrix (n, m) in [0,1] with integer class labels (n,)."""

    x: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ParameterError("batch needs x of shape (n, m) and y of shape (n,)")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ParameterError("labels out of range")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Batch":
        return Batch(self.x[idx], self.y[idx], self.n_classes)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class SoftmaxLinear:
    """kind='softmax_linear': probabilities = softmax(theta @ x)."""

    kind = "softmax_linear"

    def __init__(self, in_dim: int, n_classes: int, params=None):
        if in_dim < 1 or n_classes < 1:
            raise ParameterError("in_dim and n_classes must be positive")
        self.in_dim = in_dim
        self.n_classes = n_classes
        self.d = n_classes * in_dim
        if params is None:
            self.params = np.zeros(self.d)
        else:
            self.params = as_vector(params, d=self.d)

    def with_params(self, params) -> "SoftmaxLinear":
        return SoftmaxLinear(self.in_dim, self.n_classes, params)

    def _theta(self) -> np.ndarray:
        return self.params.reshape(self.n_classes, self.in_dim)

    def forward(self, x) -> np.ndarray:
        x = as_vector(x, d=self.in_dim)
        return _softmax(self._theta() @ x)

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] != self.in_dim:
            raise ParameterError("feature dimension mismatch")
        return _softmax(X @ self._theta().T)

    def loss(self, batch: Batch) -> float:
        """Mean cross entropy, computed via log-sum-exp for stability."""
        z = batch.x @ self._theta().T
        zmax = z.max(axis=1)
        lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
        return float(np.mean(lse - z[np.arange(len(batch)), batch.y]))

    def gradient(self, batch: Batch) -> np.ndarray:
        """Mean cross-entropy gradient, flat. Coordinate (c, j) is the batch
        mean of x_j * (p_c - 1[c == y])."""
        if len(batch) == 0:
            raise ParameterError("gradient of an empty batch is undefined")
        p = self.forward_batch(batch.x)
        p[np.arange(len(batch)), batch.y] -= 1.0
        return (p.T @ batch.x).ravel() / len(batch)


class MLPOneHidden:
    """kind='mlp_1hidden': softmax(W2 @ tanh(W1 @ x))."""

    kind = "mlp_1hidden"

    def __init__(self, in_dim: int, n_classes: int, hidden: int, params=None):
        if in_dim < 1 or n_classes < 1 or hidden < 1:
            raise ParameterError("in_dim, n_classes and hidden must be positive")
        self.in_dim = in_dim
        self.n_classes = n_classes
        self.hidden = hidden
        self.d = hidden * in_dim + n_classes * hidden
        if params is None:
            self.params = np.zeros(self.d)
        else:
            self.params = as_vector(params, d=self.d)

    def with_params(self, params) -> "MLPOneHidden":
        return MLPOneHidden(self.in_dim, self.n_classes, self.hidden, params)

    def _weights(self):
        split = self.hidden * self.in_dim
        w1 = self.params[:split].reshape(self.hidden, self.in_dim)
        w2 = self.params[split:].reshape(self.n_classes, self.hidden)
        return w1, w2

    def forward(self, x) -> np.ndarray:
        x = as_vector(x, d=self.in_dim)
        w1, w2 = self._weights()
        return _softmax(w2 @ np.tanh(w1 @ x))

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] != self.in_dim:
            raise ParameterError("feature dimension mismatch")
        w1, w2 = self._weights()
        return _softmax(np.tanh(X @ w1.T) @ w2.T)

    def loss(self, batch: Batch) -> float:
        w1, w2 = self._weights()
        z = np.tanh(batch.x @ w1.T) @ w2.T
        zmax = z.max(axis=1)
        lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
        return float(np.mean(lse - z[np.arange(len(batch)), batch.y]))

    def gradient(self, batch: Batch) -> np.ndarray:
        if len(batch) == 0:
            raise ParameterError("gradient of an empty batch is undefined")
        n = len(batch)
        w1, w2 = self._weights()
        a1 = np.tanh(batch.x @ w1.T)  # (n, h)
        p = _softmax(a1 @ w2.T)  # (n, C)
        p[np.arange(n), batch.y] -= 1.0
        gw2 = p.T @ a1 / n
        dz1 = (p @ w2) * (1.0 - a1 * a1)  # (n, h)
        gw1 = dz1.T @ batch.x / n
        return np.concatenate([gw1.ravel(), gw2.ravel()])


def make_oracle(kind: str, in_dim: int, n_classes: int, hidden: int = 16, params=None):
    if kind == "softmax_linear":
        return SoftmaxLinear(in_dim, n_classes, params)
    if kind == "mlp_1hidden":
        return MLPOneHidden(in_dim, n_classes, hidden, params)
    raise ParameterError(f"unknown model kind {kind!r}")


def local_update(oracle, data: Batch, epochs: int, local_lr: float,
                 batch_size: int, clip: float) -> np.ndarray:
    """Run `epochs` passes of minibatch SGD from the oracle's params and return
    the clipped parameter delta (theta_local - theta_global).

    Minibatches are consecutive slices of the dataset in stored order (the
    last one may be short), repeated identically every pass, so the trace is a
    pure function of the inputs. The oracle itself is never mutated.
    """
    if epochs < 1:
        raise ParameterError("epochs must be >= 1")
    if len(data) == 0:
        raise EmptyDeviceError("device holds no data")
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    theta0 = oracle.params
    # The delta is accumulated directly so a single step is exactly -lr * g.
    delta = np.zeros_like(theta0)
    n = len(data)
    for _ in range(epochs):
        for start in range(0, n, batch_size):
            sl = slice(start, min(start + batch_size, n))
            g = oracle.with_params(theta0 + delta).gradient(data.subset(sl))
            delta = delta - local_lr * g
    return l2_clip(delta, clip)


def empirical_coord_lipschitz(oracle, data: Batch, trials: int, seed: int,
                              theta_scale: float = 2.0, batch_size: int = 4) -> float:
    """Empirical lower estimate of the coordinatewise Lipschitz constant.

    Samples (theta1, theta2, batch) triples and returns the maximum over
    coordinates of |g1[i] - g2[i]| / ||theta1 - theta2||_1. Half the pairs are
    nearby perturbations (where the supremum is approached), half independent
    draws. Identical pairs are skipped.
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    n = len(data)
    b = min(batch_size, n)
    worst = 0.0
    for trial in range(trials):
        idx = rng.choice(n, size=b, replace=False)
        batch = data.subset(idx)
        t1 = rng.normal(scale=theta_scale, size=oracle.d)
        if trial % 2 == 0:
            t2 = t1 + rng.normal(scale=1e-4, size=oracle.d)
        else:
            t2 = rng.normal(scale=theta_scale, size=oracle.d)
        denom = float(np.sum(np.abs(t1 - t2)))
        if denom == 0.0:
            continue
        g1 = oracle.with_params(t1).gradient(batch)
        g2 = oracle.with_params(t2).gradient(batch)
        ratio = float(np.max(np.abs(g1 - g2))) / denom
        worst = max(worst, ratio)
    return worst
