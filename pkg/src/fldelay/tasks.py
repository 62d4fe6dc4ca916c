"""Desk-scale learning tasks with exact full-batch gradients.

Every task owns a dataset ``(X, y)`` plus integer class ``labels`` used for
label-skewed partitioning.  Losses are means over an index set, so a device's
local objective is ``task.loss(w, shard)`` and the global objective is the
weighted sum of those.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError


def _softmax_xent(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    prob = np.exp(logp)
    prob[np.arange(n), labels] -= 1.0
    return loss, prob / n


@dataclass
class LossTask:
    X: np.ndarray
    y: np.ndarray
    labels: np.ndarray
    n_classes: int
    reg: float = 0.0
    kind: str = field(init=False, default="base")

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    def _loss_grad(self, w, X, y):
        raise NotImplementedError

    def _select(self, idx):
        if idx is None:
            return self.X, self.y
        idx = np.asarray(idx)
        if idx.size == 0:
            raise InvalidArgumentError("empty index set")
        return self.X[idx], self.y[idx]

    def loss_grad(self, w, idx=None):
        X, y = self._select(idx)
        loss, grad = self._loss_grad(np.asarray(w, dtype=np.float64), X, y)
        if self.reg:
            loss = loss + 0.5 * self.reg * float(w @ w)
            grad = grad + self.reg * w
        return float(loss), grad

    def loss(self, w, idx=None) -> float:
        return self.loss_grad(w, idx)[0]

    def grad(self, w, idx=None) -> np.ndarray:
        return self.loss_grad(w, idx)[1]

    def initial_params(self, seed=None) -> np.ndarray:
        return np.zeros(self.dim)


@dataclass
class QuadraticTask(LossTask):
    """Least squares ``f_i(w) = 0.5 (x_i . w - y_i)^2`` (+ ridge)."""

    kind: str = field(init=False, default="quadratic")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def _loss_grad(self, w, X, y):
        r = X @ w - y
        n = X.shape[0]
        return 0.5 * float(r @ r) / n, X.T @ r / n

    def hessian(self, idx=None) -> np.ndarray:
        X, _ = self._select(idx)
        return X.T @ X / X.shape[0] + self.reg * np.eye(self.dim)

    def optimum(self, idx=None, weights=None) -> np.ndarray:
        """Closed-form minimizer of the (weighted) objective.

        ``idx`` may be one index array or a list of shards; in the latter case
        ``weights`` gives each shard's weight in the objective.
        """
        H, b = self._normal_equations(idx, weights)
        return np.linalg.solve(H, b)

    def _normal_equations(self, idx, weights):
        if idx is None or (len(idx) and np.ndim(idx[0]) == 0):
            X, y = self._select(idx)
            n = X.shape[0]
            return X.T @ X / n + self.reg * np.eye(self.dim), X.T @ y / n
        if weights is None:
            weights = np.full(len(idx), 1.0 / len(idx))
        H = np.zeros((self.dim, self.dim))
        b = np.zeros(self.dim)
        for shard, p in zip(idx, weights):
            X, y = self._select(shard)
            H += p * (X.T @ X) / X.shape[0]
            b += p * (X.T @ y) / X.shape[0]
        return H + self.reg * np.eye(self.dim), b


@dataclass
class LogisticTask(LossTask):
    """Multinomial logistic regression; parameters are ``[W.ravel(), b]``."""

    kind: str = field(init=False, default="logistic")

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def dim(self) -> int:
        return self.n_classes * (self.n_features + 1)

    def _unpack(self, w):
        f, c = self.n_features, self.n_classes
        return w[: c * f].reshape(c, f), w[c * f :]

    def _loss_grad(self, w, X, y):
        W, b = self._unpack(w)
        loss, dlogits = _softmax_xent(X @ W.T + b, y)
        return loss, np.concatenate([(dlogits.T @ X).ravel(), dlogits.sum(axis=0)])

    def predict(self, w, X=None):
        W, b = self._unpack(np.asarray(w))
        X = self.X if X is None else X
        return np.argmax(X @ W.T + b, axis=1)


@dataclass
class MLPTask(LossTask):
    """One tanh hidden layer followed by a softmax output layer."""

    hidden: int = 16
    kind: str = field(init=False, default="mlp")

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def dim(self) -> int:
        f, h, c = self.n_features, self.hidden, self.n_classes
        return h * f + h + c * h + c

    def _unpack(self, w):
        f, h, c = self.n_features, self.hidden, self.n_classes
        i = 0
        W1 = w[i : i + h * f].reshape(h, f)
        i += h * f
        b1 = w[i : i + h]
        i += h
        W2 = w[i : i + c * h].reshape(c, h)
        i += c * h
        return W1, b1, W2, w[i:]

    def _loss_grad(self, w, X, y):
        W1, b1, W2, b2 = self._unpack(w)
        a = np.tanh(X @ W1.T + b1)
        loss, dlogits = _softmax_xent(a @ W2.T + b2, y)
        da = (dlogits @ W2) * (1.0 - a * a)
        grad = np.concatenate(
            [(da.T @ X).ravel(), da.sum(axis=0), (dlogits.T @ a).ravel(), dlogits.sum(axis=0)]
        )
        return loss, grad

    def predict(self, w, X=None):
        W1, b1, W2, b2 = self._unpack(np.asarray(w))
        X = self.X if X is None else X
        return np.argmax(np.tanh(X @ W1.T + b1) @ W2.T + b2, axis=1)

    def initial_params(self, seed=None) -> np.ndarray:
        rng = np.random.default_rng(0 if seed is None else seed)
        W1, b1, W2, b2 = self._unpack(np.zeros(self.dim))
        scale1 = 1.0 / np.sqrt(self.n_features)
        scale2 = 1.0 / np.sqrt(self.hidden)
        return np.concatenate(
            [
                rng.normal(0.0, scale1, W1.size),
                np.zeros(b1.size),
                rng.normal(0.0, scale2, W2.size),
                np.zeros(b2.size),
            ]
        )


def _clusters(rng, n_samples, n_features, n_classes, separation):
    centers = rng.normal(0.0, separation, size=(n_classes, n_features))
    labels = np.arange(n_samples) % n_classes
    rng.shuffle(labels)
    X = centers[labels] + rng.normal(size=(n_samples, n_features))
    return X, labels


def make_quadratic(
    n_samples=2000, dim=10, n_classes=10, separation=1.0, noise=0.1, reg=0.0, seed=0
) -> QuadraticTask:
    """Linear regression on clustered inputs with a class-dependent offset.

    The offset makes per-class optima differ, so label-skewed shards are
    genuinely heterogeneous.
    """
    rng = np.random.default_rng(seed)
    X, labels = _clusters(rng, n_samples, dim, n_classes, separation)
    w_true = rng.normal(size=dim)
    offsets = rng.normal(0.0, 1.0, size=n_classes)
    y = X @ w_true + offsets[labels] + noise * rng.normal(size=n_samples)
    return QuadraticTask(X=X, y=y, labels=labels, n_classes=n_classes, reg=reg)


def make_scalar_quadratic(curvature=1.0, n_samples=100, n_classes=1) -> QuadraticTask:
    """``f(w) = 0.5 * curvature * w**2`` on every sample (d = 1)."""
    X = np.full((n_samples, 1), np.sqrt(curvature))
    labels = np.arange(n_samples) % n_classes
    return QuadraticTask(X=X, y=np.zeros(n_samples), labels=labels, n_classes=n_classes)


def make_logistic(
    n_samples=2000, n_features=5, n_classes=10, separation=2.0, reg=1e-3, seed=0
) -> LogisticTask:
    rng = np.random.default_rng(seed)
    X, labels = _clusters(rng, n_samples, n_features, n_classes, separation)
    return LogisticTask(X=X, y=labels, labels=labels, n_classes=n_classes, reg=reg)


def make_mlp(
    n_samples=2000, n_features=5, n_classes=10, hidden=16, separation=2.0, reg=0.0, seed=0
) -> MLPTask:
    rng = np.random.default_rng(seed)
    X, labels = _clusters(rng, n_samples, n_features, n_classes, separation)
    return MLPTask(X=X, y=labels, labels=labels, n_classes=n_classes, reg=reg, hidden=hidden)


def make_task(kind: str, **params) -> LossTask:
    makers = {"quadratic": make_quadratic, "logistic": make_logistic, "mlp": make_mlp}
    if kind not in makers:
        raise InvalidArgumentError(f"unknown task kind {kind!r}; expected one of {sorted(makers)}")
    return makers[kind](**params)
