"""Feed-forward user-preference network.

Input is a user's profile features concatenated with a query's category
vector; output is one weight in (0, 1) per product rank feature (price,
popularity, brand slots, color slots). Hidden layers use ReLU, the output
layer a sigmoid, and training minimizes mean squared error by minibatch SGD
with momentum.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..datagen import PREFERENCE_DIM, user_features
from ..exceptions import ShapeError, TrainingError
from .kernels import dense, relu, sigmoid

# Keeps the sigmoid output strictly inside (0, 1) after float rounding.
_OUTPUT_EPS = 1e-12


def forward(coefs, intercepts, X) -> list[np.ndarray]:
    """Activations of every layer, input included."""
    acts = [X]
    last = len(coefs) - 1
    for i, (W, b) in enumerate(zip(coefs, intercepts)):
        z = dense(acts[-1], W, b)
        acts.append(sigmoid(z) if i == last else relu(z))
    return acts


def loss_and_grads(coefs, intercepts, X, Y):
    """Mean squared error over all outputs and its gradients per layer."""
    acts = forward(coefs, intercepts, X)
    out = acts[-1]
    diff = out - Y
    loss = float(np.mean(diff**2))
    delta = 2.0 * diff / diff.size * out * (1.0 - out)
    grad_W = [None] * len(coefs)
    grad_b = [None] * len(coefs)
    for i in range(len(coefs) - 1, -1, -1):
        grad_W[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ coefs[i].T) * (acts[i] > 0)
    return loss, grad_W, grad_b


class PreferenceNet(RegressorMixin, BaseEstimator):
    """MLP regressor with ReLU hidden layers and a sigmoid output layer.

    Attribute names mirror :class:`sklearn.neural_network.MLPRegressor`
    (``coefs_``, ``intercepts_``, ``loss_curve_``). Fitted parameters are
    stored as float32.
    """

    def __init__(self, hidden_layer_sizes=(128, 128), learning_rate=0.05, momentum=0.9,
                 epochs=200, batch_size=32, random_state=0, warm_start=False):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state
        self.warm_start = warm_start

    def _initialize(self, sizes, rng):
        coefs, intercepts = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            coefs.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            intercepts.append(np.zeros(fan_out))
        return coefs, intercepts

    def fit(self, X, Y):
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.float64, ensure_2d=False)
        if Y.ndim == 1:
            Y = Y[:, None]
        if len(X) != len(Y):
            raise ValueError(f"X has {len(X)} samples but Y has {len(Y)}")
        sizes = [X.shape[1], *self.hidden_layer_sizes, Y.shape[1]]
        rng = np.random.default_rng(self.random_state)
        if self.warm_start and hasattr(self, "coefs_") and self.layer_sizes_ == sizes:
            coefs = [W.astype(np.float64) for W in self.coefs_]
            intercepts = [b.astype(np.float64) for b in self.intercepts_]
        else:
            coefs, intercepts = self._initialize(sizes, rng)
        params = coefs + intercepts
        velocity = [np.zeros_like(p) for p in params]
        n = len(X)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                batch = order[start:start + self.batch_size]
                _, gW, gb = loss_and_grads(coefs, intercepts, X[batch], Y[batch])
                for p, v, g in zip(params, velocity, gW + gb):
                    v *= self.momentum
                    v -= self.learning_rate * g
                    p += v
            self.loss_curve_.append(loss_and_grads(coefs, intercepts, X, Y)[0])

        self.coefs_ = [W.astype(np.float32) for W in coefs]
        self.intercepts_ = [b.astype(np.float32) for b in intercepts]
        self.layer_sizes_ = sizes
        self.n_features_in_ = sizes[0]
        self.n_outputs_ = sizes[-1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coefs_")
        X = check_array(X, dtype=np.float32)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"expected {self.n_features_in_} input features, got {X.shape[1]}")
        return forward(self.coefs_, self.intercepts_, X)[-1]

    def predict_one(self, x: np.ndarray) -> np.ndarray:
        """Single-vector fast path used when serving; skips sklearn validation."""
        x = np.asarray(x, dtype=np.float32)
        if x.shape != (self.n_features_in_,):
            raise ShapeError(f"expected input of length {self.n_features_in_}, got shape {x.shape}")
        return forward(self.coefs_, self.intercepts_, x)[-1]

    @property
    def n_parameters(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.coefs_, self.intercepts_))


def predict_weights(net: PreferenceNet, user_vector, query_vector) -> np.ndarray:
    """Per-attribute preference weights, each strictly in (0, 1)."""
    x = np.concatenate([np.ravel(user_vector), np.ravel(query_vector)])
    out = net.predict_one(x)
    return np.clip(out, _OUTPUT_EPS, 1.0 - _OUTPUT_EPS)


def one_hot(index: int, size: int) -> np.ndarray:
    v = np.zeros(size)
    v[index] = 1.0
    return v


def preference_dataset(users: Sequence, logs: Sequence, n_classes: int):
    """One sample per log entry: (user features ++ clicked-category one-hot, user latent vector)."""
    by_id = {u.user_id: u for u in users}
    X, Y = [], []
    for entry in logs:
        user = by_id.get(entry.user_id)
        if user is None:
            continue
        X.append(np.concatenate([user_features(user.profile_fields), one_hot(entry.clicked_category_id, n_classes)]))
        Y.append(user.latent_preference)
    return np.array(X), np.array(Y)


def train_preference(users: Sequence, logs: Sequence, catalog: Sequence, hyperparams: dict | None = None,
                     init: PreferenceNet | None = None) -> PreferenceNet:
    if not users or not logs or not catalog:
        raise TrainingError("users, logs and catalog must all be non-empty")
    n_classes = max(p.category_id for p in catalog) + 1
    X, Y = preference_dataset(users, logs, n_classes)
    if len(X) == 0:
        raise TrainingError("no log entry refers to a known user")
    if Y.shape[1] != PREFERENCE_DIM:
        raise TrainingError(f"latent preference must have length {PREFERENCE_DIM}")
    if init is not None:
        model = init.set_params(**(hyperparams or {}), warm_start=True)
    else:
        model = PreferenceNet(**(hyperparams or {}))
    return model.fit(X, Y)
