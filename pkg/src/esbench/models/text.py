"""Hashed bag-of-n-grams linear text classifier (fastText style).

A query is mapped to a multiset of bucket ids (unigrams, plus adjacent
bigrams when ``ngram_order=2``), each bucket owns an embedding row, the
query representation is the mean of its rows, and a linear layer followed
by softmax gives category probabilities.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted, column_or_1d

from ..exceptions import TrainingError
from ..hashing import fnv1a_64
from ..index import tokenize
from .kernels import softmax


def featurize(query_text: str | Sequence[str], n_buckets: int, ngram_order: int = 2) -> list[int]:
    """Bucket ids for every token and, for order 2, every adjacent token pair.

    Hash: 64-bit FNV-1a over the UTF-8 bytes; a bigram is hashed as the two
    tokens joined by a single space.
    """
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    if ngram_order not in (1, 2):
        raise ValueError("ngram_order must be 1 or 2")
    tokens = tokenize(query_text)
    ids = [fnv1a_64(t) % n_buckets for t in tokens]
    if ngram_order == 2:
        ids += [fnv1a_64(a + " " + b) % n_buckets for a, b in zip(tokens, tokens[1:])]
    return ids


class HashingNgramVectorizer(TransformerMixin, BaseEstimator):
    """Stateless transformer from texts to sparse bucket-count rows."""

    def __init__(self, n_buckets=2**18, ngram_order=2):
        self.n_buckets = n_buckets
        self.ngram_order = ngram_order

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        indptr, indices = [0], []
        for text in X:
            indices.extend(featurize(text, self.n_buckets, self.ngram_order))
            indptr.append(len(indices))
        data = np.ones(len(indices))
        m = sp.csr_matrix((data, indices, indptr), shape=(len(indptr) - 1, self.n_buckets))
        m.sum_duplicates()
        return m


def _example_loss_grad(E, W, idx, label):
    """Cross-entropy of one example and its gradients.

    Returns ``(loss, probs, dW, dh)``; the embedding gradient is
    ``dh / len(idx)`` added to every row in ``idx`` (with repetition).
    """
    if len(idx):
        h = E[idx].mean(axis=0)
    else:
        h = np.zeros(E.shape[1])
    p = softmax(h @ W)
    loss = -np.log(max(p[label], 1e-300))
    g = p.copy()
    g[label] -= 1.0
    return loss, p, np.outer(h, g), W @ g


def loss_and_grads(E, W, samples):
    """Mean cross-entropy over ``samples`` of (bucket ids, label) and dense gradients."""
    dE = np.zeros_like(E)
    dW = np.zeros_like(W)
    total = 0.0
    for idx, label in samples:
        idx = np.asarray(idx, dtype=np.intp)
        loss, _, gW, dh = _example_loss_grad(E, W, idx, label)
        total += loss
        dW += gW
        if len(idx):
            np.add.at(dE, idx, dh / len(idx))
    n = len(samples)
    return total / n, dE / n, dW / n


class HashedNgramClassifier(ClassifierMixin, BaseEstimator):
    """Category predictor over hashed n-gram embeddings, trained by per-example SGD.

    Parameters follow fastText naming where one exists. ``n_classes`` fixes
    the label space; when ``None`` it is ``max(y) + 1``. Parameters are kept
    as float32 after fitting so that serialization round-trips exactly.
    """

    def __init__(self, n_buckets=2**18, embedding_dim=16, ngram_order=2, n_classes=None,
                 learning_rate=0.2, epochs=5, random_state=0, warm_start=False):
        self.n_buckets = n_buckets
        self.embedding_dim = embedding_dim
        self.ngram_order = ngram_order
        self.n_classes = n_classes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.random_state = random_state
        self.warm_start = warm_start

    def _initialize(self, n_classes, rng):
        d = self.embedding_dim
        E = rng.uniform(-1.0 / d, 1.0 / d, size=(self.n_buckets, d))
        W = np.zeros((d, n_classes))
        return E, W

    def _featurize_all(self, X) -> list[np.ndarray]:
        return [np.asarray(featurize(t, self.n_buckets, self.ngram_order), dtype=np.intp) for t in X]

    def fit(self, X, y):
        X = list(X)
        y = column_or_1d(np.asarray(y, dtype=np.int64))
        if len(X) == 0:
            raise TrainingError("cannot train on an empty corpus")
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        if y.min() < 0:
            raise ValueError("labels must be non-negative integers")
        n_classes = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        if y.max() >= n_classes:
            raise ValueError(f"label {int(y.max())} outside [0, {n_classes})")
        rng = np.random.default_rng(self.random_state)

        if self.warm_start and hasattr(self, "embeddings_") and self.output_weights_.shape[1] == n_classes:
            E = self.embeddings_.astype(np.float64)
            W = self.output_weights_.astype(np.float64)
        else:
            E, W = self._initialize(n_classes, rng)
        samples = self._featurize_all(X)
        counts = None
        self.loss_curve_ = []
        lr = self.learning_rate
        for _ in range(self.epochs):
            for i in rng.permutation(len(samples)):
                idx = samples[i]
                _, _, gW, dh = _example_loss_grad(E, W, idx, y[i])
                W -= lr * gW
                if len(idx):
                    np.add.at(E, idx, -lr * dh / len(idx))
            if counts is None:
                counts = HashingNgramVectorizer(self.n_buckets, self.ngram_order).transform(X)
            self.loss_curve_.append(self._dataset_loss(counts, y, E, W))

        self.embeddings_ = E.astype(np.float32)
        self.output_weights_ = W.astype(np.float32)
        self.classes_ = np.arange(n_classes)
        self.n_classes_ = n_classes
        return self

    @staticmethod
    def _mean_embeddings(counts, E):
        lengths = np.asarray(counts.sum(axis=1)).ravel()
        H = np.asarray(counts @ E, dtype=np.float64)
        nz = lengths > 0
        H[nz] /= lengths[nz, None]
        return H

    def _dataset_loss(self, counts, y, E, W):
        P = softmax(self._mean_embeddings(counts, E) @ W, axis=1)
        return float(-np.mean(np.log(np.maximum(P[np.arange(len(y)), y], 1e-300))))

    def predict_proba(self, X):
        check_is_fitted(self, "embeddings_")
        counts = HashingNgramVectorizer(self.n_buckets, self.ngram_order).transform(list(X))
        H = self._mean_embeddings(counts, self.embeddings_)
        return softmax(H @ self.output_weights_.astype(np.float64), axis=1)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def proba_one(self, query_text) -> np.ndarray:
        """Single-query fast path used when serving."""
        check_is_fitted(self, "embeddings_")
        idx = featurize(query_text, self.n_buckets, self.ngram_order)
        if idx:
            h = self.embeddings_[idx].mean(axis=0, dtype=np.float64)
        else:
            h = np.zeros(self.embedding_dim)
        return softmax(h @ self.output_weights_)


def classify(model: HashedNgramClassifier, query_text) -> np.ndarray:
    return model.proba_one(query_text)


def train_classifier(logs: Iterable, hyperparams: dict | None = None,
                     init: HashedNgramClassifier | None = None) -> HashedNgramClassifier:
    """Fit a classifier mapping each log's query text to its clicked category.

    With ``init`` the given model is refined in place (warm start).
    """
    logs = list(logs)
    if not logs:
        raise TrainingError("no query logs to train on")
    X = [e.query_text for e in logs]
    y = [e.clicked_category_id for e in logs]
    if init is not None:
        model = init.set_params(**(hyperparams or {}), warm_start=True)
    else:
        model = HashedNgramClassifier(**(hyperparams or {}))
    return model.fit(X, y)
