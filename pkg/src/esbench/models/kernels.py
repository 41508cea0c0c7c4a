"""Numeric kernels shared by the in-path networks and the micro benchmarks."""

import numpy as np


def dense(x, weights, bias=None):
    out = x @ weights
    if bias is not None:
        out = out + bias
    return out


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    # Split by sign so neither branch overflows in exp.
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def elementwise_multiply(a, b):
    return np.multiply(a, b)


KERNELS = {
    "dense": dense,
    "relu": relu,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "elementwise_multiply": elementwise_multiply,
}
