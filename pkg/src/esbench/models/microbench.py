"""Timing runner for the kernels on the serving path."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigurationError
from ..metrics import percentile
from .kernels import KERNELS


@dataclass
class MicroBenchResult:
    kernel: str
    shape: tuple[int, ...]
    repetitions: int
    min_us: float
    mean_us: float
    p99_us: float
    checksum: float


def make_inputs(kernel: str, shape, rng: np.random.Generator) -> tuple:
    """Random inputs; dense takes ``(m, k, n)``, the rest take an array shape."""
    if kernel == "dense":
        if len(shape) != 3:
            raise ConfigurationError("shape", "dense needs (m, k, n)")
        m, k, n = shape
        return rng.standard_normal((m, k)), rng.standard_normal((k, n)), rng.standard_normal(n)
    if kernel == "elementwise_multiply":
        return rng.standard_normal(shape), rng.standard_normal(shape)
    return (rng.standard_normal(shape),)


def micro_bench(kernel: str, shape, repetitions: int = 100, inputs: tuple | None = None,
                seed: int = 0) -> MicroBenchResult:
    if kernel not in KERNELS:
        raise ConfigurationError("kernel", f"unknown kernel {kernel!r}; choose from {', '.join(KERNELS)}")
    if repetitions < 1:
        raise ConfigurationError("repetitions", "must be >= 1")
    fn = KERNELS[kernel]
    shape = tuple(int(s) for s in shape)
    if inputs is None:
        inputs = make_inputs(kernel, shape, np.random.default_rng(seed))
    times = []
    checksum = 0.0
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        out = fn(*inputs)
        times.append(time.perf_counter_ns() - t0)
        # Consuming the output keeps the call from being optimized away.
        checksum += float(np.sum(out))
    us = np.array(times) / 1000.0
    return MicroBenchResult(kernel, shape, repetitions, float(us.min()), float(us.mean()),
                            float(percentile(us, 99)), checksum / repetitions)
