"""Dense linear algebra, seeded randomness and scalar activations.

Everything here is a pure function of its inputs. Verification code runs in
float64; the torch training path keeps its own float32/float64 tensors.
"""

from __future__ import annotations

import math
import os

import numpy as np

DEBUG = os.environ.get("CSPW_DEBUG", "") not in ("", "0")


class NonFiniteError(FloatingPointError):
    pass


def check_finite(name: str, arr) -> None:
    """Boundary guard. Only active when CSPW_DEBUG is set."""
    if DEBUG and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name}: non-finite values")


def matmul(a, b) -> np.ndarray:
    """Matrix product with a fixed left-to-right summation order.

    Each output element is accumulated as ((a0*b0 + a1*b1) + a2*b2) + ...,
    which makes the result bitwise identical to a naive triple loop and
    independent of BLAS threading.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def sigmoid(x):
    """Logistic function, evaluated so that neither tail overflows."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = -np.logaddexp(0.0, -x)
    return out if out.ndim else float(out)


def tanh_act(x):
    out = np.tanh(np.asarray(x, dtype=np.float64))
    return out if out.ndim else float(out)


class RngStream:
    """Reproducible random stream keyed by ``(seed, stream)``.

    Distinct stream ids give statistically independent sequences, so callers
    can hand one stream to each sequence/head without ordering concerns.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "RngStream":
        return RngStream(self.seed, self.stream * 1_000_003 + stream + 1)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def gauss(rng: RngStream, shape) -> np.ndarray:
    return rng.generator.standard_normal(shape)


def binom(n: int, k: int) -> int:
    return math.comb(n, k)
