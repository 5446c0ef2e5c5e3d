"""Data-dependent discounts and rotation scales for one attention head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, gauss, log_sigmoid, matmul, sigmoid, tanh_act


@dataclass
class HeadParams:
    """Projections for one head. Inputs are rows: ``Q = X @ W_Q``."""

    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    w_gamma: np.ndarray
    w_beta: np.ndarray
    gamma_bias: float = 0.0

    @property
    def d_model(self) -> int:
        return self.W_Q.shape[0]

    @property
    def d(self) -> int:
        return self.W_Q.shape[1]

    def project(self, X):
        X = np.asarray(X, dtype=np.float64)
        return matmul(X, self.W_Q), matmul(X, self.W_K), matmul(X, self.W_V)

    @classmethod
    def random(cls, rng: RngStream, d_model: int, d: int, *, scale=None, gated=True, learned_rotary=True):
        scale = 1.0 / math.sqrt(d_model) if scale is None else scale
        W_Q, W_K, W_V = (scale * gauss(rng, (d_model, d)) for _ in range(3))
        w_gamma = gauss(rng, d_model) if gated else np.zeros(d_model)
        w_beta = gauss(rng, d_model) if learned_rotary else np.zeros(d_model)
        return cls(W_Q, W_K, W_V, w_gamma, w_beta)


@dataclass(frozen=True, eq=False)
class GateTrack:
    """Per-step gates and their pairwise cumulative forms.

    ``log_b[i, j]`` is log(gamma_{j+1} * ... * gamma_i) and ``c[i, j]`` is
    beta_{j+1} + ... + beta_i, for j <= i. Entries above the diagonal hold
    -inf and 0 respectively.
    """

    gamma: np.ndarray
    beta: np.ndarray
    log_b: np.ndarray
    c: np.ndarray

    @property
    def b(self) -> np.ndarray:
        return np.exp(self.log_b)


def _logits(X, w, name):
    X = np.asarray(X, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if X.ndim != 2 or w.shape != (X.shape[1],):
        raise ValueError(f"{name}: shape mismatch X{X.shape} vs w{w.shape}")
    return matmul(X, w[:, None])[:, 0]


def gate_values(X, w_gamma, bias: float = 0.0) -> np.ndarray:
    return sigmoid(_logits(X, w_gamma, "gate_values") + bias)


def log_gate_values(X, w_gamma, bias: float = 0.0) -> np.ndarray:
    return log_sigmoid(_logits(X, w_gamma, "log_gate_values") + bias)


def beta_values(X, w_beta) -> np.ndarray:
    return 1.0 + tanh_act(_logits(X, w_beta, "beta_values"))


def cumulate(gamma, beta, *, log_gamma=None) -> GateTrack:
    """Build the pairwise discount/rotation tables.

    Pass ``log_gamma`` directly when it is available in closed form; it avoids
    the rounding of ``log(sigmoid(x))`` when gamma is close to 0.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if gamma.shape != beta.shape or gamma.ndim != 1:
        raise ValueError(f"gamma {gamma.shape} and beta {beta.shape} must be equal-length vectors")
    if log_gamma is None:
        if np.any(gamma <= 0):
            raise ValueError("gamma must be strictly positive")
        log_gamma = np.log(gamma)
    t = len(gamma)
    L = np.cumsum(log_gamma)
    C = np.cumsum(beta)
    lower = np.tril(np.ones((t, t), dtype=bool))
    log_b = np.where(lower, L[:, None] - L[None, :], -np.inf)
    c = np.where(lower, C[:, None] - C[None, :], 0.0)
    np.fill_diagonal(log_b, 0.0)
    np.fill_diagonal(c, 0.0)
    return GateTrack(gamma, beta, log_b, c)


def constant_track(t: int, gamma: float = 1.0, beta: float = 1.0) -> GateTrack:
    return cumulate(np.full(t, gamma), np.full(t, beta))


def alibi_gamma(m: float) -> float:
    if not m > 0:
        raise ValueError(f"ALiBi slope must be positive, got {m}")
    return math.exp(-m)
