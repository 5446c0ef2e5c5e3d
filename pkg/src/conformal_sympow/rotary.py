"""Block-diagonal rotary embeddings with data-dependent angle tracking.

A rotation is stored as its vector of half-angles ``mu`` (one per dimension
pair); pair ``(v[2j], v[2j+1])`` is rotated by ``mu[j]``. Angles accumulate
without modular reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, gauss
from .sympow import MultisetBasis, embed

MAX_EMBEDDED_D = 512


@dataclass(frozen=True, eq=False)
class RotationRates:
    theta: np.ndarray
    N: int
    d: int


@dataclass(frozen=True, eq=False)
class EmbeddedRotation:
    matrix: np.ndarray
    residual: float
    orth_err: float

    def apply(self, x):
        return np.asarray(x) @ self.matrix.T


class IllConditionedError(RuntimeError):
    pass


def make_rates(d: int, N: int) -> RotationRates:
    if d < 2 or d % 2:
        raise ValueError(f"head dimension must be even and >= 2, got {d}")
    if N < 1:
        raise ValueError(f"max document size must be >= 1, got {N}")
    i = np.arange(d // 2, dtype=np.float64)
    theta = 2 * math.pi / np.power(float(N), 2 * i / d)
    theta.setflags(write=False)
    return RotationRates(theta, N, d)


def zero_angles(d: int) -> np.ndarray:
    return np.zeros(d // 2)


def rotate(mu, v) -> np.ndarray:
    """Apply R(mu) to ``v`` along the last axis in O(d)."""
    mu = np.asarray(mu, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 2 * mu.shape[-1]:
        raise ValueError(f"vector length {v.shape[-1]} != 2 * angle count {mu.shape[-1]}")
    c, s = np.cos(mu), np.sin(mu)
    x, y = v[..., 0::2], v[..., 1::2]
    out = np.empty(np.broadcast_shapes(v.shape, mu.shape[:-1] + v.shape[-1:]))
    out[..., 0::2] = c * x - s * y
    out[..., 1::2] = s * x + c * y
    return out


def advance(mu, rates: RotationRates, beta: float = 1.0) -> np.ndarray:
    return np.asarray(mu, dtype=np.float64) + beta * rates.theta


def rotation_matrix(mu) -> np.ndarray:
    """Dense d x d form of R(mu). Used only as a reference."""
    mu = np.asarray(mu, dtype=np.float64)
    d = 2 * len(mu)
    R = np.zeros((d, d))
    for j, a in enumerate(mu):
        c, s = math.cos(a), math.sin(a)
        R[2 * j : 2 * j + 2, 2 * j : 2 * j + 2] = [[c, -s], [s, c]]
    return R


def solve_embedded_rotation(
    mu, basis: MultisetBasis, rng: RngStream, *, margin: int | None = None, retries: int = 5
) -> EmbeddedRotation:
    """Find the D x D matrix P with embed(R(mu) k) == P @ embed(k) for all k.

    P is recovered by least squares from random samples k; it is orthogonal
    because the feature map is an isometry of the symmetric tensor space.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if 2 * len(mu) != basis.d:
        raise ValueError(f"{len(mu)} angles do not match basis d={basis.d}")
    D = basis.D
    if D > MAX_EMBEDDED_D:
        raise ValueError(f"D={D} exceeds {MAX_EMBEDDED_D}; embedded rotation is not materialized")
    n = D + (margin if margin is not None else max(8, D // 4))
    for _ in range(retries + 1):
        ks = gauss(rng, (n, basis.d))
        phi = embed(ks, basis)
        if np.linalg.cond(phi) > 1e10:
            continue
        target = embed(rotate(mu, ks), basis)
        sol, *_ = np.linalg.lstsq(phi, target, rcond=None)
        P = sol.T
        residual = float(np.max(np.abs(phi @ P.T - target)) / max(1.0, np.max(np.abs(target))))
        orth_err = float(np.max(np.abs(P.T @ P - np.eye(D))))
        if residual > 1e-8 or orth_err > 1e-8:
            continue
        return EmbeddedRotation(P, residual, orth_err)
    raise IllConditionedError(f"could not solve embedded rotation after {retries + 1} attempts")
