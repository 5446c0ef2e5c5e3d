"""Symmetric power feature map.

``embed`` maps a vector v in R^d to R^D, D = C(d+p-1, p), such that
``embed(v) @ embed(w) == (v @ w) ** p``. Each output coordinate is one
monomial of degree p, indexed by a non-decreasing tuple of input indices and
scaled by the square root of its multinomial coefficient.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

COUNT_MAX = 2**63 - 1


def embed_dim(d: int, p: int) -> int:
    if d < 1 or p < 1:
        raise ValueError(f"need d >= 1 and p >= 1, got d={d}, p={p}")
    D = math.comb(d + p - 1, p)
    if D > COUNT_MAX:
        raise OverflowError(f"embedding dimension for d={d}, p={p} exceeds 64-bit count")
    return D


@dataclass(frozen=True, eq=False)
class MultisetBasis:
    """Lexicographically ordered multisets of size p over ``range(d)``.

    ``entries`` is a (D, p) int array of 0-based indices; ``coeffs`` holds
    sqrt(p! / prod(m_j!)) for each entry.
    """

    d: int
    p: int
    entries: np.ndarray = field(repr=False)
    coeffs: np.ndarray = field(repr=False)

    @property
    def D(self) -> int:
        return len(self.entries)

    def multinomials(self) -> np.ndarray:
        return np.rint(self.coeffs**2).astype(np.int64)


_BASIS_CACHE: dict[tuple[int, int], MultisetBasis] = {}


def build_basis(d: int, p: int) -> MultisetBasis:
    key = (d, p)
    if key in _BASIS_CACHE:
        return _BASIS_CACHE[key]
    D = embed_dim(d, p)
    if D > 50_000_000:
        raise MemoryError(f"refusing to materialize a basis with D={D}")
    entries = np.array(
        list(itertools.combinations_with_replacement(range(d), p)), dtype=np.int64
    ).reshape(D, p)
    fact_p = math.factorial(p)
    coeffs = np.empty(D, dtype=np.float64)
    for n, tup in enumerate(entries):
        denom = 1
        for _, grp in itertools.groupby(tup):
            denom *= math.factorial(len(list(grp)))
        coeffs[n] = math.sqrt(fact_p // denom)
    entries.setflags(write=False)
    coeffs.setflags(write=False)
    basis = MultisetBasis(d, p, entries, coeffs)
    _BASIS_CACHE[key] = basis
    return basis


def _check_len(v: np.ndarray, basis: MultisetBasis) -> None:
    if v.shape[-1] != basis.d:
        raise ValueError(f"vector length {v.shape[-1]} does not match basis d={basis.d}")


def embed(v, basis: MultisetBasis) -> np.ndarray:
    """Feature map applied along the last axis; leading axes are batch axes."""
    v = np.asarray(v, dtype=np.float64)
    _check_len(v, basis)
    gathered = v[..., basis.entries]  # (..., D, p)
    return basis.coeffs * np.prod(gathered, axis=-1)


def embed_jacobian(v, basis: MultisetBasis) -> np.ndarray:
    """d embed(v) / dv as a (D, d) matrix."""
    v = np.asarray(v, dtype=np.float64)
    _check_len(v, basis)
    if v.ndim != 1:
        raise ValueError("embed_jacobian takes a single vector")
    gathered = v[basis.entries]  # (D, p)
    jac = np.zeros((basis.D, basis.d))
    rows = np.arange(basis.D)
    for k in range(basis.p):
        others = np.prod(np.delete(gathered, k, axis=1), axis=1)
        np.add.at(jac, (rows, basis.entries[:, k]), basis.coeffs * others)
    return jac


def kernel(v, w, p: int):
    """Direct kernel (v.w)^p, the oracle for ``embed``."""
    return np.sum(np.asarray(v) * np.asarray(w), axis=-1) ** p
