"""Quadratic (attention) formulation of every sympow variant, in float64.

Preattention for sympow variants is computed pairwise from the literal
definitions: B_ij = b_ij * (Q_i . R(c_ij theta)^T K_j)^p, with b_ij and c_ij
taken from a :class:`GateTrack`. The feature map is never used here.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .gating import GateTrack, HeadParams, beta_values, constant_track, cumulate, log_gate_values
from .rotary import RotationRates, rotate


class Variant(str, enum.Enum):
    SYMPOW = "sympow"
    SYMPOW_ROTARY = "sympow_rotary"
    SYMPOW_GATED = "sympow_gated"
    SYMPOW_LEARNED_ROTARY = "sympow_learned_rotary"
    CONFORMAL_SYMPOW = "conformal_sympow"
    SOFTMAX = "softmax"
    SOFTMAX_ALIBI = "softmax_alibi"

    @property
    def is_sympow(self) -> bool:
        return not self.value.startswith("softmax")

    @property
    def rotary(self) -> bool:
        return self in (
            Variant.SYMPOW_ROTARY,
            Variant.SYMPOW_GATED,
            Variant.SYMPOW_LEARNED_ROTARY,
            Variant.CONFORMAL_SYMPOW,
            Variant.SOFTMAX,
        )

    @property
    def gated(self) -> bool:
        return self in (Variant.SYMPOW_GATED, Variant.CONFORMAL_SYMPOW)

    @property
    def learned_rotary(self) -> bool:
        return self in (Variant.SYMPOW_LEARNED_ROTARY, Variant.CONFORMAL_SYMPOW)

    @classmethod
    def parse(cls, name: str) -> "Variant":
        key = name.strip().lower().replace("-", "_").replace("+", "_")
        aliases = {"conformal": "conformal_sympow", "gated": "sympow_gated", "rotary": "sympow_rotary"}
        return cls(aliases.get(key, key))


SYMPOW_VARIANTS = [v for v in Variant if v.is_sympow]


class DegenerateAttentionError(ArithmeticError):
    def __init__(self, row: int, total: float):
        super().__init__(f"degenerate attention row {row} (row sum {total:.3e})")
        self.row = row


@dataclass(frozen=True, eq=False)
class AttentionTrace:
    B: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    track: GateTrack | None = None


class OpCounter:
    """Tally of scalar multiply-adds, used for cost-scaling checks."""

    def __init__(self):
        self.total = 0
        self.calls = 0

    def add(self, n: int) -> None:
        self.total += int(n)
        self.calls += 1

    def reset(self) -> None:
        self.total = 0
        self.calls = 0


def gate_track(variant: Variant, X, params: HeadParams) -> GateTrack:
    """The discount/rotation-scale tables a variant uses for input ``X``."""
    t = len(X)
    if variant.gated:
        log_gamma = log_gate_values(X, params.w_gamma, params.gamma_bias)
        gamma = np.exp(log_gamma)
    else:
        log_gamma = np.zeros(t)
        gamma = np.ones(t)
    beta = beta_values(X, params.w_beta) if variant.learned_rotary else np.ones(t)
    return cumulate(gamma, beta, log_gamma=log_gamma)


def preattention(
    variant: Variant,
    Q,
    K,
    p: int,
    *,
    rates: RotationRates | None = None,
    track: GateTrack | None = None,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """Causal t x t preattention matrix for a sympow variant."""
    variant = Variant(variant)
    if not variant.is_sympow:
        raise ValueError(f"{variant.value} has no sympow preattention; use softmax_attention")
    if p % 2:
        raise ValueError(f"power must be even for sympow attention, got p={p}")
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if Q.shape != K.shape or Q.ndim != 2:
        raise ValueError(f"Q {Q.shape} and K {K.shape} must be equal t x d matrices")
    t, d = Q.shape
    if track is None:
        track = constant_track(t)
    if variant.rotary:
        if rates is None:
            raise ValueError(f"{variant.value} needs rotation rates")
        if d % 2:
            raise ValueError("rotary variants need an even head dimension")
        # R(c theta)^T K_j == R(-c theta) K_j
        angles = -track.c[:, :, None] * rates.theta
        Kr = rotate(angles, K[None, :, :])
        dots = np.einsum("id,ijd->ij", Q, Kr)
    else:
        dots = Q @ K.T
    lower = np.tril(np.ones((t, t), dtype=bool))
    B = np.where(lower, dots**p, 0.0)
    if variant.gated:
        B = B * np.where(lower, np.exp(track.log_b), 0.0)
    if counter is not None:
        counter.add(t * (t + 1) // 2 * (d + p))
    return B


def normalize_and_attend(B, V, *, eps: float = 1e-30):
    B = np.asarray(B, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    totals = B.sum(axis=1)
    bad = np.flatnonzero(~(totals >= eps))
    if len(bad):
        raise DegenerateAttentionError(int(bad[0]), float(totals[bad[0]]))
    A = B / totals[:, None]
    return A, A @ V


def attend(variant: Variant, X, params: HeadParams, p: int, rates: RotationRates | None = None,
           counter: OpCounter | None = None) -> AttentionTrace:
    """Full head forward in the attention formulation."""
    variant = Variant(variant)
    Q, K, V = params.project(X)
    track = gate_track(variant, X, params)
    B = preattention(variant, Q, K, p, rates=rates, track=track, counter=counter)
    A, Y = normalize_and_attend(B, V)
    return AttentionTrace(B, A, Y, track)


def softmax_attention(Q, K, V, alibi_m: float | None = None, *, scale: float | None = None,
                      rates: RotationRates | None = None):
    """Causal softmax baseline, optionally with an ALiBi distance penalty.

    Scores are scaled by 1/sqrt(d) unless ``scale`` is given.
    """
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    t, d = Q.shape
    if rates is not None:
        mu = np.arange(1, t + 1)[:, None] * rates.theta
        Q, K = rotate(mu, Q), rotate(mu, K)
    scale = 1.0 / math.sqrt(d) if scale is None else scale
    S = scale * (Q @ K.T)
    if alibi_m is not None:
        idx = np.arange(t)
        S = S + alibi_m * (idx[None, :] - idx[:, None])
    lower = np.tril(np.ones((t, t), dtype=bool))
    S = np.where(lower, S, -np.inf)
    E = np.exp(S - S.max(axis=1, keepdims=True))
    A = E / E.sum(axis=1, keepdims=True)
    return A, A @ V
