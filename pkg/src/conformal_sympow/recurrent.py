"""Linear-time recurrent formulation carrying (S, Z, mu).

Two update rules are provided:

* ``step``: rotate each key by the cumulative angle mu_i, embed, and add to a
  discounted state. Queries are rotated by mu_i before read-out.
* ``step_conformal_form``: embed keys unrotated and instead right-multiply
  the state by gamma_i * Rbar, where Rbar is the D x D rotation induced in
  feature space by R(beta_i theta). mu stays at zero in this form, so
  queries are read out unrotated.

Both give the same outputs as the quadratic formulation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .attention import OpCounter, Variant
from .gating import HeadParams, beta_values, log_gate_values
from .numerics import RngStream, check_finite
from .rotary import RotationRates, advance, rotate, solve_embedded_rotation, EmbeddedRotation
from .sympow import MultisetBasis, build_basis, embed, embed_dim

STATE_MAGIC = b"SYMPOWST"
STATE_VERSION = 1
_HEADER = struct.Struct("<8sIHH")


class DegenerateNormalizerError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class RecurrentState:
    S: np.ndarray  # d x D
    Z: np.ndarray  # D
    mu: np.ndarray  # d/2
    step: int
    basis: MultisetBasis

    @classmethod
    def zeros(cls, basis: MultisetBasis) -> "RecurrentState":
        d, D = basis.d, basis.D
        return cls(np.zeros((d, D)), np.zeros(D), np.zeros(d // 2) if d % 2 == 0 else np.zeros(0), 0, basis)

    def copy(self) -> "RecurrentState":
        return replace(self, S=self.S.copy(), Z=self.Z.copy(), mu=self.mu.copy())


@dataclass(frozen=True, eq=False)
class ConformalTransform:
    """x -> scale * x @ rotation.matrix, applied to state rows."""

    scale: float
    rotation: EmbeddedRotation

    def apply_right(self, M):
        return self.scale * (np.asarray(M) @ self.rotation.matrix)


def step(
    state: RecurrentState,
    variant: Variant,
    K_i,
    V_i,
    gamma_i: float = 1.0,
    beta_i: float = 1.0,
    rates: RotationRates | None = None,
    counter: OpCounter | None = None,
) -> RecurrentState:
    variant = Variant(variant)
    basis = state.basis
    K_i = np.asarray(K_i, dtype=np.float64)
    V_i = np.asarray(V_i, dtype=np.float64)
    if K_i.shape != (basis.d,) or V_i.shape != (basis.d,):
        raise ValueError(f"key/value shapes {K_i.shape}, {V_i.shape} do not match d={basis.d}")
    if not variant.gated:
        gamma_i = 1.0
    if variant.rotary:
        if rates is None:
            raise ValueError(f"{variant.value} needs rotation rates")
        mu = advance(state.mu, rates, beta_i if variant.learned_rotary else 1.0)
        k = rotate(mu, K_i)
    else:
        mu = state.mu
        k = K_i
    phi_k = embed(k, basis)
    S = gamma_i * state.S + np.outer(V_i, phi_k)
    Z = gamma_i * state.Z + phi_k
    if counter is not None:
        d, D = basis.d, basis.D
        counter.add(2 * d + D * basis.p + 2 * d * D + 2 * D)
    check_finite("recurrent state", S)
    return RecurrentState(S, Z, mu, state.step + 1, basis)


def output(state: RecurrentState, Q_i, *, eps: float = 0.0, guard: float = 1e-30,
           counter: OpCounter | None = None) -> np.ndarray:
    """Read out Y_i. ``eps`` is added to the normalizer instead of raising when > 0."""
    if state.step < 1:
        raise ValueError("no tokens have been processed")
    Q_i = np.asarray(Q_i, dtype=np.float64)
    q = rotate(state.mu, Q_i) if len(state.mu) else Q_i
    phi_q = embed(q, state.basis)
    num = state.S @ phi_q
    den = state.Z @ phi_q
    if counter is not None:
        d, D = state.basis.d, state.basis.D
        counter.add(2 * d + D * state.basis.p + d * D + D)
    if eps > 0:
        return num / (den + eps)
    if not abs(den) >= guard:
        raise DegenerateNormalizerError(f"degenerate normalizer {den:.3e} at step {state.step}")
    return num / den


def conformal_transform(gamma_i: float, beta_i: float, rates: RotationRates, basis: MultisetBasis,
                        rng: RngStream) -> ConformalTransform:
    rot = solve_embedded_rotation(beta_i * rates.theta, basis, rng)
    return ConformalTransform(float(gamma_i), rot)


def step_conformal_form(
    state: RecurrentState,
    K_i,
    V_i,
    gamma_i: float,
    beta_i: float,
    rates: RotationRates,
    rng: RngStream,
) -> RecurrentState:
    basis = state.basis
    if basis.D > 512:
        raise ValueError(f"D={basis.D} is too large to materialize the embedded rotation; use step()")
    T = conformal_transform(gamma_i, beta_i, rates, basis, rng)
    phi_k = embed(np.asarray(K_i, dtype=np.float64), basis)
    S = T.apply_right(state.S) + np.outer(V_i, phi_k)
    Z = T.apply_right(state.Z) + phi_k
    return RecurrentState(S, Z, state.mu, state.step + 1, basis)


def head_gates(variant: Variant, X, params: HeadParams):
    t = len(X)
    gamma = np.exp(log_gate_values(X, params.w_gamma, params.gamma_bias)) if variant.gated else np.ones(t)
    beta = beta_values(X, params.w_beta) if variant.learned_rotary else np.ones(t)
    return gamma, beta


def run_recurrent(
    variant: Variant,
    X,
    params: HeadParams,
    p: int,
    rates: RotationRates | None = None,
    *,
    resets=None,
    eps: float = 0.0,
    counter: OpCounter | None = None,
    state: RecurrentState | None = None,
    return_state: bool = False,
):
    """Fold ``step`` and ``output`` over a sequence; returns t x d outputs.

    ``resets[i]`` true clears the state before position i (document start).
    """
    variant = Variant(variant)
    if not variant.is_sympow:
        raise ValueError(f"{variant.value} has no recurrent formulation")
    X = np.asarray(X, dtype=np.float64)
    Q, K, V = params.project(X)
    gamma, beta = head_gates(variant, X, params)
    basis = build_basis(params.d, p)
    if state is None:
        state = RecurrentState.zeros(basis)
    Y = np.empty_like(V)
    for i in range(len(X)):
        if resets is not None and resets[i]:
            state = RecurrentState.zeros(basis)
        state = step(state, variant, K[i], V[i], gamma[i], beta[i], rates, counter=counter)
        Y[i] = output(state, Q[i], eps=eps, counter=counter)
    return (Y, state) if return_state else Y


def run_conformal_form(X, params: HeadParams, p: int, rates: RotationRates, rng: RngStream,
                       variant: Variant = Variant.CONFORMAL_SYMPOW) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    Q, K, V = params.project(X)
    gamma, beta = head_gates(Variant(variant), X, params)
    state = RecurrentState.zeros(build_basis(params.d, p))
    Y = np.empty_like(V)
    for i in range(len(X)):
        state = step_conformal_form(state, K[i], V[i], gamma[i], beta[i], rates, rng.child(i))
        Y[i] = output(state, Q[i])
    return Y


def state_nbytes(d: int, p: int, heads: int = 1, bytes_per: int = 8) -> int:
    return (d + 1) * embed_dim(d, p) * heads * bytes_per


def dump_state(state: RecurrentState) -> bytes:
    b = state.basis
    header = _HEADER.pack(STATE_MAGIC, STATE_VERSION, b.d, b.p)
    body = np.concatenate(
        [state.S.ravel(), state.Z, state.mu, np.array([float(state.step)])]
    ).astype("<f8")
    return header + body.tobytes()


def load_state(blob: bytes) -> RecurrentState:
    if len(blob) < _HEADER.size:
        raise ValueError("state snapshot truncated")
    magic, version, d, p = _HEADER.unpack_from(blob)
    if magic != STATE_MAGIC:
        raise ValueError(f"bad state magic {magic!r}")
    if version != STATE_VERSION:
        raise ValueError(f"unsupported state version {version}")
    basis = build_basis(d, p)
    D = basis.D
    body = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    n_mu = d // 2
    if len(body) != d * D + D + n_mu + 1:
        raise ValueError("state snapshot length does not match header")
    S = body[: d * D].reshape(d, D).copy()
    Z = body[d * D : d * D + D].copy()
    mu = body[d * D + D : d * D + D + n_mu].copy()
    return RecurrentState(S, Z, mu, int(body[-1]), basis)
