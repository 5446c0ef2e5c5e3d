"""Conformal symmetric power attention: quadratic and recurrent formulations."""

from .attention import AttentionTrace, Variant, attend, normalize_and_attend, preattention, softmax_attention
from .gating import GateTrack, HeadParams, alibi_gamma, beta_values, cumulate, gate_values
from .recurrent import RecurrentState, output, run_recurrent, step, step_conformal_form
from .rotary import advance, make_rates, rotate, solve_embedded_rotation
from .sympow import MultisetBasis, build_basis, embed, embed_dim, embed_jacobian

__version__ = "0.1.0"
