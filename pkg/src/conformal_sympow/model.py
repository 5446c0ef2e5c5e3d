"""Toy decoder-only language model with sympow-family attention.

Training differentiates through the quadratic formulation with torch
autograd. The recurrent formulation is available for inference via
``attention_impl="recurrent"``; it routes each head through
:func:`conformal_sympow.recurrent.run_recurrent` in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import Variant
from .gating import HeadParams
from .recurrent import run_recurrent
from .rotary import make_rates

LOG_TINY = 1e-30


@dataclass
class ModelConfig:
    vocab: int = 256
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    head_dim: int = 16
    power: int = 2
    max_doc: int = 1024
    variant: Variant = Variant.CONFORMAL_SYMPOW
    ffn_mult: int = 4
    init_std: float = 0.02
    gate_bias: float = 0.0
    zero_unembed: bool = True
    tie_embeddings: bool = False

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.variant.is_sympow and (self.power < 2 or self.power % 2):
            raise ValueError(f"power must be even and >= 2, got {self.power}")
        if self.variant.rotary and self.head_dim % 2:
            raise ValueError(f"rotary variants need an even head dimension, got {self.head_dim}")


def rotate_pairs(x: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
    """Rotate consecutive pairs of the last axis by ``angles`` (..., d/2)."""
    c, s = torch.cos(angles), torch.sin(angles)
    a, b = x[..., 0::2], x[..., 1::2]
    return torch.stack((c * a - s * b, s * a + c * b), dim=-1).flatten(-2)


def alibi_slopes(n_heads: int) -> list[float]:
    return [2.0 ** (-8.0 * (h + 1) / n_heads) for h in range(n_heads)]


class SympowAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        H, m, d = cfg.n_heads, cfg.d_model, cfg.head_dim
        self.W_Q = nn.Parameter(torch.randn(H, m, d) * cfg.init_std)
        self.W_K = nn.Parameter(torch.randn(H, m, d) * cfg.init_std)
        self.W_V = nn.Parameter(torch.randn(H, m, d) * cfg.init_std)
        self.W_O = nn.Parameter(torch.randn(H * d, m) * cfg.init_std)
        v = cfg.variant
        self.w_gamma = nn.Parameter(torch.zeros(H, m)) if v.gated else None
        self.w_beta = nn.Parameter(torch.zeros(H, m)) if v.learned_rotary else None
        if v.rotary or v.learned_rotary:
            self.register_buffer("theta", torch.from_numpy(make_rates(d, cfg.max_doc).theta.copy()),
                                 persistent=False)
        else:
            self.theta = None
        self.stats: dict[str, torch.Tensor] = {}

    def gates(self, x):
        """Per-position log(gamma) and beta, each (B, H, t)."""
        B, t, _ = x.shape
        H = self.cfg.n_heads
        if self.w_gamma is not None:
            log_gamma = F.logsigmoid(torch.einsum("btm,hm->bht", x, self.w_gamma) + self.cfg.gate_bias)
        else:
            log_gamma = None
        if self.w_beta is not None:
            beta = 1.0 + torch.tanh(torch.einsum("btm,hm->bht", x, self.w_beta))
        else:
            beta = x.new_ones(B, H, t)
        return log_gamma, beta

    def head_params(self, h: int) -> HeadParams:
        def np64(t):
            return t.detach().to(torch.float64).cpu().numpy()

        m = self.cfg.d_model
        zeros = np.zeros(m)
        return HeadParams(
            np64(self.W_Q[h]),
            np64(self.W_K[h]),
            np64(self.W_V[h]),
            np64(self.w_gamma[h]) if self.w_gamma is not None else zeros,
            np64(self.w_beta[h]) if self.w_beta is not None else zeros,
            gamma_bias=self.cfg.gate_bias,
        )

    def forward(self, x, segments=None, impl: str = "quadratic"):
        cfg = self.cfg
        v = cfg.variant
        B, t, _ = x.shape
        log_gamma, beta = self.gates(x)
        self.stats = {
            "gamma": log_gamma.detach().exp() if log_gamma is not None else None,
            "beta": beta.detach() if self.w_beta is not None else None,
        }
        if impl == "recurrent":
            Y = self._recurrent(x, segments)
        else:
            Y = self._quadratic(x, segments, log_gamma, beta)
        return Y.transpose(1, 2).reshape(B, t, -1) @ self.W_O

    def _quadratic(self, x, segments, log_gamma, beta):
        cfg = self.cfg
        v = cfg.variant
        t = x.shape[1]
        Q = torch.einsum("btm,hmd->bhtd", x, self.W_Q)
        K = torch.einsum("btm,hmd->bhtd", x, self.W_K)
        V = torch.einsum("btm,hmd->bhtd", x, self.W_V)
        if v.rotary:
            # (R(mu_i) q)^T (R(mu_j) k) == q^T R(c_ij theta)^T k with mu = cumsum(beta) theta
            mu = torch.cumsum(beta, dim=-1).unsqueeze(-1) * self.theta
            Q = rotate_pairs(Q, mu)
            K = rotate_pairs(K, mu)
        dots = Q @ K.transpose(-1, -2)
        mask = torch.ones(t, t, dtype=torch.bool, device=x.device).tril()
        if segments is not None:
            mask = mask & (segments[:, None, :, None] == segments[:, None, None, :])
        if v.is_sympow:
            logits = 0.5 * cfg.power * torch.log(dots * dots + LOG_TINY)
            if log_gamma is not None:
                L = torch.cumsum(log_gamma, dim=-1)
                logits = logits + (L.unsqueeze(-1) - L.unsqueeze(-2))
        else:
            logits = dots / math.sqrt(cfg.head_dim)
            if v is Variant.SOFTMAX_ALIBI:
                slopes = torch.tensor(alibi_slopes(cfg.n_heads), dtype=x.dtype, device=x.device)
                idx = torch.arange(t, device=x.device, dtype=x.dtype)
                logits = logits + slopes[:, None, None] * (idx[None, :] - idx[:, None])
        logits = logits.masked_fill(~mask, float("-inf"))
        A = torch.softmax(logits, dim=-1)
        return A @ V

    @torch.no_grad()
    def _recurrent(self, x, segments):
        cfg = self.cfg
        if not cfg.variant.is_sympow:
            raise ValueError(f"{cfg.variant.value} has no recurrent formulation")
        rates = make_rates(cfg.head_dim, cfg.max_doc) if cfg.variant.rotary else None
        Bsz, t, _ = x.shape
        X = x.detach().to(torch.float64).cpu().numpy()
        if segments is not None:
            seg = segments.cpu().numpy()
            resets = np.concatenate([np.ones((Bsz, 1), bool), seg[:, 1:] != seg[:, :-1]], axis=1)
        else:
            resets = np.zeros((Bsz, t), bool)
        out = np.empty((Bsz, cfg.n_heads, t, cfg.head_dim))
        for h in range(cfg.n_heads):
            hp = self.head_params(h)
            for b in range(Bsz):
                out[b, h] = run_recurrent(cfg.variant, X[b], hp, cfg.power, rates, resets=resets[b], eps=1e-12)
        return torch.from_numpy(out).to(x.dtype)


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = SympowAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        hidden = cfg.ffn_mult * cfg.d_model
        self.fc1 = nn.Linear(cfg.d_model, hidden)
        self.fc2 = nn.Linear(hidden, cfg.d_model)
        for lin in (self.fc1, self.fc2):
            nn.init.normal_(lin.weight, std=cfg.init_std)
            nn.init.zeros_(lin.bias)

    def forward(self, x, segments=None, impl="quadratic"):
        x = x + self.attn(self.ln1(x), segments, impl)
        return x + self.fc2(F.gelu(self.fc1(self.ln2(x))))


class ToyLM(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Parameter(torch.randn(cfg.vocab, cfg.d_model) * cfg.init_std)
        self.ln_emb = nn.LayerNorm(cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        if cfg.tie_embeddings:
            self.unembed = None
        elif cfg.zero_unembed:
            self.unembed = nn.Parameter(torch.zeros(cfg.d_model, cfg.vocab))
        else:
            self.unembed = nn.Parameter(torch.randn(cfg.d_model, cfg.vocab) * cfg.init_std)

    def forward(self, tokens, targets=None, loss_mask=None, segments=None, impl="quadratic"):
        """Return ``(logits, loss)``; loss is None without targets.

        ``loss_mask`` selects which positions contribute to the mean loss.
        """
        if tokens.min() < 0 or tokens.max() >= self.cfg.vocab:
            raise ValueError(f"token id out of range [0, {self.cfg.vocab})")
        x = self.ln_emb(self.tok_emb[tokens])
        for blk in self.blocks:
            x = blk(x, segments, impl)
        W = self.tok_emb.T if self.unembed is None else self.unembed
        logits = self.ln_f(x) @ W
        if targets is None:
            return logits, None
        nll = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="none")
        if loss_mask is None:
            loss = nll.mean()
        else:
            m = loss_mask.reshape(-1).to(nll.dtype)
            loss = (nll * m).sum() / m.sum()
        return logits, loss

    def gate_stats(self) -> dict[str, tuple[float, float, float]]:
        out = {}
        for key in ("gamma", "beta"):
            vals = [blk.attn.stats.get(key) for blk in self.blocks]
            vals = [v for v in vals if v is not None]
            if vals:
                allv = torch.cat([v.reshape(-1) for v in vals])
                out[key] = (allv.mean().item(), allv.min().item(), allv.max().item())
            else:
                out[key] = (1.0, 1.0, 1.0)
        return out


def build_model(cfg: ModelConfig, seed: int, dtype=torch.float32) -> ToyLM:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = ToyLM(cfg).to(dtype)
    finally:
        torch.random.set_rng_state(gen_state)
    return model


def backward(loss: torch.Tensor, model: nn.Module) -> dict[str, torch.Tensor]:
    """Populate and return gradients for every parameter, zero where unused."""
    params = dict(model.named_parameters())
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    return {n: (g if g is not None else torch.zeros_like(p)) for (n, p), g in zip(params.items(), grads)}


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: AdamState,
              lr: float = 6e-4, betas=(0.9, 0.999), eps: float = 1e-8, frozen=()) -> AdamState:
    """In-place Adam update with bias correction. ``frozen`` names are skipped."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        if name in frozen:
            continue
        g = grads[name]
        m = state.m.setdefault(name, torch.zeros_like(p))
        v = state.v.setdefault(name, torch.zeros_like(p))
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return state


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count of :class:`ToyLM` for ``cfg``."""
    m, H, d, V = cfg.d_model, cfg.n_heads, cfg.head_dim, cfg.vocab
    hidden = cfg.ffn_mult * m
    attn = 3 * H * m * d + H * d * m
    if cfg.variant.gated:
        attn += H * m
    if cfg.variant.learned_rotary:
        attn += H * m
    layer = 2 * 2 * m + attn + (m * hidden + hidden) + (hidden * m + m)
    total = V * m + 2 * m + cfg.n_layers * layer + 2 * m
    if not cfg.tie_embeddings:
        total += m * V
    return total


def gpt2_small_config(variant=Variant.SYMPOW_ROTARY) -> ModelConfig:
    """GPT-2 small shape: 12 layers, 12 heads of 64, width 768, tied 50257 vocab."""
    return ModelConfig(vocab=50257, d_model=768, n_layers=12, n_heads=12, head_dim=64, power=2,
                       variant=variant, tie_embeddings=True)


def overhead(cfg: ModelConfig) -> dict[str, float]:
    """Relative parameter increase of gating and gating+learned rotary over fixed rotary."""
    base = param_count(_with_variant(cfg, Variant.SYMPOW_ROTARY))
    gated = param_count(_with_variant(cfg, Variant.SYMPOW_GATED))
    conformal = param_count(_with_variant(cfg, Variant.CONFORMAL_SYMPOW))
    return {
        "base_params": base,
        "gating": (gated - base) / base,
        "gating_rotary": (conformal - base) / base,
    }


def _with_variant(cfg: ModelConfig, variant: Variant) -> ModelConfig:
    from dataclasses import replace

    return replace(cfg, variant=variant)
