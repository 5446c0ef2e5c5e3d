import math

import numpy as np
import pytest
import torch

from conformal_sympow.attention import SYMPOW_VARIANTS, Variant, attend
from conformal_sympow.model import (
    AdamState,
    ModelConfig,
    adam_step,
    backward,
    build_model,
    gpt2_small_config,
    overhead,
    param_count,
)
from conformal_sympow.rotary import make_rates

ALL = list(Variant)


def small(variant, **kw):
    base = dict(vocab=32, d_model=16, n_layers=1, n_heads=2, head_dim=4, max_doc=64, variant=variant)
    base.update(kw)
    return ModelConfig(**base)


def toks(vocab, B=2, t=12, seed=0):
    return torch.randint(0, vocab, (B, t + 1), generator=torch.Generator().manual_seed(seed))


@pytest.mark.parametrize("variant", ALL)
def test_zero_unembed_gives_uniform_loss(variant):
    m = build_model(small(variant, vocab=256), 0)
    x = toks(256)
    _, loss = m(x[:, :-1], x[:, 1:])
    assert abs(loss.item() - math.log(256)) <= 1e-6


def test_vocab_one_loss_zero():
    m = build_model(small(Variant.CONFORMAL_SYMPOW, vocab=1, zero_unembed=False), 0)
    x = torch.zeros(1, 9, dtype=torch.long)
    assert m(x[:, :-1], x[:, 1:])[1].item() == 0.0


def test_token_out_of_range():
    m = build_model(small(Variant.SYMPOW), 0)
    with pytest.raises(ValueError):
        m(torch.tensor([[0, 32]]))


def test_bad_config():
    with pytest.raises(ValueError):
        small(Variant.SYMPOW, power=3)
    with pytest.raises(ValueError):
        small(Variant.SYMPOW_ROTARY, head_dim=5)


def test_deterministic():
    x = toks(32)
    a = build_model(small(Variant.CONFORMAL_SYMPOW, zero_unembed=False), 3)(x[:, :-1], x[:, 1:])[1]
    b = build_model(small(Variant.CONFORMAL_SYMPOW, zero_unembed=False), 3)(x[:, :-1], x[:, 1:])[1]
    assert a.item() == b.item()


@pytest.mark.parametrize("variant", SYMPOW_VARIANTS)
def test_head_matches_numpy_attention(variant):
    cfg = small(variant)
    m = build_model(cfg, 1, torch.float64)
    with torch.no_grad():
        for p in (m.blocks[0].attn.w_gamma, m.blocks[0].attn.w_beta):
            if p is not None:
                p.normal_(0, 0.5)
    attn = m.blocks[0].attn
    x = torch.randn(1, 10, cfg.d_model, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
    log_gamma, beta = attn.gates(x)
    with torch.no_grad():
        Y = attn._quadratic(x, None, log_gamma, beta)
    rates = make_rates(cfg.head_dim, cfg.max_doc)
    for h in range(cfg.n_heads):
        ref = attend(variant, x[0].numpy(), attn.head_params(h), cfg.power, rates).Y
        assert np.max(np.abs(Y[0, h].numpy() - ref)) <= 1e-10 * np.max(np.abs(ref))


@pytest.mark.parametrize("variant", SYMPOW_VARIANTS)
def test_recurrent_inference_matches_quadratic(variant):
    m = build_model(small(variant, zero_unembed=False), 4, torch.float64)
    x = toks(32, t=16, seed=5)
    seg = torch.tensor([[0] * 7 + [1] * 9, [0] * 16])
    lq, _ = m(x[:, :-1], segments=seg)
    lr, _ = m(x[:, :-1], segments=seg, impl="recurrent")
    assert torch.max(torch.abs(lq - lr)).item() <= 1e-8


def test_segments_block_cross_document_attention():
    m = build_model(small(Variant.CONFORMAL_SYMPOW, zero_unembed=False), 4, torch.float64)
    x = toks(32, t=16, seed=6)[:, :-1]
    seg = torch.tensor([[0] * 6 + [1] * 10] * 2)
    full, _ = m(x, segments=seg)
    tail, _ = m(x[:, 6:])
    assert torch.max(torch.abs(full[:, 6:] - tail)).item() <= 1e-12


@pytest.mark.parametrize("variant", ALL)
def test_gradients_finite_and_gates_live(variant):
    m = build_model(small(variant, zero_unembed=False), 0)
    x = toks(32)
    grads = backward(m(x[:, :-1], x[:, 1:])[1], m)
    assert set(grads) == {n for n, _ in m.named_parameters()}
    assert all(torch.isfinite(g).all() for g in grads.values())
    for name, g in grads.items():
        if "w_gamma" in name or "w_beta" in name:
            assert g.norm().item() > 1e-12, name


def test_adam_zero_gradient_is_noop():
    p = {"w": torch.tensor([1.5, -2.0])}
    adam_step(p, {"w": torch.zeros(2)}, AdamState())
    assert p["w"].tolist() == [1.5, -2.0]


def test_adam_hand_trace():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    w = {"w": torch.tensor([0.0], dtype=torch.float64)}
    st = AdamState()
    adam_step(w, {"w": torch.tensor([1.0], dtype=torch.float64)}, st, lr=lr)
    # m=0.1, v=0.001; m_hat=1, v_hat=1 -> step lr/(1+eps)
    assert abs(w["w"].item() + lr / (1 + eps)) <= 1e-15
    adam_step(w, {"w": torch.tensor([-2.0], dtype=torch.float64)}, st, lr=lr)
    m2 = b1 * 0.1 + (1 - b1) * -2.0
    v2 = b2 * 0.001 + (1 - b2) * 4.0
    mh, vh = m2 / (1 - b1**2), v2 / (1 - b2**2)
    expected = -lr / (1 + eps) - lr * mh / (math.sqrt(vh) + eps)
    assert abs(w["w"].item() - expected) <= 1e-15
    assert st.step == 2


def test_adam_frozen():
    p = {"a": torch.tensor([1.0]), "b": torch.tensor([1.0])}
    adam_step(p, {"a": torch.tensor([1.0]), "b": torch.tensor([1.0])}, AdamState(), frozen=("b",))
    assert p["a"].item() < 1.0 and p["b"].item() == 1.0


def test_param_count_matches_module():
    for v in ALL:
        for tie in (False, True):
            cfg = small(v, tie_embeddings=tie)
            n = sum(p.numel() for p in build_model(cfg, 0).parameters())
            assert param_count(cfg) == n


def test_gpt2_overhead():
    ov = overhead(gpt2_small_config())
    assert 100e6 < ov["base_params"] < 140e6
    assert 0.0005 <= ov["gating"] <= 0.0015
    assert ov["gating_rotary"] == pytest.approx(2 * ov["gating"], rel=1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("variant", ALL)
def test_overfit_fixed_batch(variant):
    cfg = small(variant, d_model=32, n_layers=2, n_heads=2, head_dim=8, tie_embeddings=True)
    m = build_model(cfg, 0)
    params = dict(m.named_parameters())
    x = toks(32, B=2, t=24, seed=9)
    st = AdamState()
    first = None
    for _ in range(200):
        _, loss = m(x[:, :-1], x[:, 1:])
        first = loss.item() if first is None else first
        adam_step(params, backward(loss, m), st, lr=3e-3)
    assert m(x[:, :-1], x[:, 1:])[1].item() <= 0.5 * first
