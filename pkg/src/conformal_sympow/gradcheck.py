"""Central finite-difference check of the model's analytic gradients."""

from __future__ import annotations

import time

import torch

from .attention import Variant
from .model import ModelConfig, backward, build_model


def toy_check_config(variant=Variant.CONFORMAL_SYMPOW) -> ModelConfig:
    return ModelConfig(vocab=16, d_model=8, n_layers=1, n_heads=2, head_dim=4, power=2, max_doc=64,
                       variant=variant, zero_unembed=False)


def gradient_check(variant=Variant.CONFORMAL_SYMPOW, seed: int = 0, t: int = 8, h: float = 1e-5,
                   tol: float = 1e-4, cfg: ModelConfig | None = None):
    """Compare autograd against central differences for every parameter entry.

    Returns ``(SuiteResult, per_group_errors)``; the error of a group is
    max|analytic - fd| / max|fd|.
    """
    from .verify import SuiteResult

    t0 = time.perf_counter()
    cfg = cfg or toy_check_config(variant)
    model = build_model(cfg, seed, torch.float64)
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        # move gates and rotation scales off their zero init so those paths carry signal
        for name, p in model.named_parameters():
            if "w_gamma" in name or "w_beta" in name:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.5)
            elif "ln" in name:
                p.add_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.1)
            else:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.3)
    tokens = torch.randint(0, cfg.vocab, (2, t + 1), generator=gen)

    def loss_fn():
        return model(tokens[:, :-1], tokens[:, 1:])[1]

    grads = backward(loss_fn(), model)
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            fd = torch.empty_like(flat)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + h
                up = loss_fn().item()
                flat[k] = orig - h
                down = loss_fn().item()
                flat[k] = orig
                fd[k] = (up - down) / (2 * h)
            g = grads[name].reshape(-1)
            scale = max(fd.abs().max().item(), 1e-12)
            errors[name] = (g - fd).abs().max().item() / scale
    worst = max(errors.values())
    name = "gradient_check" if variant == Variant.CONFORMAL_SYMPOW else f"gradient_check_{Variant(variant).value}"
    res = SuiteResult(name, worst <= tol, worst, tol, len(errors), time.perf_counter() - t0)
    return res, errors
