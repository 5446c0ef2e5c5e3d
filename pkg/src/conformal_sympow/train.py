"""Training loop, per-position evaluation and their on-disk artifacts."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config
from .data import TokenStream, ingest_text, recall_batch, segment_ids
from .model import AdamState, ToyLM, adam_step, backward, build_model
from .numerics import RngStream

log = logging.getLogger(__name__)

METRICS_HEADER = ["step", "loss", "wall_ms", "gamma_mean", "gamma_min", "gamma_max",
                  "beta_mean", "beta_min", "beta_max"]
EVAL_HEADER = ["length", "position_bucket", "mean_loss", "n_tokens"]
MAX_EVAL_LENGTH = 2**20
TRAIN_STREAM = 1 << 20
EVAL_STREAM = 1 << 21


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    initial_loss: float
    final_loss: float
    losses: list = field(default_factory=list)
    checkpoint: Path | None = None
    metrics: Path | None = None


def torch_dtype(precision: int):
    return torch.float64 if precision == 64 else torch.float32


class Batcher:
    """Deterministic batches keyed by ``(seed, step)``."""

    def __init__(self, cfg: RunConfig, stream: TokenStream | None = None):
        self.cfg = cfg
        self.stream = stream

    def __call__(self, step: int):
        cfg = self.cfg
        rng = RngStream(cfg.seed, TRAIN_STREAM + step)
        if self.stream is None:
            toks, mask = recall_batch(rng, cfg.batch, cfg.context + 1, cfg.recall_pairs, vocab=cfg.vocab)
            return torch.from_numpy(toks), torch.from_numpy(mask[:, 1:]), None
        return self._text_batch(rng, cfg.context + 1, cfg.batch)

    def _text_batch(self, rng, length, batch):
        toks, resets = self.stream.tokens, self.stream.resets
        n = len(toks)
        length = min(length, n)
        if length < 2:
            raise ValueError("text stream too short to form a training pair")
        starts = rng.generator.integers(0, n - length + 1, size=batch)
        t = np.stack([toks[s : s + length] for s in starts])
        r = np.stack([resets[s : s + length] for s in starts])
        r[:, 0] = True
        seg = segment_ids(r[:, :-1])
        return torch.from_numpy(t), None, torch.from_numpy(seg)


def _metrics_row(step, loss, wall_ms, model: ToyLM):
    st = model.gate_stats()
    return [step, f"{loss:.6f}", f"{wall_ms:.1f}", *(f"{x:.6f}" for x in st["gamma"]),
            *(f"{x:.6f}" for x in st["beta"])]


def _model_tensors(model: ToyLM, opt: AdamState) -> dict:
    out = {}
    for name, p in model.named_parameters():
        out[name] = p.detach().cpu().numpy()
        if name in opt.m:
            out["adam.m." + name] = opt.m[name].cpu().numpy()
            out["adam.v." + name] = opt.v[name].cpu().numpy()
    return out


def save_run(path, cfg: RunConfig, model: ToyLM, opt: AdamState, step: int, extra: dict | None = None):
    meta = {"step": step, "adam_step": opt.step, "precision": cfg.precision}
    meta.update(extra or {})
    dtype = "<f8" if cfg.precision == 64 else "<f4"
    save_checkpoint(path, cfg.to_text(), _model_tensors(model, opt), meta, dtype=dtype)


def load_run(path, env=None):
    """Rebuild ``(cfg, model, adam_state, step)`` from a checkpoint."""
    text, tensors, meta = load_checkpoint(path)
    cfg = parse_config(text, env={} if env is None else env)
    dt = torch_dtype(cfg.precision)
    model = build_model(cfg.model_config(), cfg.seed, dt)
    opt = AdamState(step=int(meta.get("adam_step", 0)))
    with torch.no_grad():
        for name, p in model.named_parameters():
            p.copy_(torch.from_numpy(tensors[name]).to(dt))
            if "adam.m." + name in tensors:
                opt.m[name] = torch.from_numpy(tensors["adam.m." + name]).to(dt)
                opt.v[name] = torch.from_numpy(tensors["adam.v." + name]).to(dt)
    return cfg, model, opt, int(meta.get("step", 0))


def cmd_train(cfg: RunConfig, data: str | None = None, *, out_dir=None, resume=None,
              frozen=(), quiet: bool = False) -> TrainResult:
    """Train a toy model; writes ``metrics.csv`` and ``checkpoint.bin`` to ``out_dir``."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stream = None
    if data is not None:
        delim = None if cfg.delimiter < 0 else cfg.delimiter
        stream = ingest_text(data, cfg.context + 1, delim)
    if resume is not None:
        _, model, opt, start = load_run(resume)
    else:
        model = build_model(cfg.model_config(), cfg.seed, torch_dtype(cfg.precision))
        opt, start = AdamState(), 0
    params = dict(model.named_parameters())
    batches = Batcher(cfg, stream)
    metrics_path = out / "metrics.csv"
    ckpt_path = out / "checkpoint.bin"
    mode = "a" if resume is not None and metrics_path.exists() else "w"
    losses = []
    t0 = time.perf_counter()
    with open(metrics_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(METRICS_HEADER)
        for step in range(start, cfg.steps):
            tokens, mask, seg = batches(step)
            _, loss = model(tokens[:, :-1], tokens[:, 1:], mask, seg)
            value = loss.item()
            if not math.isfinite(value):
                dump = {"step": step, "seed": cfg.seed, "batch_stream": TRAIN_STREAM + step, "loss": value}
                (out / "nan_dump.json").write_text(json.dumps(dump, indent=2))
                raise TrainingDiverged(f"non-finite loss at step {step} (seed {cfg.seed}); see nan_dump.json")
            losses.append(value)
            grads = backward(loss, model)
            adam_step(params, grads, opt, lr=cfg.lr, frozen=frozen)
            last = step == cfg.steps - 1
            if step % cfg.log_interval == 0 or last:
                writer.writerow(_metrics_row(step, value, 1000 * (time.perf_counter() - t0), model))
                fh.flush()
                if not quiet:
                    log.info("step %d loss %.4f", step, value)
            if cfg.ckpt_interval and (step + 1) % cfg.ckpt_interval == 0 and not last:
                save_run(out / f"checkpoint_{step + 1}.bin", cfg, model, opt, step + 1)
    save_run(ckpt_path, cfg, model, opt, cfg.steps)
    tail = losses[-min(50, len(losses)):] if losses else [float("nan")]
    return TrainResult(losses[0] if losses and start == 0 else float("nan"), float(np.mean(tail)),
                       losses, ckpt_path, metrics_path)


def position_buckets(L: int) -> list[tuple[int, int]]:
    """Log-spaced buckets [1,1], [2,3], [4,7], ... clipped to L."""
    out, lo = [], 1
    while lo <= L:
        hi = min(2 * lo - 1, L)
        out.append((lo, hi))
        lo *= 2
    return out


@torch.no_grad()
def per_position_loss(model: ToyLM, tokens, segments=None, impl="recurrent") -> np.ndarray:
    """Next-token loss at every position, shape (batch, L)."""
    if impl == "recurrent" and not model.cfg.variant.is_sympow:
        impl = "quadratic"
    logits, _ = model(tokens[:, :-1], segments=segments, impl=impl)
    logp = torch.log_softmax(logits.to(torch.float64), dim=-1)
    nll = -logp.gather(-1, tokens[:, 1:, None]).squeeze(-1)
    return nll.numpy()


def eval_batch(cfg: RunConfig, L: int, data: str | None = None):
    rng = RngStream(cfg.seed, EVAL_STREAM + L)
    if data is None:
        toks, _ = recall_batch(rng, cfg.eval_batch, L + 1, cfg.recall_pairs, vocab=cfg.vocab)
        return torch.from_numpy(toks), None
    delim = None if cfg.delimiter < 0 else cfg.delimiter
    stream = ingest_text(data, L + 1, delim)
    seqs = [s for s in stream.sequences() if len(s[0]) == L + 1][: cfg.eval_batch]
    if not seqs:
        raise ValueError(f"{data}: too short for evaluation length {L}")
    toks = np.stack([s[0] for s in seqs])
    seg = segment_ids(np.stack([s[1] for s in seqs])[:, :-1])
    return torch.from_numpy(toks), torch.from_numpy(seg)


def cmd_eval(checkpoint, lengths, out_path=None, *, data: str | None = None, impl="recurrent"):
    """Per-position-bucket loss for each evaluation length; returns CSV rows."""
    cfg, model, _, _ = load_run(checkpoint)
    rows = []
    for L in lengths:
        if L > MAX_EVAL_LENGTH:
            raise ValueError(f"evaluation length {L} exceeds cap {MAX_EVAL_LENGTH}")
        tokens, seg = eval_batch(cfg, L, data)
        nll = per_position_loss(model, tokens, seg, impl)
        for lo, hi in position_buckets(nll.shape[1]):
            chunk = nll[:, lo - 1 : hi]
            rows.append([L, f"{lo}-{hi}", float(chunk.mean()), int(chunk.size)])
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EVAL_HEADER)
            for r in rows:
                w.writerow([r[0], r[1], f"{r[2]:.6f}", r[3]])
    return rows
