"""Byte-level text ingestion and the synthetic key-value recall task."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import RngStream

FILLER = 0


def tokenize(data: bytes) -> np.ndarray:
    return np.frombuffer(bytes(data), dtype=np.uint8).astype(np.int64)


def detokenize(tokens) -> bytes:
    return bytes(np.asarray(tokens, dtype=np.uint8).tolist())


@dataclass
class TokenStream:
    tokens: np.ndarray
    resets: np.ndarray  # True where a document starts
    context: int

    def sequences(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Consecutive packed chunks of ``context`` tokens with their reset flags."""
        out = []
        for s in range(0, len(self.tokens), self.context):
            r = self.resets[s : s + self.context].copy()
            r[0] = True
            out.append((self.tokens[s : s + self.context], r))
        return out

    def __len__(self):
        return math.ceil(len(self.tokens) / self.context)


def ingest_text(path, context: int, delimiter: int | None = None) -> TokenStream:
    """Read a file as bytes and pack it into ``context``-length sequences.

    With a ``delimiter`` byte, the token after each delimiter starts a new
    document; attention and recurrent state never cross that boundary.
    """
    raw = Path(path).read_bytes()
    if not raw:
        raise ValueError(f"{path}: empty file")
    if context < 1:
        raise ValueError("context must be >= 1")
    tokens = tokenize(raw)
    resets = np.zeros(len(tokens), dtype=bool)
    resets[0] = True
    if delimiter is not None:
        hits = np.flatnonzero(tokens[:-1] == delimiter)
        resets[hits + 1] = True
    return TokenStream(tokens, resets, context)


def segment_ids(resets) -> np.ndarray:
    return np.cumsum(np.asarray(resets, dtype=np.int64), axis=-1)


@dataclass
class RecallInstance:
    tokens: np.ndarray
    targets: np.ndarray  # positions holding answer values
    keys: np.ndarray
    values: np.ndarray


def gen_recall_task(rng: RngStream, t: int, k: int, query_position: int | None = None,
                    n_queries: int | None = None, vocab: int = 256) -> RecallInstance:
    """Key-value recall instance of length ``t``.

    Layout: k (key, value) pairs, filler tokens up to ``query_position``,
    then (key, value) queries re-asking stored keys, then filler. Keys are
    distinct and never the filler byte; values are uniform over the
    vocabulary. Without ``n_queries`` the queries run to the end.
    """
    if k < 1 or 2 * k + 2 > t:
        raise ValueError(f"infeasible recall instance: k={k}, t={t}")
    if k > vocab - 1:
        raise ValueError("more keys than non-filler symbols")
    qpos = 2 * k if query_position is None else query_position
    if qpos < 2 * k or qpos + 2 > t:
        raise ValueError(f"query position {qpos} outside [{2 * k}, {t - 2}]")
    room = (t - qpos) // 2
    nq = room if n_queries is None else n_queries
    if not 1 <= nq <= room:
        raise ValueError(f"cannot fit {nq} queries after position {qpos} in length {t}")
    g = rng.generator
    keys = g.choice(np.arange(1, vocab), size=k, replace=False)
    values = g.integers(0, vocab, size=k)
    tokens = np.full(t, FILLER, dtype=np.int64)
    tokens[0 : 2 * k : 2] = keys
    tokens[1 : 2 * k : 2] = values
    which = g.integers(0, k, size=nq)
    qk = qpos + 2 * np.arange(nq)
    tokens[qk] = keys[which]
    tokens[qk + 1] = values[which]
    return RecallInstance(tokens, qk + 1, keys, values)


def recall_batch(rng: RngStream, batch: int, t: int, k: int, **kw):
    """Stack ``batch`` instances; returns (tokens, answer_mask) of shape (batch, t)."""
    toks = np.empty((batch, t), dtype=np.int64)
    mask = np.zeros((batch, t), dtype=bool)
    for b in range(batch):
        inst = gen_recall_task(rng.child(b), t, k, **kw)
        toks[b] = inst.tokens
        mask[b, inst.targets] = True
    return toks, mask
