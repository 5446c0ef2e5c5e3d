"""Binary checkpoint format.

Layout (little-endian)::

    b"CSPWCKPT" | u32 version | u32 len | config text (utf-8)
    | u32 len | manifest JSON | tensor data

The manifest lists ``name``, ``shape``, ``dtype`` and byte ``offset`` (from
the start of the tensor data) for every stored array, plus a ``meta`` dict.
Tensors are float32 unless the run trains in float64, in which case they are
stored as float64 so a resumed run continues bitwise.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

CKPT_MAGIC = b"CSPWCKPT"
CKPT_VERSION = 1


def save_checkpoint(path, config_text: str, tensors: dict[str, np.ndarray], meta: dict | None = None,
                    dtype: str = "<f4") -> None:
    manifest = {"tensors": [], "meta": meta or {}}
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(np.asarray(arr), dtype=dtype)
        manifest["tensors"].append({"name": name, "shape": list(a.shape), "dtype": dtype, "offset": offset})
        raw = a.tobytes()
        blobs.append(raw)
        offset += len(raw)
    cfg = config_text.encode()
    man = json.dumps(manifest).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(man)))
        fh.write(man)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def load_checkpoint(path):
    """Return ``(config_text, tensors, meta)``."""
    blob = Path(path).read_bytes()
    if blob[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, n_cfg = struct.unpack_from("<II", blob, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    config_text = blob[pos : pos + n_cfg].decode()
    pos += n_cfg
    (n_man,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    manifest = json.loads(blob[pos : pos + n_man])
    base = pos + n_man
    tensors = {}
    for ent in manifest["tensors"]:
        dt = np.dtype(ent["dtype"])
        count = int(np.prod(ent["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=base + ent["offset"])
        tensors[ent["name"]] = arr.reshape(ent["shape"]).copy()
    return config_text, tensors, manifest.get("meta", {})
