"""Run configuration: a flat ``key = value`` text file with ``#`` comments."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .attention import Variant
from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    variant: Variant = Variant.CONFORMAL_SYMPOW
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    head_dim: int = 16
    power: int = 2
    context: int = 256
    max_doc: int = 1024
    vocab: int = 256
    seed: int = 0
    lr: float = 6e-4
    steps: int = 2000
    batch: int = 16
    eval_lengths: list = field(default_factory=lambda: [64, 256, 1024])
    eval_batch: int = 4
    recall_pairs: int = 8
    delimiter: int = -1
    gate_bias: float = 0.0
    tie_embeddings: bool = False
    precision: int = 32
    log_interval: int = 50
    ckpt_interval: int = 500
    verify_instances: int = 10
    tolerances: dict = field(default_factory=dict)
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.variant = Variant.parse(self.variant) if isinstance(self.variant, str) else Variant(self.variant)
        self.validate()

    def validate(self) -> None:
        if self.variant.is_sympow and (self.power < 2 or self.power % 2):
            raise ConfigError(f"power must be even and >= 2, got {self.power}")
        if self.head_dim < 2 or self.head_dim % 2:
            raise ConfigError(f"head_dim must be even and >= 2, got {self.head_dim}")
        if self.context < 1:
            raise ConfigError("context must be >= 1")
        if list(self.eval_lengths) != sorted(self.eval_lengths):
            raise ConfigError("eval_lengths must be sorted ascending")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        if self.vocab < 2:
            raise ConfigError("vocab must be >= 2")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            vocab=self.vocab,
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            head_dim=self.head_dim,
            power=self.power,
            max_doc=self.max_doc,
            variant=self.variant,
            gate_bias=self.gate_bias,
            tie_embeddings=self.tie_embeddings,
        )

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, Variant):
        return value.value
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if isinstance(value, dict):
        return ",".join(f"{k}={v}" for k, v in value.items())
    return str(value)


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    try:
        if name == "variant":
            return Variant.parse(raw)
        if name == "eval_lengths":
            return [int(x) for x in raw.split(",") if x.strip()]
        if name == "tolerances":
            out = {}
            for item in filter(None, (x.strip() for x in raw.split(","))):
                key, val = item.split("=")
                out[key.strip()] = float(val)
            return out
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError("expected a boolean")
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw, 0)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {raw!r} ({exc})") from None


_KINDS = {"bool": bool, "int": int, "float": float, "str": str}


def parse_config(text: str, env=None) -> RunConfig:
    env = os.environ if env is None else env
    known = {f.name: f for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, _KINDS.get(str(known[key].type), None), raw)
    if env.get("CSPW_SEED"):
        values["seed"] = _coerce("seed", int, env["CSPW_SEED"])
    try:
        return RunConfig(**values)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, env=None) -> RunConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, env)
