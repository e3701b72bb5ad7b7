"""Run configuration: flat key=value files, environment and flag
overrides, and named random substreams derived from one run seed."""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

ENV_PREFIX = "MLKG_"


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose under the run seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode("utf-8"))]))


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


@dataclass
class RunConfig:
    corpus: str = ""
    graph: str = ""
    out: str = ""
    embed_file: str = ""
    embed_dim: int = 512
    embed_seed: int = 0
    dim: int = 128
    layers: int = 2
    query_attention: bool = True
    tau: float = 1.0
    negatives: int = 30
    lr: float = 0.0  # 0 means "mode default" (1e-4 pretrain, 5e-4 finetune)
    epochs: int = 0  # 0 means "mode default" (5 pretrain, 3 finetune)
    checkpoint_every: int = 0  # 0 means "mode default" (2000 pretrain, 100 finetune)
    holdout: float = 0.05
    batch_size: int = 32
    cap: int = 10
    seed: int = 0
    threads: int = 0  # 0 means machine parallelism

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.negatives < 1:
            raise ValueError(f"negatives must be >= 1, got {self.negatives}")
        if not 0.0 <= self.holdout < 1.0:
            raise ValueError(f"holdout must be in [0, 1), got {self.holdout}")
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.layers < 0:
            raise ValueError(f"layers must be >= 0, got {self.layers}")
        if self.embed_dim < 8:
            raise ValueError(f"embed_dim must be >= 8, got {self.embed_dim}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0.0 or self.epochs < 0 or self.checkpoint_every < 0:
            raise ValueError("lr, epochs, checkpoint_every must be non-negative")
        if self.threads < 0:
            raise ValueError(f"threads must be >= 0, got {self.threads}")
        if self.threads == 0:
            self.threads = os.cpu_count() or 1

    def effective_threads(self) -> int:
        return self.threads


_CASTERS = {str: str, int: int, float: float, bool: _parse_bool}


def _schema() -> dict[str, type]:
    return {f.name: f.type for f in fields(RunConfig)}


_TYPES = {"str": str, "int": int, "float": float, "bool": bool}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat `key = value` lines; # starts a comment; blank lines ignored."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{line_no}: expected key = value, got {stripped!r}")
            key, _, value = stripped.partition("=")
            values[key.strip()] = value.strip()
    return values


def load_config(
    path: str | Path | None = None, overrides: dict[str, object] | None = None
) -> RunConfig:
    """Assemble a RunConfig. Precedence: explicit overrides (flags) beat
    MLKG_* environment variables beat the file beat defaults."""
    schema = _schema()
    raw: dict[str, str] = {}
    if path is not None:
        raw.update(parse_config_file(path))
    for key in schema:
        env_value = os.environ.get(ENV_PREFIX + key.upper())
        if env_value is not None:
            raw[key] = env_value

    values: dict[str, object] = {}
    for key, text in raw.items():
        if key not in schema:
            raise ValueError(f"unknown configuration key {key!r}")
        typ = _TYPES[schema[key]] if isinstance(schema[key], str) else schema[key]
        try:
            values[key] = _CASTERS[typ](text)
        except ValueError as exc:
            raise ValueError(f"configuration key {key!r}: {exc}") from exc

    for key, value in (overrides or {}).items():
        if key not in schema:
            raise ValueError(f"unknown configuration key {key!r}")
        if value is not None:
            values[key] = value
    return RunConfig(**values)
