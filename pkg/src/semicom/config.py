"""Run configuration: flat key=value text with defaults and validation.

The file format is one `key = value` per line; blank lines and lines
starting with `#` are ignored. ``write_config`` emits a normalized form
(fixed key order, canonical value formatting) whose hash identifies the
run in artifact manifests.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass
class RunConfig:
    # input/output paths
    edges: str = ""
    communities: str = ""
    features: str = ""
    out_dir: str = "out"
    # encoder / matching
    k: int = 2
    dim: int = 64
    margin: float = 0.4
    dropout: float = 0.2
    locator_lr: float = 1e-4
    locator_batches: int = 32
    locator_pairs: int = 50
    locator_epochs: int = 2
    n_outputs: int = 0          # 0: default to 10x the training-community count
    eta: float = -1.0           # >= 0 switches matching to the distance threshold
    # rewriter
    rewriter_lr: float = 1e-3
    rewriter_epochs: int = 1200
    rewriter_episodes: int = 20
    boundary_cap: int = 10
    step_cap: int = 0           # 0: max(community size cap, 20)
    # data handling
    preprocess: bool = True
    percentile: float = 0.9
    sample_count: int = 1000
    train_size: int = 90
    val_size: int = 10
    filter_overlap: bool = False
    filter_threshold: float = 0.5
    # execution
    seed: int = 0
    workers: int = 1

    def validate(self) -> "RunConfig":
        if self.k not in (1, 2):
            raise ValueError("k must be 1 or 2")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 < self.percentile <= 1.0:
            raise ValueError("percentile must be in (0, 1]")
        if not 0.0 <= self.filter_threshold <= 1.0:
            raise ValueError("filter_threshold must be in [0, 1]")
        for name in ("locator_batches", "locator_pairs", "locator_epochs",
                     "rewriter_epochs", "rewriter_episodes", "boundary_cap",
                     "sample_count", "train_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("locator_lr", "rewriter_lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.val_size < 0 or self.n_outputs < 0 or self.step_cap < 0:
            raise ValueError("val_size, n_outputs, and step_cap must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        return self


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(kind, raw: str):
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    return kind(raw)


def parse_config(text: str) -> RunConfig:
    """Parse key=value text into a validated RunConfig."""
    kinds = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    values = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected key = value")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in kinds:
            raise ValueError(f"config line {ln}: unknown key {key!r}")
        try:
            values[key] = _parse_value(kinds[key], raw)
        except ValueError as exc:
            raise ValueError(f"config line {ln}: {exc}") from None
    return RunConfig(**values).validate()


def read_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def write_config(cfg: RunConfig) -> str:
    """Normalized text form: every key, field order, canonical values."""
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n"
                   for f in fields(RunConfig))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(write_config(cfg).encode("utf-8")).hexdigest()[:16]
