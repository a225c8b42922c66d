"""Experiment configuration: one flat dataclass, a key=value file format,
and explicit precedence (command-line flag > config file > environment
default > built-in default)."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

OUT_ENV_VAR = "SKETCHLITE_OUT"


class ConfigError(ValueError):
    """Raised for unknown keys or uncoercible values."""


@dataclass(frozen=True)
class ExperimentConfig:
    # run identity / placement
    seed: int = 0
    out_dir: str = "runs"
    # canvases and sequence budget
    canvases: tuple = (32, 64, 128, 256)
    t_max: int = 100
    # model sizes
    embed_dim: int = 64
    policy_hidden: int = 128
    # loss weights
    margin: float = 0.2
    lam: float = 0.5
    beta: float = 1.0
    lam_r: float = 0.4
    lam_tri: float = 0.48
    lam_f: float = 0.35
    # optimization
    lr: float = 1e-4
    teacher_epochs: int = 20
    distill_epochs: int = 20
    selector_epochs: int = 50
    triplet_batch: int = 16
    selector_batch: int = 32
    steps_per_epoch: int = 0  # 0 -> one pass over the training sketches
    # completion grid for partial-sketch training
    completion_start: float = 0.30
    completion_step: float = 0.05
    completion_count: int = 15
    # reward ablation toggles
    use_rank: bool = True
    use_tri: bool = True
    use_baseline: bool = False
    # synthetic corpus
    n_classes: int = 20
    n_instances: int = 10
    n_sketches: int = 3
    data_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "canvases",
                           tuple(int(c) for c in self.canvases))
        if self.completion_count < 1:
            raise ConfigError("completion_count must be >= 1")
        if not 0.0 < self.completion_start <= 1.0:
            raise ConfigError("completion_start must lie in (0, 1]")

    @property
    def completions(self) -> tuple:
        out = tuple(round(self.completion_start + self.completion_step * i, 6)
                    for i in range(self.completion_count))
        if out[-1] > 1.0 + 1e-9:
            raise ConfigError(f"completion grid escapes 1.0: {out[-1]}")
        return out

    def resolved_out(self) -> Path:
        return Path(self.out_dir)


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    if kind is bool or kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        if kind is tuple or kind == "tuple":
            return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return raw


def parse_config_file(path) -> dict[str, str]:
    """key = value lines; '#' starts a comment; blank lines ignored."""
    values: dict[str, str] = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {ln}: expected key=value, got {line!r}")
        key, raw = body.split("=", 1)
        values[key.strip()] = raw.strip()
    return values


def build_config(file_values: dict[str, str] | None = None,
                 overrides: dict | None = None) -> ExperimentConfig:
    """Merge config-file values and typed overrides onto the defaults.

    ``overrides`` (already-typed, e.g. from argparse) win over the file;
    the output directory falls back to $SKETCHLITE_OUT when nothing else
    names one.
    """
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    merged: dict = {}
    for key, raw in (file_values or {}).items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = _coerce(key, known[key], raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = tuple(val) if key == "canvases" else val
    if "out_dir" not in merged and os.environ.get(OUT_ENV_VAR):
        merged["out_dir"] = os.environ[OUT_ENV_VAR]
    return ExperimentConfig(**merged)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    file_values = parse_config_file(path) if path else None
    return build_config(file_values, overrides)


def config_to_text(cfg: ExperimentConfig) -> str:
    """Render a config as a reloadable key=value file."""
    lines = []
    for f in fields(ExperimentConfig):
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


def replace(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return dataclasses.replace(cfg, **changes)
