"""Flat key=value run configuration shared by every command.

File syntax is one ``key = value`` per line, ``#`` starts a comment, blank
lines are ignored. Unknown keys are rejected. Values are coerced to the type
of the field default.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .model import EncoderConfig
from .train import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = 1
    # corpus
    n_patients: int = 40
    segments_per_patient: int = 280
    hr_min: float = 50.0
    hr_max: float = 150.0
    noise_policy: str = "default"
    sample_rate_hz: int = 40
    # preprocessing
    target_hz: int = 40
    duration_s: float = 30.0
    # pairing and curriculum
    window_s: float = 300.0
    bad_threshold: float = 0.2
    eps_good: float = 0.0
    n_stages: int = 4
    # model
    n_blocks: int = 4
    base_channels: int = 8
    embedding_dim: int = 64
    z_dim: int = 128
    stem_kernel: int = 7
    block_kernel: int = 3
    projector_norm: str = "batch"
    # optimization
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs_per_stage: int = 1
    precision: str = "float32"
    # fine-tuning
    finetune_mode: str = "all"
    task: str = "regression"
    finetune_epochs: int = 10
    finetune_learning_rate: float = 0.002
    indomain_epochs_per_stage: int = 1
    # evaluation
    n_bins: int = 10
    metric: str = "mae"
    # gradient check
    gradcheck_cases: int = 100

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.hr_min > self.hr_max:
            raise ConfigError("hr_min must not exceed hr_max")
        if self.n_stages < 1:
            raise ConfigError("n_stages must be >= 1")
        if self.metric not in ("mae", "f1"):
            raise ConfigError("metric must be mae or f1")
        # surface invalid module settings at load time rather than mid-run
        try:
            self.encoder_config(1200)
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def encoder_config(self, input_length: int | None = None) -> EncoderConfig:
        length = input_length if input_length is not None else int(round(self.duration_s * self.target_hz))
        return EncoderConfig(self.n_blocks, self.base_channels, self.embedding_dim, length, self.z_dim,
                             self.stem_kernel, self.block_kernel, self.projector_norm)

    def train_config(self, learning_rate: float | None = None, epochs_per_stage: int | None = None) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate if learning_rate is None else learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            epochs_per_stage=self.epochs_per_stage if epochs_per_stage is None else epochs_per_stage,
            seed=self.seed,
            precision=self.precision,
        )

    def render(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None
    return raw


def parse_text(text: str, source: str = "<config>") -> dict[str, object]:
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load(path=None, overrides: dict[str, object] | None = None) -> RunConfig:
    """File values first, then ``overrides`` (already typed or raw strings)."""
    values: dict[str, object] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_text(text, str(path)))
    for key, value in (overrides or {}).items():
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, value) if isinstance(value, str) else value
    try:
        return dataclasses.replace(RunConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
