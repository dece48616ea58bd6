"""Experiment configuration: a flat, typed, versioned key-value file.

Files use INI syntax with a single ``[experiment]`` section::

    [experiment]
    schema_version = 1
    method = mpssl
    seeds = 0, 1, 2
    labeled_fraction = 0.1

Unknown keys, wrong types and unsupported schema versions are errors.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import typing
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..foundation import FoundationSpec, TaskSpec
from ..lmo import GAP_VARIANTS, META_MODES, OuterStepConfig
from ..latent_search import CONVERTER_MODES
from ..losses import DISTANCES, GAP_KINDS
from ..trainer import METHODS, UNSUP_LOSSES, TrainLoopConfig

CONFIG_SCHEMA_VERSION = 1
SECTION = "experiment"


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = CONFIG_SCHEMA_VERSION
    name: str = "experiment"
    method: str = "mpssl"
    seeds: tuple[int, ...] = (0, 1, 2)
    # foundation domain
    num_foundation_classes: int = 10
    data_dim: int = 8
    latent_dim: int = 4
    foundation_seed: int = 0
    separation: float = 6.0
    generator_backend: str = "analytic"
    # target task
    num_classes: int = 4
    samples_per_class: int = 80
    test_per_class: int = 250
    labeled_fraction: float = 0.1
    shift_scale: float = 0.3
    shift_offset: float = 0.0
    noise_scale: float = 3.5
    # classifier training
    epochs: int = 60
    steps_per_epoch: int = 10
    batch_size: int = 64
    val_batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    milestones: tuple[int, ...] = (20, 40, 52)
    hidden: tuple[int, ...] = (64, 32)
    lam: float = 1.0
    lam_search: bool = False
    unsup_loss: str = "auto"
    distance: str = "cosine"
    threshold: float = 0.95
    # latent search
    use_lmo: bool = True
    mapper_conditional: bool = True
    converter_mode: str = "hard_gumbel"
    tau: float = 1e-5
    outer_lr: float = 1e-4
    lambda_gap: float = 10.0
    val_weight: float = 1.0
    meta_mode: str = "second_order"
    gap_variant: str = "feature_pairwise"
    gap_kind: str = "mse"

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def foundation_spec(self) -> FoundationSpec:
        return FoundationSpec(self.num_foundation_classes, self.data_dim, self.latent_dim, self.foundation_seed,
                              self.separation)

    def task_spec(self, seed: int) -> TaskSpec:
        return TaskSpec(self.num_classes, self.samples_per_class, self.test_per_class, self.labeled_fraction,
                        self.shift_scale, self.shift_offset, self.noise_scale, seed)

    def train_config(self, seed: int) -> TrainLoopConfig:
        return TrainLoopConfig(
            method=self.method, epochs=self.epochs, steps_per_epoch=self.steps_per_epoch,
            batch_size=self.batch_size, val_batch_size=self.val_batch_size, lr=self.lr, momentum=self.momentum,
            milestones=self.milestones, lam=self.lam, hidden=self.hidden, seed=seed, unsup_loss=self.unsup_loss,
            distance=self.distance, use_lmo=self.use_lmo, mapper_conditional=self.mapper_conditional,
            converter_mode=self.converter_mode, tau=self.tau, threshold=self.threshold,
        )

    def outer_config(self) -> OuterStepConfig:
        return OuterStepConfig(lr=self.outer_lr, lambda_gap=self.lambda_gap, val_weight=self.val_weight,
                               meta_mode=self.meta_mode, gap_variant=self.gap_variant, gap_kind=self.gap_kind)


_CHOICES = {
    "method": METHODS, "generator_backend": ("analytic", "learned"), "unsup_loss": UNSUP_LOSSES,
    "distance": DISTANCES, "converter_mode": CONVERTER_MODES, "meta_mode": META_MODES,
    "gap_variant": GAP_VARIANTS, "gap_kind": GAP_KINDS,
}
_HINTS = typing.get_type_hints(ExperimentConfig)


def _parse_value(key: str, raw: str):
    hint = _HINTS[key]
    try:
        if hint is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if typing.get_origin(hint) is tuple:
            (item,) = {a for a in typing.get_args(hint) if a is not Ellipsis}
            return tuple(item(p) for p in raw.replace(",", " ").split())
        return hint(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{SECTION}.{key}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from exc


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.schema_version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"{SECTION}.schema_version: unsupported version {cfg.schema_version}")
    for key, allowed in _CHOICES.items():
        if getattr(cfg, key) not in allowed:
            raise ConfigError(f"{SECTION}.{key}: {getattr(cfg, key)!r} not in {list(allowed)}")
    checks = {
        "seeds": len(cfg.seeds) >= 1, "labeled_fraction": 0 < cfg.labeled_fraction <= 1,
        "num_classes": 2 <= cfg.num_classes <= cfg.num_foundation_classes,
        "num_foundation_classes": cfg.num_foundation_classes >= 2, "epochs": cfg.epochs >= 1,
        "batch_size": cfg.batch_size >= 1, "val_batch_size": cfg.val_batch_size >= 1,
        "lam": cfg.lam >= 0, "lambda_gap": cfg.lambda_gap >= 0, "tau": cfg.tau > 0,
        "outer_lr": cfg.outer_lr > 0, "lr": cfg.lr > 0, "threshold": 0 < cfg.threshold <= 1,
        "latent_dim": 1 <= cfg.latent_dim <= cfg.data_dim,
    }
    for key, ok in checks.items():
        if not ok:
            raise ConfigError(f"{SECTION}.{key}: invalid value {getattr(cfg, key)!r}")
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    extra = [s for s in parser.sections() if s != SECTION]
    if extra:
        raise ConfigError(f"unknown section(s) {extra}; only [{SECTION}] is allowed")
    if not parser.has_section(SECTION):
        raise ConfigError(f"missing [{SECTION}] section")
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for key, raw in parser.items(SECTION):
        if key not in known:
            raise ConfigError(f"{SECTION}.{key}: unknown key")
        values[key] = _parse_value(key, raw)
    if "schema_version" not in values:
        raise ConfigError(f"{SECTION}.schema_version: required")
    return validate(ExperimentConfig(**values))


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config(path.read_text())


def _format_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = [f"# config_hash = {cfg.config_hash()}", f"[{SECTION}]"]
    for f in fields(cfg):
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    for key in overrides:
        if key not in known:
            raise ConfigError(f"{SECTION}.{key}: unknown key")
    return validate(replace(cfg, **overrides))
