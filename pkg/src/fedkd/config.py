"""Experiment configuration: dataclasses, YAML loading, validation.

An empty file (or no file) means the reference setup: 9 clients in 3
clusters, 12 shards with 3 pooled as public teacher data, 10 rounds of 2
local epochs, batch 32, Adam at 0.001, distillation at alpha 0.5 and
temperature 5, evaluation every 2 rounds. Validation collects every
problem before raising, so a bad config is reported once, completely.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .netsim import LinkSpec, NetworkConfig

MODES = ("hierarchical", "centralised")
_MODE_ALIASES = {"centralized": "centralised"}


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic data geometry. The default separation was tuned with
    scripts/pilot_kd_convergence.py so plain federated averaging needs
    about six of the ten default rounds to reach 90% while the teacher
    stays comfortably above 95% validation accuracy."""

    samples_per_class: int = 2000
    class_separation: float = 0.70
    noise_scale: float = 0.15


@dataclass(frozen=True)
class TeacherSpec:
    """Teacher pre-training: early stopping on held-out loss."""

    max_epochs: int = 20
    patience: int = 3
    val_fraction: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "hierarchical"
    num_clients: int = 9
    num_clusters: int = 3
    num_shards: int = 12
    rounds: int = 10
    local_epochs: int = 2
    batch_size: int = 32
    learning_rate: float = 0.001
    alpha: float = 0.5
    temperature: float = 5.0
    eval_every: int = 2
    seed: int = 0
    input_length: int = 30
    test_fraction: float = 0.2
    train_cache: str | None = None
    test_cache: str | None = None
    synth: SynthSpec = field(default_factory=SynthSpec)
    teacher: TeacherSpec = field(default_factory=TeacherSpec)
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def validated(self) -> "ExperimentConfig":
        problems = validate(self)
        if problems:
            raise ConfigError("; ".join(problems))
        return self


def validate(cfg: ExperimentConfig) -> list[str]:
    """Every problem with the configuration, empty when it is usable."""
    p: list[str] = []
    if cfg.mode not in MODES:
        p.append(f"mode must be one of {MODES}, got {cfg.mode!r}")
    if cfg.num_clients < 1:
        p.append("num_clients must be at least 1")
    if cfg.num_clusters < 1:
        p.append("num_clusters must be at least 1")
    elif cfg.num_clusters > cfg.num_clients:
        p.append(
            f"num_clusters ({cfg.num_clusters}) cannot exceed num_clients "
            f"({cfg.num_clients})"
        )
    if cfg.num_shards <= cfg.num_clients:
        p.append(
            f"num_shards ({cfg.num_shards}) must exceed num_clients "
            f"({cfg.num_clients}) to leave public data"
        )
    if cfg.rounds < 1:
        p.append("rounds must be at least 1")
    if cfg.local_epochs < 1:
        p.append("local_epochs must be at least 1")
    if cfg.batch_size < 1:
        p.append("batch_size must be at least 1")
    if cfg.learning_rate <= 0:
        p.append("learning_rate must be positive")
    if not 0.0 <= cfg.alpha <= 1.0:
        p.append(f"alpha must lie in [0, 1], got {cfg.alpha}")
    if cfg.temperature <= 0:
        p.append("temperature must be positive")
    if cfg.eval_every < 1:
        p.append("eval_every must be at least 1")
    if cfg.input_length < 1:
        p.append("input_length must be at least 1")
    if not 0.0 < cfg.test_fraction < 1.0:
        p.append("test_fraction must lie in (0, 1)")
    if (cfg.train_cache is None) != (cfg.test_cache is None):
        p.append("train_cache and test_cache must be given together")
    if cfg.synth.samples_per_class < 1:
        p.append("synth.samples_per_class must be at least 1")
    if cfg.synth.class_separation < 0:
        p.append("synth.class_separation must be non-negative")
    if cfg.synth.noise_scale < 0:
        p.append("synth.noise_scale must be non-negative")
    if cfg.teacher.max_epochs < 1:
        p.append("teacher.max_epochs must be at least 1")
    if cfg.teacher.patience < 1:
        p.append("teacher.patience must be at least 1")
    if not 0.0 < cfg.teacher.val_fraction < 1.0:
        p.append("teacher.val_fraction must lie in (0, 1)")
    for link_name in ("client_edge", "edge_cloud", "client_cloud"):
        link = getattr(cfg.network, link_name)
        if link.latency_s < 0:
            p.append(f"network.{link_name}.latency_s must be non-negative")
        if link.bandwidth_bytes_per_s <= 0:
            p.append(f"network.{link_name}.bandwidth_bytes_per_s must be positive")
    return p


def _build(cls, mapping: dict, prefix: str, problems: list[str], specials=None, base=None):
    """Instantiate `cls` from `mapping`, collecting problems instead of
    raising. With a `base` instance, unspecified fields keep its values,
    which lets classes without field defaults take partial mappings."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in fields:
            problems.append(f"unknown key '{prefix}{key}'")
            continue
        if specials and key in specials:
            kwargs[key] = specials[key](value, problems)
        else:
            kwargs[key] = value
    try:
        if base is not None:
            return dataclasses.replace(base, **kwargs)
        return cls(**kwargs)
    except (TypeError, ConfigError) as exc:
        problems.append(f"{prefix or 'config'}: {exc}")
        return base if base is not None else cls()


def _nested(cls, prefix: str, inner_specials=None, base=None):
    def builder(value, problems):
        if not isinstance(value, dict):
            problems.append(f"{prefix.rstrip('.')} must be a mapping")
            value = {}
        return _build(
            cls, value, prefix, problems, specials=inner_specials, base=base
        )

    return builder


def from_dict(raw: dict) -> ExperimentConfig:
    """Build a config from nested plain dicts; unknown keys are errors."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    problems: list[str] = []
    raw = dict(raw)
    if "mode" in raw and isinstance(raw["mode"], str):
        raw["mode"] = _MODE_ALIASES.get(raw["mode"], raw["mode"])

    default_network = NetworkConfig()
    link_specials = {
        name: _nested(LinkSpec, f"network.{name}.", base=getattr(default_network, name))
        for name in ("client_edge", "edge_cloud", "client_cloud")
    }
    specials = {
        "synth": _nested(SynthSpec, "synth."),
        "teacher": _nested(TeacherSpec, "teacher."),
        "network": _nested(NetworkConfig, "network.", inner_specials=link_specials),
    }
    cfg = _build(ExperimentConfig, raw, "", problems, specials=specials)
    problems.extend(validate(cfg))
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Read a YAML config file; a missing path or empty file gives the
    reference defaults."""
    if path is None:
        return ExperimentConfig().validated()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return from_dict(raw)


def to_dict(cfg: ExperimentConfig) -> dict:
    """Plain nested dict mirror of the config, JSON- and YAML-safe."""
    return dataclasses.asdict(cfg)


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Replace top-level fields (CLI flags) and re-validate."""
    supplied = {k: v for k, v in overrides.items() if v is not None}
    if "mode" in supplied:
        supplied["mode"] = _MODE_ALIASES.get(supplied["mode"], supplied["mode"])
    return dataclasses.replace(cfg, **supplied).validated()
