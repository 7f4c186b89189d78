"""Experiment configuration: ``[section]`` headers with ``key = value`` lines.

Lists are comma separated and ``#`` starts a comment. Every key has a
default, so an empty file describes the standard toy experiment.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Tuple

from .errors import ArgumentError, ConfigError
from .optim import ScheduleSpec
from .sanitize import METHODS, MitigationMethod, default_schedule
from .training import DEFAULT_BATCH_SIZE


@dataclass
class DataSection:
    num_classes: int = 8
    n_train: int = 512
    n_test: int = 512
    size: int = 16
    noise_std: float = 0.2


@dataclass
class ModelSection:
    widths: Tuple[int, ...] = (256, 128, 64, 8)
    epochs: int = 60
    lr: float = 1e-4
    batch_size: int = DEFAULT_BATCH_SIZE


@dataclass
class AttackSection:
    kind: str = "transpose"
    # transpose
    num_targets: int = 32
    epochs: int = 60
    lr_cls: float = 1e-4
    lr_mem: float = 1e-3
    key_noise_scale: float = 0.1
    # dec
    n: int = 16
    latent_dim: int = 64
    codec: str = "downsample_affine"
    shift: float = 1.0
    scale: float = 20000.0


@dataclass
class MitigationSection:
    method: str = "lwlrd_ft"
    source: str = "attacked"
    epochs: int = 3
    optimizer: str = "adamw"
    eta: Optional[float] = None
    eta_high: float = 1e-2
    eta_low: float = 1e-4
    decay: str = "exponential"
    eta_base: float = 1e-4
    eta_max: float = 1e-1
    eta_max_phase2: float = 1e-3
    cycle_len: int = 10
    sigma: float = 1e-2
    drop_prob: float = 0.1
    prune_acc_budget: float = 0.04
    weight_decay: Optional[float] = None


@dataclass
class EvalSection:
    source: str = "mitigated"
    usability_epochs: int = 100
    usability_lr: float = 1e-3
    usability_batch_size: int = 8


@dataclass
class AblateSection:
    eta_high: Tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    decay: Tuple[str, ...] = ("exponential", "linear")
    epochs: int = 3


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    attack: AttackSection = field(default_factory=AttackSection)
    mitigation: MitigationSection = field(default_factory=MitigationSection)
    eval: EvalSection = field(default_factory=EvalSection)
    ablate: AblateSection = field(default_factory=AblateSection)
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    out: str = "runs"

    def to_dict(self):
        return asdict(self)

    def with_overrides(self, seed=None, out=None):
        cfg = ExperimentConfig(**{f.name: getattr(self, f.name) for f in fields(self)})
        if seed is not None:
            cfg.seeds = (int(seed),)
        if out is not None:
            cfg.out = str(out)
        return cfg

    def schedule(self, kind=None, eta_high=None, decay=None) -> ScheduleSpec:
        m = self.mitigation
        kind = kind or m.method
        if kind == "super_ft":
            return ScheduleSpec(
                "super_ft",
                eta_base=m.eta_base,
                eta_max=m.eta_max,
                eta_max_phase2=m.eta_max_phase2,
                cycle_len=m.cycle_len,
            )
        if kind == "lwlrd_ft":
            return ScheduleSpec(
                "lwlrd",
                eta_high=m.eta_high if eta_high is None else eta_high,
                eta_low=m.eta_low,
                decay=m.decay if decay is None else decay,
            )
        if m.eta is not None and kind == m.method:
            return ScheduleSpec("constant", eta=m.eta)
        return default_schedule(kind)

    def mitigation_method(self, seed, kind=None, eta_high=None, decay=None) -> MitigationMethod:
        """Resolved method for ``kind`` (default: the configured one) with optional LWLRD overrides."""
        m = self.mitigation
        kind = kind or m.method
        return MitigationMethod(
            kind,
            epochs=m.epochs,
            schedule=self.schedule(kind, eta_high, decay),
            sigma=m.sigma,
            drop_prob=m.drop_prob,
            prune_acc_budget=m.prune_acc_budget,
            weight_decay=m.weight_decay if kind == m.method else None,
            optimizer=m.optimizer,
            batch_size=self.model.batch_size,
            seed=seed,
        )


SECTIONS = {
    "data": DataSection,
    "model": ModelSection,
    "attack": AttackSection,
    "mitigation": MitigationSection,
    "eval": EvalSection,
    "ablate": AblateSection,
}


def _convert(section, key, raw, default, annotation):
    text = raw.strip()
    try:
        if isinstance(default, tuple) or "Tuple" in str(annotation):
            items = [t.strip() for t in text.split(",") if t.strip()]
            elem = type(default[0]) if default else str
            return tuple(elem(t) for t in items)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or "float" in str(annotation):
            return None if text.lower() in ("", "none") else float(text)
        return text
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {type(default).__name__}") from None


def _validate(cfg: ExperimentConfig):
    if not cfg.seeds:
        raise ConfigError("[run] seeds must list at least one seed")
    if cfg.attack.kind not in ("transpose", "dec"):
        raise ConfigError(f"[attack] kind must be 'transpose' or 'dec', got {cfg.attack.kind!r}")
    if cfg.attack.codec not in ("downsample_affine", "linear_autoencoder"):
        raise ConfigError(f"[attack] codec {cfg.attack.codec!r} is unknown")
    if cfg.mitigation.method not in METHODS:
        raise ConfigError(f"[mitigation] method must be one of {', '.join(METHODS)}")
    if cfg.mitigation.source not in ("attacked", "model"):
        raise ConfigError("[mitigation] source must be 'attacked' or 'model'")
    if cfg.eval.source not in ("attacked", "mitigated", "model"):
        raise ConfigError("[eval] source must be 'attacked', 'mitigated' or 'model'")
    w = cfg.model.widths
    if len(w) < 2 or w[0] != cfg.data.size**2 or w[-1] != cfg.data.num_classes:
        raise ConfigError(
            f"[model] widths {list(w)} must start at size^2={cfg.data.size ** 2} "
            f"and end at num_classes={cfg.data.num_classes}"
        )
    for name in ("epochs", "batch_size"):
        if getattr(cfg.model, name) < (1 if name == "batch_size" else 0):
            raise ConfigError(f"[model] {name} is out of range")
    try:
        cfg.mitigation_method(cfg.seeds[0])
        for eh in cfg.ablate.eta_high:
            for d in cfg.ablate.decay:
                cfg.schedule("lwlrd_ft", eh, d)
    except ArgumentError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str, source="<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section == "run":
            for key, raw in parser.items(section):
                if key == "seeds":
                    cfg.seeds = _convert(section, key, raw, (0,), None)
                elif key == "out":
                    cfg.out = raw.strip()
                else:
                    raise ConfigError(f"{source}: unknown key {key!r} in [run]")
            continue
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]; expected run, {', '.join(SECTIONS)}")
        obj = getattr(cfg, section)
        known = {f.name: f for f in fields(obj)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]; expected one of {', '.join(known)}")
            setattr(obj, key, _convert(section, key, raw, getattr(obj, key), known[key].type))
    _validate(cfg)
    return cfg


def load_config(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
        _validate(cfg)
        return cfg
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path!r} does not exist")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), path)
