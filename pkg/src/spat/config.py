"""Experiment configuration files (JSON) with strict key checking."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np

from .attacks import AttackConfig
from .data import TripletGeometry, gen_triplet, load_idx, subsample_indices
from .losses import LossConfig
from .net import NetConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 30
    batch_size: int = 64
    lr_initial: float = 0.1
    lr_decay_factor: float = 10.0
    lr_decay_epochs: tuple = ()
    eval_every: int = 0


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "triplet"
    geometry: TripletGeometry = field(default_factory=TripletGeometry)
    images: str = None
    labels: str = None
    class_count: int = None
    per_class: int = None
    test_per_class: int = None
    # synthetic test draws use seed + test_seed_offset
    test_seed_offset: int = 1000

    def __post_init__(self):
        if self.kind not in ("triplet", "idx"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "idx" and not (self.images and self.labels):
            raise ValueError("idx datasets need 'images' and 'labels' paths")


@dataclass(frozen=True)
class ExperimentConfig:
    net: NetConfig
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainSection = field(default_factory=TrainSection)
    atk_train: AttackConfig = field(default_factory=AttackConfig.for_training)
    atk_eval: AttackConfig = field(default_factory=AttackConfig.for_evaluation)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    output_dir: str = "runs/default"
    seed: int = 0

    def __post_init__(self):
        if self.loss.needs_hypersphere and not self.net.hypersphere:
            raise ValueError(f"loss mode {self.loss.acc_mode!r} needs net.head_mode = 'hypersphere'")
        if self.net.hypersphere and self.loss.needs_hypersphere and self.loss.scale_s != self.net.scale_s:
            raise ValueError(f"loss.scale_s={self.loss.scale_s} differs from net.scale_s={self.net.scale_s}")

    def train_config(self, seed=None):
        from .train import TrainConfig

        t = self.train
        return TrainConfig(
            epochs=t.epochs, batch_size=t.batch_size, lr_initial=t.lr_initial,
            lr_decay_factor=t.lr_decay_factor, lr_decay_epochs=t.lr_decay_epochs,
            seed=self.seed if seed is None else seed, loss_cfg=self.loss,
            atk_train=self.atk_train, eval_every=t.eval_every,
        )

    def to_dict(self):
        return _plain(self)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


NESTED = {
    ExperimentConfig: {"net": NetConfig, "loss": LossConfig, "train": TrainSection,
                       "atk_train": AttackConfig, "atk_eval": AttackConfig, "dataset": DatasetSpec},
    DatasetSpec: {"geometry": TripletGeometry},
}


def _plain(obj):
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    return obj


def _line_of(text, key):
    if not text:
        return None
    needle = f'"{key}"'
    for n, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return n
    return None


def _build(cls, obj, where, text):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    names = {f.name for f in fields(cls)}
    for key in obj:
        if key not in names:
            line = _line_of(text, key)
            at = f" (line {line})" if line else ""
            raise ConfigError(f"{where}.{key}: unknown key{at}")
    kwargs = {}
    for key, value in obj.items():
        sub = NESTED.get(cls, {}).get(key)
        if sub is not None:
            value = _build(sub, value, f"{where}.{key}", text)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        line = _line_of(text, where.rsplit(".", 1)[-1]) if "." in where else None
        at = f" (line {line})" if line else ""
        raise ConfigError(f"{where}: {exc}{at}") from exc


def parse_config(text, source="<config>"):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if isinstance(raw, dict) and isinstance(raw.get("loss"), dict) and isinstance(raw.get("net"), dict):
        # the loss inherits the head scale unless it says otherwise
        if "scale_s" not in raw["loss"] and "scale_s" in raw["net"]:
            raw["loss"] = dict(raw["loss"], scale_s=raw["net"]["scale_s"])
    if not isinstance(raw, dict) or "net" not in raw:
        raise ConfigError(f"{source}: config must be an object with a 'net' section")
    return _build(ExperimentConfig, raw, "config", text)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config(text, str(path))
    ds = cfg.dataset
    if ds.kind == "idx":
        base = path.parent
        resolved = {k: str((base / getattr(ds, k)).resolve()) if not Path(getattr(ds, k)).is_absolute()
                    else getattr(ds, k) for k in ("images", "labels")}
        cfg = _replace(cfg, dataset=_replace(ds, **resolved))
    return cfg


def _replace(obj, **kw):
    d = {f.name: getattr(obj, f.name) for f in fields(obj)}
    d.update(kw)
    return type(obj)(**d)


def build_datasets(cfg, seed=None):
    """``(train, test)`` datasets described by ``cfg.dataset``."""
    seed = cfg.seed if seed is None else seed
    ds = cfg.dataset
    if ds.kind == "triplet":
        return gen_triplet(ds.geometry, seed), gen_triplet(ds.geometry, seed + ds.test_seed_offset)
    full = load_idx(ds.images, ds.labels, name=Path(ds.images).name, class_count=ds.class_count)
    if ds.per_class is None:
        return full, full
    tr = subsample_indices(full.labels, full.class_count, ds.per_class, seed)
    if ds.test_per_class is None:
        rest = np.setdiff1d(np.arange(len(full)), tr)
        return full.take(tr, "train"), full.take(rest, "test")
    te = subsample_indices(full.labels, full.class_count, ds.test_per_class, seed + 1, exclude=tr)
    return full.take(tr, "train"), full.take(te, "test")


def default_triplet_config(**overrides):
    """A small config that trains in seconds on the default triplet geometry."""
    raw = {
        "seed": 0,
        "output_dir": "runs/triplet",
        "net": {"layer_sizes": [10, 64, 16, 3], "activation": "tanh", "head_mode": "hypersphere", "scale_s": 5.0},
        "loss": {"acc_mode": "sp_nce", "beta": 0.2, "alpha": 0.2, "lam": 6.0},
        "train": {"epochs": 60, "batch_size": 32, "lr_initial": 0.1},
        "atk_train": asdict(AttackConfig.for_training(0.05)),
        "atk_eval": asdict(AttackConfig.for_evaluation(0.05)),
        "dataset": {"kind": "triplet"},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key] = {**raw[key], **value}
        else:
            raw[key] = value
    return raw
