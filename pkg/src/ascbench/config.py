"""Run configuration: one JSON file, defaults for every absent field.

Schema (all sections and fields optional)::

    {
      "representation": "spectrogram" | "mfcc" | "embedding",
      "seed": 0,
      "segment_seconds": 5.0,
      "features": {"frame_length": 882, "hop_length": 441, "n_fft": 1024,
                   "n_mels": 128 (40 for mfcc), "n_coeffs": 20,
                   "f_min_hz": 0.0, "f_max_hz": null, "log_floor": 1e-10},
      "augment": {"snr_db_range": [20, 40], "max_shift_seconds": 0.5},
      "split": {"test_fraction": 0.2},
      "model": {"architecture": "small_cnn", "n_classes": 2,
                "channels": [16, 32, 64], "dense_units": 128, "residual": false,
                "widths": null, "resize": null},
      "train": {"learning_rate": 0.001, "batch_size": 32, "max_epochs": 50,
                "patience": 5, "freeze_epochs": 5, "pretrain_epochs": 50}
    }

The single ``seed`` drives augmentation, splitting, weight init and
shuffling. Unknown fields are logged and ignored.
"""

import json
import logging
import numbers
from dataclasses import dataclass, field, replace
from pathlib import Path

from .augmentation import AugmentSpec
from .dsp import FeatureConfig
from .errors import ConfigError, DataError
from .fsutil import canonical_json, fingerprint
from .models import ModelConfig, TrainConfig

log = logging.getLogger(__name__)

REPRESENTATIONS = ("spectrogram", "mfcc", "embedding")

_INT = (numbers.Integral,)
_NUM = (numbers.Real,)


def _is(value, kinds):
    if isinstance(value, bool) and bool not in kinds:
        return False
    return isinstance(value, kinds)


# field -> (accepted types, default, human type name); None default means "derived"
SCHEMA = {
    "features": {
        "frame_length": (_INT, 882, "integer"),
        "hop_length": (_INT, 441, "integer"),
        "n_fft": (_INT, 1024, "integer"),
        "n_mels": (_INT + (type(None),), None, "integer or null"),
        "n_coeffs": (_INT, 20, "integer"),
        "f_min_hz": (_NUM, 0.0, "number"),
        "f_max_hz": (_NUM + (type(None),), None, "number or null"),
        "log_floor": (_NUM, 1e-10, "number"),
    },
    "augment": {
        "snr_db_range": ((list,), [20.0, 40.0], "[low, high] numbers"),
        "max_shift_seconds": (_NUM, 0.5, "number"),
    },
    "split": {
        "test_fraction": (_NUM, 0.2, "number"),
    },
    "model": {
        "architecture": ((str,), "small_cnn", "string"),
        "n_classes": (_INT, 2, "integer"),
        "channels": ((list,), [16, 32, 64], "list of integers"),
        "dense_units": (_INT, 128, "integer"),
        "residual": ((bool,), False, "boolean"),
        "widths": ((list, type(None)), None, "list of integers or null"),
        "resize": ((list, type(None)), None, "[height, width] or null"),
    },
    "train": {
        "learning_rate": (_NUM, 0.001, "number"),
        "batch_size": (_INT, 32, "integer"),
        "max_epochs": (_INT, 50, "integer"),
        "patience": (_INT + (type(None),), 5, "integer or null"),
        "freeze_epochs": (_INT, 5, "integer"),
        "pretrain_epochs": (_INT, 50, "integer"),
    },
}
TOP = {
    "representation": ((str,), "spectrogram", "string"),
    "seed": (_INT, 0, "integer"),
    "segment_seconds": (_NUM, 5.0, "number"),
}


@dataclass(frozen=True)
class RunConfig:
    representation: str = "spectrogram"
    seed: int = 0
    segment_seconds: float = 5.0
    features: dict = field(default_factory=dict)
    augment: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    warnings: tuple = ()

    def as_dict(self):
        return {"representation": self.representation, "seed": self.seed, "segment_seconds": self.segment_seconds,
                "features": self.features, "augment": self.augment, "split": self.split,
                "model": self.model, "train": self.train}

    @property
    def fingerprint(self):
        return fingerprint(self.as_dict())

    def feature_config(self) -> FeatureConfig:
        overrides = {k: v for k, v in self.features.items() if v is not None or k == "f_max_hz"}
        return FeatureConfig.for_representation(self.representation, **overrides)

    def augment_spec(self) -> AugmentSpec:
        return AugmentSpec(tuple(self.augment["snr_db_range"]), self.augment["max_shift_seconds"], self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.train)

    def model_config(self, input_shape) -> ModelConfig:
        """Model config for features of shape ``input_shape`` (as fed to the network)."""
        m = dict(self.model)
        widths, resize = m.pop("widths"), m.pop("resize")
        arch = m["architecture"]
        if arch == "autoencoder":
            if resize is None and self.representation == "spectrogram":
                resize = [64, 64]
            if widths is None:
                widths = {"spectrogram": [4096, 2048, 1024, 512], "embedding": [640, 512, 128]}.get(
                    self.representation, [None, 512, 128])
            if widths[0] is None:
                widths = [int(_prod(input_shape))] + widths[1:]
        else:
            widths = widths or [4096, 2048, 1024, 512]
        return ModelConfig(architecture=arch, representation=self.representation, n_classes=m["n_classes"],
                           input_shape=tuple(input_shape), channels=tuple(m["channels"]),
                           dense_units=m["dense_units"], residual=m["residual"], widths=tuple(widths),
                           resize=tuple(resize) if resize else None, seed=self.seed)

    def with_overrides(self, **kw):
        """Flag overrides (``representation``, ``seed``, ``test_fraction``) win over file values."""
        cfg = self
        if kw.get("representation") is not None:
            cfg = replace(cfg, representation=_check_repr(kw["representation"], "--repr"))
        if kw.get("seed") is not None:
            cfg = replace(cfg, seed=_check_seed(kw["seed"], "--seed"))
        if kw.get("test_fraction") is not None:
            cfg = replace(cfg, split={**cfg.split, "test_fraction": float(kw["test_fraction"])})
        _validate_values(cfg)
        return cfg


def _prod(shape):
    out = 1
    for s in shape:
        out *= s
    return out


def _check_repr(value, where):
    if value not in REPRESENTATIONS:
        raise ConfigError(f"{where}: expected one of {', '.join(REPRESENTATIONS)}, got {value!r}")
    return value


def _check_seed(value, where):
    if not _is(value, _INT) or not 0 <= value < 2 ** 64:
        raise ConfigError(f"{where}: expected an unsigned 64-bit integer, got {value!r}")
    return int(value)


def _validate_values(cfg: RunConfig):
    t, f, m = cfg.train, cfg.features, cfg.model
    if not t["learning_rate"] > 0:
        raise ConfigError(f"train.learning_rate: must be > 0, got {t['learning_rate']}")
    for name in ("batch_size", "max_epochs"):
        if t[name] < 1:
            raise ConfigError(f"train.{name}: must be >= 1, got {t[name]}")
    if t["patience"] is not None and t["patience"] < 1:
        raise ConfigError(f"train.patience: must be >= 1 or null, got {t['patience']}")
    for name in ("freeze_epochs", "pretrain_epochs"):
        if t[name] < 0:
            raise ConfigError(f"train.{name}: must be >= 0, got {t[name]}")
    if not 0.0 < cfg.split["test_fraction"] < 1.0:
        raise ConfigError(f"split.test_fraction: must lie in (0, 1), got {cfg.split['test_fraction']}")
    if cfg.segment_seconds <= 0:
        raise ConfigError(f"segment_seconds: must be > 0, got {cfg.segment_seconds}")
    rng = cfg.augment["snr_db_range"]
    if len(rng) != 2 or not all(_is(v, _NUM) for v in rng):
        raise ConfigError(f"augment.snr_db_range: expected [low, high] numbers, got {rng!r}")
    if m["architecture"] not in ("small_cnn", "autoencoder"):
        raise ConfigError(f"model.architecture: expected small_cnn or autoencoder, got {m['architecture']!r}")
    if m["n_classes"] not in (2, 6):
        raise ConfigError(f"model.n_classes: expected 2 or 6, got {m['n_classes']}")
    for name in ("channels", "widths", "resize"):
        v = m[name]
        if v is not None and not all(x is None or (_is(x, _INT) and x > 0) for x in v):
            raise ConfigError(f"model.{name}: expected positive integers, got {v!r}")
    if m["resize"] is not None and len(m["resize"]) != 2:
        raise ConfigError(f"model.resize: expected [height, width], got {m['resize']!r}")
    for name in ("frame_length", "hop_length", "n_fft", "n_coeffs", "n_mels"):
        if f[name] is not None and f[name] < 1:
            raise ConfigError(f"features.{name}: must be >= 1, got {f[name]}")


def parse_config(obj) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError(f"config: expected a JSON object, got {type(obj).__name__}")
    warnings = []
    top = {}
    for key, value in obj.items():
        if key in TOP:
            kinds, _, tname = TOP[key]
            if not _is(value, kinds):
                raise ConfigError(f"{key}: expected {tname}, got {value!r}")
            top[key] = value
        elif key not in SCHEMA:
            warnings.append(f"unknown field {key!r} ignored")
    sections = {}
    for sec, fields in SCHEMA.items():
        given = obj.get(sec, {})
        if not isinstance(given, dict):
            raise ConfigError(f"{sec}: expected an object, got {given!r}")
        out = {}
        for name, (kinds, default, tname) in fields.items():
            if name in given:
                if not _is(given[name], kinds):
                    raise ConfigError(f"{sec}.{name}: expected {tname}, got {given[name]!r}")
                out[name] = given[name]
            else:
                out[name] = default
        for name in given:
            if name not in fields:
                warnings.append(f"unknown field '{sec}.{name}' ignored")
        sections[sec] = out
    for w in warnings:
        log.warning("config: %s", w)
    rep = _check_repr(top.get("representation", "spectrogram"), "representation")
    seed = _check_seed(top.get("seed", 0), "seed")
    cfg = RunConfig(rep, seed, float(top.get("segment_seconds", 5.0)), sections["features"], sections["augment"],
                    sections["split"], sections["model"], sections["train"], tuple(warnings))
    _validate_values(cfg)
    return cfg


def default_config() -> RunConfig:
    return parse_config({})


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return parse_config(obj)


def dump_config(cfg: RunConfig) -> str:
    return canonical_json(cfg.as_dict())
