"""Concrete architectures, the training loop and model files.

Two architectures stand in for the large vision CNNs:

* ``small_cnn``: conv3x3 stages with 2x2 max pooling, then dense 128 and
  the class head. With ``residual=True`` every stage after the stem adds an
  identity skip around its conv, which requires equal channel counts.
* ``autoencoder``: a fully-connected encoder (``widths[0]`` is the input
  size) mirrored by a linear-output decoder. As a classifier the encoder is
  reused under a softmax head.

Model file layout: ``ASCMODEL1\\n``, an 8-byte little-endian header length,
a UTF-8 JSON header (config, layer specs, parameter shapes, history,
pipeline fingerprint), then every parameter as row-major float64
little-endian.
"""

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .dsp import bilinear_resize
from .errors import (CompatibilityError, ConfigError, DivergenceError, FormatError, ShapeError,
                     TruncationError, UnsupportedArchitectureError)

log = logging.getLogger(__name__)

ARCHITECTURES = ("small_cnn", "autoencoder")
REPRESENTATIONS = ("spectrogram", "mfcc", "embedding")
_MAGIC = b"ASCMODEL1\n"

DEFAULT_WIDTHS = {
    "spectrogram": (4096, 2048, 1024, 512),
    "embedding": (640, 512, 128),
    "mfcc": (None, 512, 128),  # input width filled from the data
}


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "small_cnn"
    representation: str = "spectrogram"
    n_classes: int = 2
    input_shape: tuple = (1, 224, 224)
    channels: tuple = (16, 32, 64)
    dense_units: int = 128
    residual: bool = False
    widths: tuple = DEFAULT_WIDTHS["spectrogram"]
    resize: tuple = None  # resample 2-D features to (H, W) before the model
    seed: int = 0
    zero_head: bool = False  # zero logits layer: every class starts equally likely

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise UnsupportedArchitectureError(f"unknown architecture {self.architecture!r}")
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"unknown representation {self.representation!r}")
        if self.n_classes not in (2, 6):
            raise ConfigError(f"n_classes must be 2 or 6, got {self.n_classes}")
        for name in ("input_shape", "channels", "widths", "resize"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def small_cnn_specs(cfg: ModelConfig):
    specs = []
    for i, c in enumerate(cfg.channels):
        stage_in = len(specs)  # activation index entering this stage
        specs += [nn.conv2d(c, 3), nn.relu()]
        if cfg.residual and i > 0:
            specs.append(nn.residual_add(stage_in))
        specs.append(nn.maxpool2d(2))
    specs += [nn.flatten(), nn.dense(cfg.dense_units), nn.relu(), nn.dense(cfg.n_classes), nn.softmax()]
    return specs


def _check_widths(cfg):
    w = cfg.widths
    if len(w) < 2 or any(v is None or v < 1 for v in w):
        raise ConfigError(f"autoencoder widths must be >= 2 positive sizes, got {w}")
    if any(b > a for a, b in zip(w, w[1:])):
        raise ConfigError(f"autoencoder widths must not increase, got {w}")
    if (w[0],) != tuple(cfg.input_shape):
        raise ConfigError(f"autoencoder input width {w[0]} does not match input shape {cfg.input_shape}")


def _dense_stack(widths):
    # relu between dense layers; the last one stays linear
    specs = []
    for j, width in enumerate(widths):
        specs.append(nn.dense(width))
        if j < len(widths) - 1:
            specs.append(nn.relu())
    return specs


def encoder_specs(cfg: ModelConfig):
    """Dense encoder ending in a linear bottleneck of width ``widths[-1]``."""
    return _dense_stack(cfg.widths[1:])


def autoencoder_specs(cfg: ModelConfig):
    # the decoder mirrors the encoder; relu joins the two halves
    return encoder_specs(cfg) + [nn.relu()] * (len(cfg.widths) > 2) + _dense_stack(cfg.widths[::-1][1:])


def _make(input_shape, specs, seed):
    try:
        return nn.Model(input_shape, specs, seed=seed)
    except ShapeError as exc:
        raise ConfigError(f"layer chain does not compose: {exc}") from None


def _init_head(model, cfg):
    if cfg.zero_head:
        head = model.params[-2]
        head["W"] = np.zeros_like(head["W"])
    return model


def _check_residual(cfg):
    if cfg.residual:
        for i in range(1, len(cfg.channels)):
            if cfg.channels[i] != cfg.channels[i - 1]:
                raise ConfigError(f"residual stage {i} maps {cfg.channels[i - 1]} -> {cfg.channels[i]} channels; "
                                  "identity skips need equal channel counts")


def build_model(cfg: ModelConfig) -> nn.Model:
    """The trainable network for ``cfg``: the CNN classifier or the full autoencoder."""
    if cfg.architecture == "small_cnn":
        _check_residual(cfg)
        if len(cfg.input_shape) != 3:
            raise ConfigError(f"small_cnn needs a (C, H, W) input shape, got {cfg.input_shape}")
        model = _init_head(_make(cfg.input_shape, small_cnn_specs(cfg), cfg.seed), cfg)
    else:
        _check_widths(cfg)
        model = _make(cfg.input_shape, autoencoder_specs(cfg), cfg.seed)
    log.info("built %s: %d parameters", cfg.architecture, nn.count_params(model))
    return model


def build_classifier(cfg: ModelConfig, encoder_params=None) -> nn.Model:
    """Class-probability network. For the autoencoder this is encoder + softmax head."""
    if cfg.architecture == "small_cnn":
        return build_model(cfg)
    _check_widths(cfg)
    specs = encoder_specs(cfg) + [nn.relu(), nn.dense(cfg.n_classes), nn.softmax()]
    model = _init_head(_make(cfg.input_shape, specs, cfg.seed), cfg)
    if encoder_params is not None:
        n_enc = len(encoder_specs(cfg))
        if len(encoder_params) != n_enc:
            raise ConfigError(f"expected {n_enc} encoder layers, got {len(encoder_params)}")
        model.params[:n_enc] = [{k: v.copy() for k, v in p.items()} for p in encoder_params]
    return model


def prepare_input(matrix, cfg: ModelConfig) -> np.ndarray:
    """Shape one 2-D feature matrix for ``cfg``'s network."""
    m = np.asarray(matrix, dtype=np.float64)
    if cfg.resize is not None and m.shape != tuple(cfg.resize):
        m = bilinear_resize(m, *cfg.resize)
    if cfg.architecture == "autoencoder":
        return m.reshape(-1)
    return m[None, :, :]


@dataclass
class Normalizer:
    """Per-element standardisation fitted on training features only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x):
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std > 1e-8, std, 1.0)
        return cls(mean, std)

    def __call__(self, x):
        return (x - self.mean) / self.std


@dataclass
class FeatureSet:
    x: np.ndarray  # (N, *input_shape), raw (unnormalised)
    y: np.ndarray  # (N,) int labels
    fingerprint: str = ""
    ids: list = None

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    max_epochs: int = 50
    seed: int = 0
    patience: int = 5  # None disables early stopping
    freeze_epochs: int = 5  # encoder frozen this many epochs after pretraining
    pretrain_epochs: int = 50
    eval_batch_size: int = 64
    restore_best: bool = True  # False keeps the final epoch's weights

    def __post_init__(self):
        if not self.learning_rate >= 0 or not np.isfinite(self.learning_rate):
            raise ConfigError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainedModel:
    config: ModelConfig
    model: nn.Model
    history: list = field(default_factory=list)
    fingerprint: str = ""
    normalizer: Normalizer = None
    task: str = "classifier"
    best_epoch: int = 0

    @property
    def n_params(self):
        return nn.count_params(self.model)


def _batched_forward(model, x, batch_size):
    outs = [nn.forward(model, x[s:s + batch_size]).output for s in range(0, len(x), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0,) + model.output_shape)


def _metrics(model, x, y, batch_size):
    p = _batched_forward(model, x, batch_size)
    return float(nn.cross_entropy(p, y)), float(np.mean(np.argmax(p, axis=1) == y))


# overflow shows up as a non-finite loss and is raised as DivergenceError
@np.errstate(over="ignore", invalid="ignore")
def train(model: nn.Model, train_set: FeatureSet, eval_set: FeatureSet, tc: TrainConfig,
          cfg: ModelConfig = None, frozen_layers=(), log_fn=None) -> TrainedModel:
    """Mini-batch SGD on cross-entropy with early stopping on eval accuracy.

    Returns the checkpoint with the best eval accuracy (earliest on ties).
    ``frozen_layers`` stay fixed for the first ``tc.freeze_epochs`` epochs.
    """
    if eval_set.fingerprint != train_set.fingerprint:
        raise CompatibilityError(f"train features {train_set.fingerprint!r} and eval features "
                                 f"{eval_set.fingerprint!r} come from different pipelines")
    n_out = model.output_shape[0]
    for name, s in (("train", train_set), ("eval", eval_set)):
        if len(s) and (s.y.min() < 0 or s.y.max() >= n_out):
            raise ConfigError(f"{name} labels outside [0, {n_out})")
    norm = Normalizer.fit(train_set.x)
    xtr, xev = norm(train_set.x), norm(eval_set.x)
    ytr, yev = np.asarray(train_set.y), np.asarray(eval_set.y)
    rng = np.random.default_rng(tc.seed)
    model = model.copy()
    best_acc, best_params, best_epoch = -1.0, [dict(p) for p in model.params], 0
    history = []
    for epoch in range(1, tc.max_epochs + 1):
        frozen = set(frozen_layers) if epoch <= tc.freeze_epochs else set()
        order = rng.permutation(len(ytr))
        for s in range(0, len(order), tc.batch_size):
            idx = order[s:s + tc.batch_size]
            acts = nn.forward(model, xtr[idx])
            loss = nn.cross_entropy(acts.output, ytr[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss in epoch {epoch}", epoch)
            grads = nn.backward(model, acts, ytr[idx])
            try:
                model.params = nn.sgd_step(model.params, grads, tc.learning_rate, frozen)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}", epoch) from None
        tr_loss, tr_acc = _metrics(model, xtr, ytr, tc.eval_batch_size)
        ev_loss, ev_acc = _metrics(model, xev, yev, tc.eval_batch_size) if len(yev) else (float("nan"), 0.0)
        if not np.isfinite(tr_loss):
            raise DivergenceError(f"non-finite loss in epoch {epoch}", epoch)
        rec = {"epoch": epoch, "train_loss": tr_loss, "train_acc": tr_acc, "eval_loss": ev_loss,
               "eval_acc": ev_acc, "gap": tr_acc - ev_acc}
        history.append(rec)
        if log_fn:
            log_fn(rec)
        if ev_acc > best_acc:
            best_acc, best_epoch = ev_acc, epoch
            best_params = [dict(p) for p in model.params]
        elif tc.patience is not None and epoch - best_epoch >= tc.patience:
            break
    if tc.restore_best:
        model.params = best_params
    else:
        best_epoch = len(history)
    return TrainedModel(cfg, model, history, train_set.fingerprint, norm, "classifier", best_epoch)


@dataclass
class EncoderWeights:
    params: list
    loss_history: list
    normalizer: Normalizer


@np.errstate(over="ignore", invalid="ignore")
def pretrain_encoder(ae_model: nn.Model, unlabeled, tc: TrainConfig, epochs: int = None, log_fn=None) -> EncoderWeights:
    """Fit the autoencoder to reconstruct its (standardised) input.

    ``loss_history[0]`` is the loss before any update. Runs ``epochs``
    (default ``tc.max_epochs``) full passes; returns the encoder half.
    """
    epochs = tc.max_epochs if epochs is None else epochs
    specs = ae_model.specs
    if not all(s.kind in ("dense", "relu") for s in specs) or ae_model.output_shape != ae_model.input_shape:
        raise ConfigError("pretrain_encoder needs a dense autoencoder whose output matches its input")
    x = np.asarray(unlabeled, dtype=np.float64)
    norm = Normalizer.fit(x)
    xs = norm(x)
    model = ae_model.copy()
    rng = np.random.default_rng(tc.seed)

    def full_loss():
        return nn.mse(_batched_forward(model, xs, tc.eval_batch_size), xs)

    history = [full_loss()]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(xs))
        for s in range(0, len(order), tc.batch_size):
            idx = order[s:s + tc.batch_size]
            acts = nn.forward(model, xs[idx])
            grads = nn.backward(model, acts, xs[idx], loss="mse")
            try:
                model.params = nn.sgd_step(model.params, grads, tc.learning_rate)
            except DivergenceError as exc:
                raise DivergenceError(f"pretraining epoch {epoch}: {exc}", epoch) from None
        history.append(full_loss())
        if not np.isfinite(history[-1]):
            raise DivergenceError(f"non-finite reconstruction loss in pretraining epoch {epoch}", epoch)
        if log_fn:
            log_fn({"pretrain_epoch": epoch, "reconstruction_loss": history[-1]})
    n_enc = len(specs) // 2  # the encoder half, without the joining relu
    encoder = [{k: v.copy() for k, v in p.items()} for p in model.params[:n_enc]]
    return EncoderWeights(encoder, history, norm)


def fit(cfg: ModelConfig, train_set: FeatureSet, eval_set: FeatureSet, tc: TrainConfig, log_fn=None) -> TrainedModel:
    """Build and train the classifier for ``cfg``.

    Autoencoders are pretrained on the training features (labels unused),
    then the encoder is frozen under a fresh head for ``tc.freeze_epochs``
    epochs before joint fine-tuning.
    """
    if cfg.architecture == "small_cnn":
        return train(build_model(cfg), train_set, eval_set, tc, cfg, log_fn=log_fn)
    ae = build_model(cfg)
    enc = pretrain_encoder(ae, train_set.x, tc, epochs=tc.pretrain_epochs, log_fn=log_fn)
    clf = build_classifier(cfg, enc.params)
    frozen = range(len(enc.params))
    return train(clf, train_set, eval_set, tc, cfg, frozen_layers=frozen, log_fn=log_fn)


def predict(tm: TrainedModel, features) -> np.ndarray:
    """Class distributions for one feature (same shape as the model input) or a batch."""
    x = np.asarray(features, dtype=np.float64)
    single = x.shape == tm.model.input_shape
    if single:
        x = x[None]
    if x.shape[1:] != tm.model.input_shape:
        raise ShapeError(f"feature shape {x.shape[1:]} does not match model input {tm.model.input_shape}")
    if tm.normalizer is not None:
        x = tm.normalizer(x)
    return _batched_forward(tm.model, x, 64)


# --------------------------------------------------------------------------
# persistence


def save_model(tm: TrainedModel) -> bytes:
    arrays, shapes = [], []
    for i, p in enumerate(tm.model.params):
        for k in sorted(p):
            shapes.append([i, k, list(p[k].shape)])
            arrays.append(p[k])
    norm_shape = None
    if tm.normalizer is not None:
        norm_shape = list(tm.normalizer.mean.shape)
        arrays += [tm.normalizer.mean, tm.normalizer.std]
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    header = {
        "format": 1,
        "architecture": tm.config.architecture if tm.config else "custom",
        "task": tm.task,
        "config": tm.config.to_dict() if tm.config else None,
        "input_shape": list(tm.model.input_shape),
        "specs": [s.to_dict() for s in tm.model.specs],
        "params": shapes,
        "normalizer_shape": norm_shape,
        "history": tm.history,
        "best_epoch": tm.best_epoch,
        "fingerprint": tm.fingerprint,
        "blob_bytes": len(blob),
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return _MAGIC + struct.pack("<Q", len(hb)) + hb + blob


def load_model(data: bytes, expected_fingerprint: str = None) -> TrainedModel:
    if not data.startswith(_MAGIC):
        raise FormatError("not a model file")
    pos = len(_MAGIC)
    if len(data) < pos + 8:
        raise TruncationError("model file ends inside the header length")
    (hlen,) = struct.unpack("<Q", data[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"model header is not valid JSON ({exc})") from None
    arch = header.get("architecture")
    if arch not in ARCHITECTURES + ("custom",):
        raise UnsupportedArchitectureError(f"unsupported architecture {arch!r}")
    blob = data[pos + hlen:]
    if len(blob) != header["blob_bytes"]:
        raise TruncationError(f"parameter blob is {len(blob)} bytes, header expects {header['blob_bytes']}")
    if expected_fingerprint is not None and header["fingerprint"] != expected_fingerprint:
        raise CompatibilityError(f"model was trained on pipeline {header['fingerprint']}, "
                                 f"features come from {expected_fingerprint}")
    specs = [nn.LayerSpec.from_dict(d) for d in header["specs"]]
    offset = 0

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * n
        return a

    params = [{} for _ in specs]
    for i, k, shape in header["params"]:
        params[i][k] = take(tuple(shape))
    model = nn.Model(tuple(header["input_shape"]), specs, params)
    norm = None
    if header["normalizer_shape"] is not None:
        s = tuple(header["normalizer_shape"])
        norm = Normalizer(take(s), take(s))
    cfg = ModelConfig.from_dict(header["config"]) if header["config"] else None
    return TrainedModel(cfg, model, header["history"], header["fingerprint"], norm, header["task"],
                        header.get("best_epoch", 0))
