"""Per-second audio embeddings: CSV ingest, reshaping and synthetic stand-ins.

External generators emit one 128-value row per second of audio. The CSV
form is UTF-8, comma separated, optionally preceded by a ``# cols=128``
header line.
"""

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip
from .dsp import FeatureConfig, log_mel_spectrogram
from .errors import ConfigError, FormatError, ParseError

EMBEDDING_DIM = 128
# templates are shared by every caller; jitter streams are per (class, seed)
_TEMPLATE_SEED = 0x5EED_E3B0
DEFAULT_JITTER = 0.1


@dataclass
class EmbeddingMatrix:
    values: np.ndarray  # (n_seconds, 128)
    clip_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != EMBEDDING_DIM or v.shape[0] < 1:
            raise FormatError(f"embedding matrix must be (n>=1, {EMBEDDING_DIM}), got {v.shape}")
        if not np.isfinite(v).all():
            raise FormatError("embedding values must be finite")
        self.values = v

    @property
    def n_seconds(self):
        return self.values.shape[0]


def parse_embedding_csv(text: str, clip_id: str = "") -> EmbeddingMatrix:
    rows = []
    lines = text.splitlines()
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if rows or any(l.strip() for l in lines[:lineno - 1]):
                raise ParseError(f"line {lineno}: header allowed only on the first line")
            continue
        tokens = stripped.split(",")
        if len(tokens) != EMBEDDING_DIM:
            raise ParseError(f"line {lineno}: expected {EMBEDDING_DIM} values, found {len(tokens)}")
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            bad = next(t for t in tokens if not _is_number(t))
            raise ParseError(f"line {lineno}: non-numeric token {bad.strip()!r}") from None
    if not rows:
        raise ParseError("no embedding rows found")
    return EmbeddingMatrix(np.array(rows), clip_id)


def _is_number(token):
    try:
        float(token)
        return True
    except ValueError:
        return False


def serialize_embedding_csv(emb: EmbeddingMatrix, header: bool = True) -> str:
    lines = [f"# cols={EMBEDDING_DIM}"] if header else []
    lines += [",".join(f"{v:.9g}" for v in row) for row in emb.values]
    return "\n".join(lines) + "\n"


def flatten_embedding(emb: EmbeddingMatrix) -> np.ndarray:
    return emb.values.reshape(-1).copy()


def unflatten_embedding(vec, clip_id: str = "") -> EmbeddingMatrix:
    v = np.asarray(vec, dtype=np.float64)
    if v.size % EMBEDDING_DIM:
        raise FormatError(f"vector length {v.size} is not a multiple of {EMBEDDING_DIM}")
    return EmbeddingMatrix(v.reshape(-1, EMBEDDING_DIM), clip_id)


def class_template(class_id: int) -> np.ndarray:
    """Mean embedding row of one synthetic class, uniform on [0, 1)."""
    rng = np.random.default_rng(np.random.SeedSequence([_TEMPLATE_SEED, int(class_id)]))
    return rng.random(EMBEDDING_DIM)


def synth_embeddings(class_id: int, seed: int, n_seconds: int, jitter: float = DEFAULT_JITTER) -> EmbeddingMatrix:
    """Class template repeated per second plus N(0, jitter^2) noise.

    Templates of distinct classes differ by about 0.4 per coordinate (RMS),
    so at the default jitter the classes are trivially separable.
    """
    if n_seconds < 1:
        raise ConfigError(f"n_seconds must be >= 1, got {n_seconds}")
    template = class_template(class_id)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(class_id)]))
    values = np.tile(template, (n_seconds, 1))
    if jitter:
        values = values + jitter * rng.standard_normal(values.shape)
    return EmbeddingMatrix(values, f"synth-{class_id}-{seed}")


def proxy_embeddings(clip: AudioClip, cfg: FeatureConfig = None) -> EmbeddingMatrix:
    """Audio-derived stand-in for an external generator.

    Each row is the mean 128-band log-mel vector of one second of audio.
    Used where a real embedding model is unavailable; clips must last a
    whole number of seconds.
    """
    rate = clip.sample_rate_hz
    if clip.n_samples % rate:
        raise ConfigError(f"clip lasts {clip.duration_seconds} s; embeddings need whole seconds")
    cfg = cfg or FeatureConfig.for_representation("embedding", n_mels=EMBEDDING_DIM)
    if cfg.n_mels != EMBEDDING_DIM:
        raise ConfigError(f"proxy embeddings need n_mels={EMBEDDING_DIM}")
    rows = []
    for s in range(clip.n_samples // rate):
        second = AudioClip(clip.samples[:, s * rate:(s + 1) * rate], rate, clip.source_id)
        rows.append(log_mel_spectrogram(second, cfg).values.mean(axis=0))
    return EmbeddingMatrix(np.array(rows), clip.source_id)
