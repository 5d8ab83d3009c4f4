"""Framing, power spectra, mel filterbanks, log-mel spectrograms and MFCCs."""

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .audio_io import AudioClip
from .errors import ConfigError, ShapeError
from .fsutil import fingerprint

IMAGE_SIZE = 224


class SignalTooShortError(ConfigError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    """Feature pipeline parameters, in samples at the clip's own rate.

    The defaults give 20 ms frames with a 10 ms hop at 44.1 kHz.
    ``f_max_hz=None`` means Nyquist.
    """

    representation: str = "spectrogram"
    frame_length: int = 882
    hop_length: int = 441
    n_fft: int = 1024
    n_mels: int = 128
    n_coeffs: int = 20
    f_min_hz: float = 0.0
    f_max_hz: float = None
    log_floor: float = 1e-10

    @classmethod
    def for_representation(cls, representation, **overrides):
        defaults = {"spectrogram": {"n_mels": 128}, "mfcc": {"n_mels": 40}, "embedding": {"n_mels": 128}}
        if representation not in defaults:
            raise ConfigError(f"unknown representation {representation!r}")
        kw = dict(defaults[representation])
        kw.update(overrides)
        return cls(representation=representation, **kw)

    def fingerprint(self, sample_rate_hz: int) -> str:
        d = asdict(self)
        d["sample_rate_hz"] = int(sample_rate_hz)
        return fingerprint(d)


@dataclass
class LogMelSpectrogram:
    values: np.ndarray  # (n_frames, n_mels)
    fingerprint: str = ""

    @property
    def n_mels(self):
        return self.values.shape[1]


@dataclass
class MfccMatrix:
    values: np.ndarray  # (n_frames, n_coeffs)
    fingerprint: str = ""

    @property
    def n_coeffs(self):
        return self.values.shape[1]


@dataclass
class SpectrogramImage:
    pixels: np.ndarray  # (224, 224) uint8, row 0 = highest band
    provenance: str = ""


def frame_signal(samples, frame_len: int, hop: int) -> np.ndarray:
    """Slice ``samples`` into overlapping frames, shape ``(n_frames, frame_len)``.

    Frame ``i`` starts at ``i * hop``; a trailing partial frame is dropped.
    The result is a copy.
    """
    x = np.asarray(samples, dtype=np.float64)
    if frame_len < 1 or hop < 1:
        raise ConfigError(f"frame_len and hop must be >= 1, got {frame_len}, {hop}")
    if x.shape[0] < frame_len:
        raise SignalTooShortError(f"signal has {x.shape[0]} samples, needs at least {frame_len}")
    return sliding_window_view(x, frame_len)[::hop].copy()


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window: w[k] = 0.5 (1 - cos(2πk/n))."""
    if n < 2:
        raise ConfigError(f"window length must be >= 2, got {n}")
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def power_spectrum(frames, n_fft: int) -> np.ndarray:
    """One-sided power spectrum ``|X[k]|^2 / n_fft`` for k = 0..n_fft/2.

    Accepts one frame or a 2-D stack of frames; each is zero-padded to
    ``n_fft``, which must be a power of two no shorter than the frame.
    """
    x = np.asarray(frames, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if not kernels.is_power_of_two(n_fft):
        raise ConfigError(f"n_fft must be a power of two, got {n_fft}")
    if x.shape[1] > n_fft:
        raise ConfigError(f"frame length {x.shape[1]} exceeds n_fft {n_fft}")
    padded = np.zeros((x.shape[0], n_fft), dtype=np.float64)
    padded[:, :x.shape[1]] = x
    spec = kernels.fft_rows(padded)[:, :n_fft // 2 + 1]
    power = (spec.real ** 2 + spec.imag ** 2) / n_fft
    return power[0] if single else power


def mel_scale(f_hz):
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f < 0):
        raise ConfigError("frequency must be non-negative")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def hz_scale(mel):
    m = np.asarray(mel, dtype=np.float64)
    if np.any(m < 0):
        raise ConfigError("mel value must be non-negative")
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class MelFilterBank:
    weights: np.ndarray  # (n_mels, n_bins)
    edges_hz: np.ndarray  # n_mels + 2 points, equally spaced in mel
    f_min_hz: float
    f_max_hz: float
    sample_rate_hz: int = 0
    n_fft: int = 0

    @property
    def center_freqs_hz(self):
        return self.edges_hz[1:-1]

    @property
    def n_mels(self):
        return self.weights.shape[0]

    def response(self, f_hz):
        """Continuous triangular responses at arbitrary frequencies, ``(n_mels, len(f))``."""
        return _triangles(self.edges_hz, np.atleast_1d(np.asarray(f_hz, dtype=np.float64)))


def _triangles(edges, freqs):
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs[None, :] - lo) / (mid - lo)
    fall = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rise, fall))


def build_mel_filterbank(n_mels: int, n_fft: int, rate_hz: int, f_min_hz: float = 0.0, f_max_hz: float = None) -> MelFilterBank:
    if f_max_hz is None:
        f_max_hz = rate_hz / 2
    if n_mels < 2:
        raise ConfigError(f"n_mels must be >= 2, got {n_mels}")
    if not (0 <= f_min_hz < f_max_hz <= rate_hz / 2):
        raise ConfigError(f"need 0 <= f_min < f_max <= rate/2, got {f_min_hz}, {f_max_hz}, rate {rate_hz}")
    if not kernels.is_power_of_two(n_fft):
        raise ConfigError(f"n_fft must be a power of two, got {n_fft}")
    edges = hz_scale(np.linspace(mel_scale(f_min_hz), mel_scale(f_max_hz), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * rate_hz / n_fft
    weights = _triangles(edges, bins)
    return MelFilterBank(weights, edges, float(f_min_hz), float(f_max_hz), int(rate_hz), int(n_fft))


@lru_cache(maxsize=32)
def _cached_bank(n_mels, n_fft, rate_hz, f_min_hz, f_max_hz):
    bank = build_mel_filterbank(n_mels, n_fft, rate_hz, f_min_hz, f_max_hz)
    bank.weights.setflags(write=False)
    return bank


def apply_filterbank(spec, bank: MelFilterBank) -> np.ndarray:
    spec = np.asarray(spec, dtype=np.float64)
    if spec.shape[-1] != bank.weights.shape[1]:
        raise ShapeError(f"spectrum has {spec.shape[-1]} bins, filterbank expects {bank.weights.shape[1]}")
    return spec @ bank.weights.T


def dct2_matrix(m: int) -> np.ndarray:
    """Orthonormal DCT-II matrix, ``D @ x`` transforms a length-m vector."""
    if m < 1:
        raise ConfigError(f"DCT size must be >= 1, got {m}")
    j = np.arange(m)[:, None]
    k = np.arange(m)[None, :]
    d = np.cos(np.pi * j * (2 * k + 1) / (2 * m))
    d *= np.where(j == 0, np.sqrt(1.0 / m), np.sqrt(2.0 / m))
    return d


def _mel_energies(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    x = clip.mono
    frames = frame_signal(x, cfg.frame_length, cfg.hop_length)
    frames *= hann_window(cfg.frame_length)
    spec = power_spectrum(frames, cfg.n_fft)
    bank = _cached_bank(cfg.n_mels, cfg.n_fft, clip.sample_rate_hz, cfg.f_min_hz, cfg.f_max_hz)
    return apply_filterbank(spec, bank)


def log_mel_spectrogram(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> LogMelSpectrogram:
    energies = _mel_energies(clip, cfg)
    values = np.log(np.maximum(energies, cfg.log_floor))
    return LogMelSpectrogram(values, cfg.fingerprint(clip.sample_rate_hz))


def mfcc(clip: AudioClip, cfg: FeatureConfig = FeatureConfig.for_representation("mfcc")) -> MfccMatrix:
    if cfg.n_coeffs > cfg.n_mels:
        raise ConfigError(f"n_coeffs {cfg.n_coeffs} exceeds n_mels {cfg.n_mels}")
    log_e = np.log(np.maximum(_mel_energies(clip, cfg), cfg.log_floor))
    coeffs = log_e @ dct2_matrix(cfg.n_mels)[:cfg.n_coeffs].T
    return MfccMatrix(coeffs, cfg.fingerprint(clip.sample_rate_hz))


def bilinear_resize(mat, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resampling; same-size input comes back unchanged."""
    a = np.asarray(mat, dtype=np.float64)
    h, w = a.shape
    if (h, w) == (out_h, out_w):
        return a.copy()
    ys = np.linspace(0.0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.minimum(np.floor(ys).astype(int), max(h - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(int), max(w - 2, 0))
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bot = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def render_spectrogram_image(lms: LogMelSpectrogram, size: int = IMAGE_SIZE) -> SpectrogramImage:
    """Min-max scale to [0, 255], resample to ``size`` x ``size``, low bands at the bottom."""
    v = np.asarray(lms.values, dtype=np.float64)
    if v.ndim != 2 or v.size == 0:
        raise ConfigError("cannot render an empty spectrogram")
    img = v.T[::-1]
    lo, hi = img.min(), img.max()
    if hi > lo:
        img = 255.0 * (img - lo) / (hi - lo)
    else:
        img = np.zeros_like(img)
    img = bilinear_resize(img, size, size)
    pixels = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    return SpectrogramImage(pixels, lms.fingerprint)
