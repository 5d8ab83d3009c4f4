"""Additive noise, circular time shift and manifest-level dataset doubling."""

import hashlib
import logging
from dataclasses import dataclass, replace
from pathlib import Path, PurePosixPath

import numpy as np

from .audio_io import AudioClip, read_wav, split_clip, write_wav
from .dataset import DatasetManifest, ManifestEntry, relative_posix
from .errors import ConfigError, DataError
from .fsutil import parallel_map

log = logging.getLogger(__name__)


class UndefinedSnrError(ConfigError):
    pass


@dataclass(frozen=True)
class AugmentSpec:
    snr_db_range: tuple = (20.0, 40.0)
    max_shift_seconds: float = 0.5
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.snr_db_range
        if lo > hi:
            raise ConfigError(f"snr_db_range low {lo} exceeds high {hi}")
        if self.max_shift_seconds < 0:
            raise ConfigError("max_shift_seconds must be non-negative")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


def entry_rng(seed: int, source_id: str) -> np.random.Generator:
    """Independent PCG64 stream keyed on (seed, source_id)."""
    digest = hashlib.sha256(source_id.encode("utf-8")).digest()
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 32, 4)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def add_noise(clip: AudioClip, snr_db: float, rng: np.random.Generator) -> AudioClip:
    """Add white Gaussian noise at exactly ``snr_db``, then clamp to [-1, 1].

    The noise is made zero-mean and orthogonal to the signal before scaling,
    so the realised SNR and the output power (pre-clamp) are exact.
    """
    x = clip.samples
    p_signal = float(np.mean(x * x)) if x.size else 0.0
    if p_signal == 0.0:
        raise UndefinedSnrError("signal power is zero; SNR is undefined")
    n = rng.standard_normal(x.shape).reshape(-1)
    flat = x.reshape(-1)
    ones = np.ones_like(flat) / np.sqrt(flat.size)
    xc = flat - ones * (ones @ flat)
    n -= ones * (ones @ n)
    xc_norm2 = xc @ xc
    if xc_norm2 > 0:
        n -= xc * ((xc @ n) / xc_norm2)
    p_noise = p_signal / 10.0 ** (snr_db / 10.0)
    n *= np.sqrt(p_noise / np.mean(n * n))
    out = np.clip(x + n.reshape(x.shape), -1.0, 1.0)
    return AudioClip(out, clip.sample_rate_hz, clip.source_id, clip.bit_depth)


def time_shift(clip: AudioClip, shift_samples: int) -> AudioClip:
    """Circular shift: ``out[i] = in[(i - shift) mod L]``."""
    length = clip.n_samples
    if abs(shift_samples) > length:
        raise ConfigError(f"|shift| {abs(shift_samples)} exceeds clip length {length}")
    return AudioClip(np.roll(clip.samples, int(shift_samples), axis=1), clip.sample_rate_hz,
                     clip.source_id, clip.bit_depth)


def augment_clip(clip: AudioClip, spec: AugmentSpec, source_id: str) -> AudioClip:
    rng = entry_rng(spec.seed, source_id)
    snr = rng.uniform(*spec.snr_db_range)
    max_shift = int(round(spec.max_shift_seconds * clip.sample_rate_hz))
    if max_shift > clip.n_samples:
        raise ConfigError(f"max shift {spec.max_shift_seconds} s exceeds the {clip.duration_seconds} s clip")
    shift = int(rng.integers(-max_shift, max_shift + 1))
    return time_shift(add_noise(clip, snr, rng), shift)


def _augmented_path(entry: ManifestEntry) -> str:
    p = PurePosixPath(entry.path)
    return f"{entry.subclass}/{p.stem}_aug.wav"


def _augment_one(args):
    src, dst, spec, source_id = args
    if not Path(src).is_file():
        raise DataError(f"missing audio file: {src}")
    write_wav(dst, augment_clip(read_wav(src), spec, source_id))
    return dst


def augment_manifest(manifest: DatasetManifest, spec: AugmentSpec, out_dir, jobs: int = 1) -> DatasetManifest:
    """Add one noisy, shifted variant per original entry.

    Variants land under ``out_dir/<subclass>/<stem>_aug.wav``, inherit the
    parent's split and ``parent_id``, and draw from a stream keyed on
    ``(seed, entry_id)`` so input order does not matter. The returned
    manifest is rooted at ``out_dir``.
    """
    out_dir = Path(out_dir)
    originals = [e for e in manifest if not e.augmented]
    missing = [str(manifest.resolve(e)) for e in originals if not manifest.resolve(e).is_file()]
    if missing:
        raise DataError(f"missing audio file(s): {', '.join(missing[:5])}")
    tasks, new = [], []
    for e in originals:
        rel = _augmented_path(e)
        tasks.append((manifest.resolve(e), out_dir / rel, spec, e.entry_id))
        new.append(replace(e, path=rel, augmented=True))
    parallel_map(_augment_one, tasks, jobs)
    rebased = [replace(e, path=relative_posix(manifest.resolve(e), out_dir)) for e in manifest]
    return DatasetManifest(rebased + new, out_dir)


def _segment_one(args):
    src, dst_dir, stem, seconds = args
    clip = read_wav(src)
    segments, remainder = split_clip(clip, seconds)
    if remainder:
        log.warning("%s: dropped %d trailing samples", src, remainder)
    names = []
    for i, seg in enumerate(segments):
        name = f"{stem}_s{i}.wav"
        write_wav(Path(dst_dir) / name, seg)
        names.append(name)
    return names, remainder


def segment_manifest(manifest: DatasetManifest, out_dir, segment_seconds: float = 5.0, jobs: int = 1) -> DatasetManifest:
    """Cut every recording into ``segment_seconds`` clips sharing its parent id."""
    out_dir = Path(out_dir)
    tasks = []
    for e in manifest:
        src = manifest.resolve(e)
        if not src.is_file():
            raise DataError(f"missing audio file: {src}")
        tasks.append((src, out_dir / e.subclass, PurePosixPath(e.path).stem, segment_seconds))
    results = parallel_map(_segment_one, tasks, jobs)
    entries = []
    for e, (names, _) in zip(manifest, results):
        entries.extend(replace(e, path=f"{e.subclass}/{n}") for n in names)
    return DatasetManifest(entries, out_dir)
