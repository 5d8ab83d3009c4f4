"""PCM WAV decoding/encoding and basic clip manipulation."""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, TruncationError, UnsupportedFormatError
from .fsutil import atomic_write_bytes

_PCM = 1
_EXTENSIBLE = 0xFFFE
# KSDATAFORMAT_SUBTYPE_PCM
_PCM_GUID = b"\x01\x00\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"


@dataclass
class AudioClip:
    """Float samples shaped ``(channels, n)``, normalised to [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int
    source_id: str = ""
    bit_depth: int = None  # set by decode_wav; None for synthesised clips

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2 or s.shape[0] not in (1, 2):
            raise ConfigError(f"samples must be (channels, n) with 1 or 2 channels, got shape {s.shape}")
        if self.sample_rate_hz <= 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if s.size and (np.abs(s).max() > 1.0 or not np.isfinite(s).all()):
            raise ConfigError("samples must lie in [-1, 1]; clamp before constructing a clip")
        self.samples = s

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @property
    def mono(self) -> np.ndarray:
        """The single channel of a mono clip."""
        if self.channels != 1:
            raise ConfigError("clip is not mono; downmix first")
        return self.samples[0]


@dataclass(frozen=True)
class PcmFormat:
    bit_depth: int = 16
    channels: int = 1
    sample_rate_hz: int = 44100

    def __post_init__(self):
        if self.bit_depth not in (16, 24):
            raise UnsupportedFormatError(f"bit depth {self.bit_depth} not supported (16 or 24)")
        if self.channels not in (1, 2):
            raise UnsupportedFormatError(f"{self.channels} channels not supported (1 or 2)")
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample rate must be positive")


def _parse_fmt(body):
    if len(body) < 16:
        raise FormatError("fmt chunk shorter than 16 bytes")
    tag, channels, rate, _byte_rate, block_align, bits = struct.unpack("<HHIIHH", body[:16])
    if tag == _EXTENSIBLE:
        if len(body) < 40 or body[24:40] != _PCM_GUID:
            raise UnsupportedFormatError("WAVE_FORMAT_EXTENSIBLE with a non-PCM subformat")
    elif tag != _PCM:
        raise UnsupportedFormatError(f"format tag {tag:#06x} is not integer PCM")
    if bits not in (16, 24):
        raise UnsupportedFormatError(f"bit depth {bits} not supported (16 or 24)")
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{channels} channels not supported (1 or 2)")
    if rate == 0:
        raise FormatError("sample rate is zero")
    if block_align != channels * bits // 8:
        raise FormatError(f"block align {block_align} inconsistent with {channels}ch/{bits}bit")
    return channels, rate, bits


def _pcm_to_float(raw, bits, channels):
    if bits == 16:
        ints = np.frombuffer(raw, dtype="<i2").astype(np.int32)
    else:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints & 0x800000, ints - (1 << 24), ints)
    return (ints.astype(np.float64) / float(1 << (bits - 1))).reshape(-1, channels).T.copy()


def decode_wav(data: bytes, source_id: str = "") -> AudioClip:
    """Decode a little-endian integer-PCM RIFF/WAVE byte string.

    Unknown chunks are skipped. Raises :class:`FormatError` for malformed
    headers, :class:`UnsupportedFormatError` for non-PCM or exotic bit
    depths and :class:`TruncationError` when the data chunk is cut short.
    """
    data = bytes(data)
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE container")
    pos = 12
    fmt = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body_start = pos + 8
        if cid == b"fmt ":
            if body_start + size > len(data):
                raise FormatError("fmt chunk runs past end of file")
            fmt = _parse_fmt(data[body_start:body_start + size])
        elif cid == b"data":
            if fmt is None:
                raise FormatError("data chunk before fmt chunk")
            channels, rate, bits = fmt
            available = len(data) - body_start
            if size > available:
                raise TruncationError(f"data chunk declares {size} bytes but only {available} remain")
            frame_bytes = channels * bits // 8
            if size % frame_bytes:
                raise TruncationError(f"data chunk size {size} is not a multiple of the {frame_bytes}-byte frame")
            samples = _pcm_to_float(data[body_start:body_start + size], bits, channels)
            return AudioClip(samples, rate, source_id, bits)
        pos = body_start + size + (size & 1)
    if fmt is None:
        raise FormatError("missing fmt chunk")
    raise FormatError("missing data chunk")


def encode_wav(clip: AudioClip, fmt: PcmFormat) -> bytes:
    """Encode ``clip`` as canonical 44-byte-header PCM WAV."""
    if clip.channels != fmt.channels:
        raise ConfigError(f"clip has {clip.channels} channels, format wants {fmt.channels}")
    if clip.sample_rate_hz != fmt.sample_rate_hz:
        raise ConfigError(f"clip rate {clip.sample_rate_hz} differs from format rate {fmt.sample_rate_hz}")
    s = clip.samples
    if s.size and np.abs(s).max() > 1.0:
        raise ConfigError("sample outside [-1, 1]; clamp before encoding")
    full = 1 << (fmt.bit_depth - 1)
    ints = np.clip(np.round(s.T.reshape(-1) * full), -full, full - 1).astype(np.int32)
    if fmt.bit_depth == 16:
        payload = ints.astype("<i2").tobytes()
    else:
        u = ints & 0xFFFFFF
        payload = np.stack([u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF], axis=1).astype(np.uint8).tobytes()
    block = fmt.channels * fmt.bit_depth // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, _PCM, fmt.channels, fmt.sample_rate_hz,
                                    fmt.sample_rate_hz * block, block, fmt.bit_depth)
    header += b"data" + struct.pack("<I", len(payload))
    return header + payload


def read_wav(path) -> AudioClip:
    path = Path(path)
    return decode_wav(path.read_bytes(), source_id=path.stem)


def write_wav(path, clip: AudioClip, bit_depth: int = None) -> None:
    """Write ``clip``; ``bit_depth`` defaults to the clip's own, else 16."""
    bit_depth = bit_depth or clip.bit_depth or 16
    fmt = PcmFormat(bit_depth, clip.channels, clip.sample_rate_hz)
    atomic_write_bytes(path, encode_wav(clip, fmt))


def downmix_to_mono(clip: AudioClip) -> AudioClip:
    if clip.channels == 1:
        return clip
    return AudioClip(clip.samples.mean(axis=0, keepdims=True), clip.sample_rate_hz, clip.source_id, clip.bit_depth)


def split_clip(clip: AudioClip, segment_seconds: float):
    """Cut ``clip`` into back-to-back segments of ``segment_seconds``.

    Returns ``(segments, remainder)`` where ``remainder`` is the number of
    trailing samples dropped. Segment ``i`` gets source id ``<parent>:<i>``.
    """
    if not segment_seconds > 0:
        raise ConfigError(f"segment_seconds must be positive, got {segment_seconds}")
    exact = segment_seconds * clip.sample_rate_hz
    seg_len = int(round(exact))
    if seg_len < 1 or abs(exact - seg_len) > 1e-6:
        raise ConfigError(f"{segment_seconds} s is not a whole number of samples at {clip.sample_rate_hz} Hz")
    n_seg = clip.n_samples // seg_len
    segments = [
        AudioClip(clip.samples[:, i * seg_len:(i + 1) * seg_len].copy(), clip.sample_rate_hz,
                  f"{clip.source_id}:{i}", clip.bit_depth)
        for i in range(n_seg)
    ]
    return segments, clip.n_samples - n_seg * seg_len
