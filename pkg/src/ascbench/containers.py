"""On-disk containers for feature matrices and grayscale PNG images.

Feature matrix layout::

    ASCFEAT1 rows=<r> cols=<c> fingerprint=<hex>\\n
    <r * c float32 little-endian values, row-major>
"""

import struct
import zlib

import numpy as np

from .errors import FormatError, TruncationError, UnsupportedFormatError
from .fsutil import atomic_write_bytes

_FEAT_MAGIC = "ASCFEAT1"
_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def encode_feature_matrix(values, fingerprint: str) -> bytes:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise FormatError(f"feature matrix must be 2-D, got shape {v.shape}")
    if any(ch.isspace() for ch in fingerprint):
        raise FormatError("fingerprint may not contain whitespace")
    header = f"{_FEAT_MAGIC} rows={v.shape[0]} cols={v.shape[1]} fingerprint={fingerprint}\n"
    return header.encode("ascii") + v.astype("<f4").tobytes()


def decode_feature_matrix(data: bytes):
    """Return ``(values, fingerprint)``; values come back as float64."""
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError("feature file has no header line")
    parts = data[:nl].decode("ascii", errors="replace").split(" ")
    if not parts or parts[0] != _FEAT_MAGIC:
        raise FormatError("not a feature matrix file")
    fields = dict(p.split("=", 1) for p in parts[1:] if "=" in p)
    try:
        rows, cols = int(fields["rows"]), int(fields["cols"])
    except (KeyError, ValueError):
        raise FormatError("feature header lacks integer rows/cols") from None
    expected = rows * cols * 4
    body = data[nl + 1:]
    if len(body) != expected:
        raise TruncationError(f"feature payload is {len(body)} bytes, header implies {expected}")
    values = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(rows, cols)
    return values, fields.get("fingerprint", "")


def write_feature_matrix(path, values, fingerprint: str) -> None:
    atomic_write_bytes(path, encode_feature_matrix(values, fingerprint))


def read_feature_matrix(path):
    with open(path, "rb") as fh:
        return decode_feature_matrix(fh.read())


def _chunk(kind: bytes, body: bytes) -> bytes:
    crc = zlib.crc32(body, zlib.crc32(kind)) & 0xFFFFFFFF
    return struct.pack(">I", len(body)) + kind + body + struct.pack(">I", crc)


def encode_png_gray(pixels, text=None) -> bytes:
    """8-bit grayscale PNG, no alpha, filter type 0 on every row."""
    p = np.asarray(pixels)
    if p.ndim != 2 or p.dtype != np.uint8:
        raise FormatError("PNG pixels must be a 2-D uint8 array")
    h, w = p.shape
    raw = np.concatenate([np.zeros((h, 1), dtype=np.uint8), p], axis=1).tobytes()
    out = _PNG_SIG + _chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0))
    for key, value in sorted((text or {}).items()):
        out += _chunk(b"tEXt", key.encode("latin-1") + b"\x00" + value.encode("latin-1"))
    out += _chunk(b"IDAT", zlib.compress(raw, 9))
    return out + _chunk(b"IEND", b"")


def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def decode_png_gray(data: bytes):
    """Decode an 8-bit grayscale, non-interlaced PNG. Returns ``(pixels, text)``."""
    if data[:8] != _PNG_SIG:
        raise FormatError("not a PNG file")
    pos = 8
    idat = b""
    text = {}
    w = h = None
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        kind = data[pos + 4:pos + 8]
        body = data[pos + 8:pos + 8 + length]
        if len(body) != length or pos + 12 + length > len(data):
            raise TruncationError(f"PNG chunk {kind!r} truncated")
        (crc,) = struct.unpack(">I", data[pos + 8 + length:pos + 12 + length])
        if crc != zlib.crc32(body, zlib.crc32(kind)) & 0xFFFFFFFF:
            raise FormatError(f"PNG chunk {kind!r} fails its CRC check")
        if kind == b"IHDR":
            w, h, depth, ctype, _, _, interlace = struct.unpack(">IIBBBBB", body)
            if depth != 8 or ctype != 0 or interlace != 0:
                raise UnsupportedFormatError("only 8-bit grayscale non-interlaced PNG is supported")
        elif kind == b"IDAT":
            idat += body
        elif kind == b"tEXt":
            key, _, val = body.partition(b"\x00")
            text[key.decode("latin-1")] = val.decode("latin-1")
        elif kind == b"IEND":
            break
        pos += 12 + length
    if w is None:
        raise FormatError("PNG lacks IHDR")
    try:
        raw = zlib.decompress(idat)
    except zlib.error as exc:
        raise FormatError(f"PNG image data does not inflate ({exc})") from None
    if len(raw) != h * (w + 1):
        raise TruncationError(f"PNG image data is {len(raw)} bytes, expected {h * (w + 1)}")
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(h, w + 1)
    out = np.zeros((h, w), dtype=np.uint8)
    prev = np.zeros(w, dtype=np.int64)
    for y in range(h):
        ftype = rows[y, 0]
        line = rows[y, 1:].astype(np.int64)
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            cur = np.zeros(w, dtype=np.int64)
            for x in range(w):
                left = cur[x - 1] if x else 0
                if ftype == 1:
                    pred = left
                elif ftype == 3:
                    pred = (left + prev[x]) // 2
                else:
                    pred = _paeth(left, prev[x], prev[x - 1] if x else 0)
                cur[x] = (line[x] + pred) & 0xFF
        else:
            raise FormatError(f"bad PNG filter type {ftype}")
        out[y] = cur
        prev = cur
    return out, text


def write_png_gray(path, pixels, text=None) -> None:
    atomic_write_bytes(path, encode_png_gray(pixels, text))


def read_png_gray(path):
    with open(path, "rb") as fh:
        return decode_png_gray(fh.read())
