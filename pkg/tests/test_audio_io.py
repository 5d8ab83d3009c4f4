import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ascbench.audio_io import (AudioClip, PcmFormat, decode_wav, downmix_to_mono, encode_wav, read_wav,
                               split_clip, write_wav)
from ascbench.errors import ConfigError, FormatError, TruncationError, UnsupportedFormatError


def wav_bytes(payload, channels=1, rate=44100, bits=16, tag=1, extra_chunks=b"", fmt_extra=b""):
    block = channels * bits // 8
    fmt_body = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits) + fmt_extra
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_body)) + fmt_body + extra_chunks
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_16bit_minimum_is_minus_one():
    clip = decode_wav(wav_bytes(b"\x00\x80"))
    assert clip.samples[0, 0] == -1.0
    assert clip.bit_depth == 16


def test_24bit_maximum():
    clip = decode_wav(wav_bytes(b"\xff\xff\x7f", bits=24))
    assert clip.samples[0, 0] == 8388607 / 8388608


def test_24bit_negative_sign_extension():
    clip = decode_wav(wav_bytes(b"\x00\x00\x80\xff\xff\xff", bits=24))
    np.testing.assert_array_equal(clip.samples[0], [-1.0, -1 / 8388608])


def test_ten_second_stereo_file_sample_count():
    payload = bytes(10 * 44100 * 2 * 2)
    clip = decode_wav(wav_bytes(payload, channels=2))
    assert clip.channels == 2
    assert clip.n_samples == 441000
    assert clip.duration_seconds == 10.0


def test_stereo_interleaving():
    ints = np.array([1, -1, 2, -2], dtype="<i2")
    clip = decode_wav(wav_bytes(ints.tobytes(), channels=2))
    np.testing.assert_array_equal(clip.samples * 32768, [[1, 2], [-1, -2]])


def test_unknown_chunks_skipped_including_odd_padding():
    junk = b"LIST" + struct.pack("<I", 3) + b"abc" + b"\x00"
    clip = decode_wav(wav_bytes(b"\x00\x40", extra_chunks=junk))
    assert clip.samples[0, 0] == 0.5


def test_extensible_pcm_accepted():
    guid = b"\x01\x00\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"
    ext = struct.pack("<HHI", 22, 16, 4) + guid
    clip = decode_wav(wav_bytes(b"\x00\x40", tag=0xFFFE, fmt_extra=ext))
    assert clip.samples[0, 0] == 0.5


@pytest.mark.parametrize("kwargs,exc", [
    ({"tag": 3}, UnsupportedFormatError),     # IEEE float
    ({"bits": 8}, UnsupportedFormatError),
    ({"bits": 32}, UnsupportedFormatError),
])
def test_unsupported_formats(kwargs, exc):
    with pytest.raises(exc):
        decode_wav(wav_bytes(b"\x00" * 12, **kwargs))


def test_malformed_header():
    with pytest.raises(FormatError):
        decode_wav(b"RIFX0000WAVE")
    with pytest.raises(FormatError):
        decode_wav(b"RIFF" + struct.pack("<I", 4) + b"WAVE")


def test_truncated_data_chunk():
    data = wav_bytes(b"\x00\x00" * 10)[:-4]
    with pytest.raises(TruncationError):
        decode_wav(data)


def test_partial_frame_is_truncation():
    with pytest.raises(TruncationError):
        decode_wav(wav_bytes(b"\x00\x00\x00", channels=1))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([16, 24]), st.integers(1, 2), st.integers(0, 300), st.integers(0, 2 ** 31))
def test_round_trip_within_one_step(bits, channels, n, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, (channels, n))
    clip = AudioClip(x, 22050)
    back = decode_wav(encode_wav(clip, PcmFormat(bits, channels, 22050)))
    assert back.samples.shape == x.shape
    if n:
        assert np.abs(back.samples - x).max() <= 2.0 ** -(bits - 1)


def test_round_trip_of_decoded_24bit_is_exact():
    ints = np.array([-8388608, -1, 0, 1, 8388607])
    u = ints & 0xFFFFFF
    payload = np.stack([u & 0xFF, (u >> 8) & 0xFF, u >> 16], axis=1).astype(np.uint8).tobytes()
    original = wav_bytes(payload, bits=24)
    clip = decode_wav(original)
    assert encode_wav(clip, PcmFormat(24)) == original


def test_requantize_24_to_16():
    x = np.random.default_rng(3).uniform(-1, 1, (1, 1000))
    c24 = decode_wav(encode_wav(AudioClip(x, 44100), PcmFormat(24)))
    c16 = decode_wav(encode_wav(c24, PcmFormat(16)))
    assert np.abs(c16.samples - c24.samples).max() <= 2.0 ** -15


def test_zero_length_clip():
    data = encode_wav(AudioClip(np.zeros((1, 0)), 44100), PcmFormat())
    assert len(data) == 44
    assert decode_wav(data).n_samples == 0


def test_header_fields_bit_exact():
    data = encode_wav(AudioClip(np.zeros((2, 3)), 48000), PcmFormat(24, 2, 48000))
    assert data[:4] == b"RIFF" and struct.unpack("<I", data[4:8])[0] == 36 + 18
    assert struct.unpack("<IHHIIHH", data[16:36]) == (16, 1, 2, 48000, 48000 * 6, 6, 24)
    assert data[36:40] == b"data" and struct.unpack("<I", data[40:44])[0] == 18


def test_encode_rejects_out_of_range():
    clip = AudioClip(np.zeros((1, 2)), 44100)
    clip.samples[0, 0] = 1.5  # bypasses the constructor check
    with pytest.raises(ConfigError):
        encode_wav(clip, PcmFormat())


def test_clip_rejects_out_of_range():
    with pytest.raises(ConfigError):
        AudioClip(np.array([[1.01]]), 44100)


def test_file_round_trip(tmp_path):
    x = np.linspace(-1, 1, 101)[None, :]
    write_wav(tmp_path / "a" / "clip.wav", AudioClip(x, 16000), bit_depth=24)
    back = read_wav(tmp_path / "a" / "clip.wav")
    assert back.source_id == "clip" and back.bit_depth == 24
    assert np.abs(back.samples - x).max() <= 2.0 ** -23


def test_downmix():
    same = AudioClip(np.array([[0.5, -0.25], [0.5, -0.25]]), 8000)
    np.testing.assert_array_equal(downmix_to_mono(same).samples, [[0.5, -0.25]])
    opposite = AudioClip(np.array([[1.0], [-1.0]]), 8000)
    np.testing.assert_array_equal(downmix_to_mono(opposite).samples, [[0.0]])
    mono = AudioClip(np.array([[0.1, 0.2]]), 8000)
    assert downmix_to_mono(mono) is mono


@pytest.mark.parametrize("n,expected_segments,expected_rem", [(441000, 2, 0), (220500, 1, 0), (441001, 2, 1)])
def test_split_counts(n, expected_segments, expected_rem):
    x = np.random.default_rng(n).uniform(-1, 1, (1, n))
    segs, rem = split_clip(AudioClip(x, 44100, "rec"), 5.0)
    assert len(segs) == expected_segments and rem == expected_rem
    assert all(s.n_samples == 220500 for s in segs)
    assert [s.source_id for s in segs] == [f"rec:{i}" for i in range(expected_segments)]
    np.testing.assert_array_equal(np.concatenate([s.samples for s in segs], axis=1), x[:, :n - rem])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 2), st.integers(0, 400), st.integers(1, 50))
def test_split_conserves_and_commutes_with_downmix(channels, n, seg_len):
    x = np.random.default_rng(n).uniform(-1, 1, (channels, n))
    clip = AudioClip(x, 100)
    segs, rem = split_clip(clip, seg_len / 100)
    assert sum(s.n_samples for s in segs) + rem == n
    a = [downmix_to_mono(s).samples for s in segs]
    b = [s.samples for s in split_clip(downmix_to_mono(clip), seg_len / 100)[0]]
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)


@pytest.mark.parametrize("seconds", [0, -1.0])
def test_split_rejects_nonpositive(seconds):
    with pytest.raises(ConfigError):
        split_clip(AudioClip(np.zeros((1, 10)), 100), seconds)
