import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ascbench import dsp
from ascbench.audio_io import AudioClip
from ascbench.dsp import FeatureConfig
from ascbench.errors import ConfigError, ShapeError

LN_FLOOR = math.log(1e-10)


def naive_power(frame, n_fft):
    x = np.zeros(n_fft)
    x[:len(frame)] = frame
    k = np.arange(n_fft)
    X = np.array([np.sum(x * np.exp(-2j * np.pi * kk * k / n_fft)) for kk in range(n_fft // 2 + 1)])
    return np.abs(X) ** 2 / n_fft


# framing -----------------------------------------------------------------

def test_frame_count_five_seconds():
    assert dsp.frame_signal(np.zeros(220500), 882, 441).shape == (499, 882)


def test_single_frame_identity():
    x = np.random.default_rng(0).standard_normal(882)
    np.testing.assert_array_equal(dsp.frame_signal(x, 882, 441), x[None, :])


def test_frame_starts_by_enumeration():
    frames = dsp.frame_signal(np.arange(10.0), 4, 2)
    assert frames.shape == (4, 4)
    np.testing.assert_array_equal(frames[:, 0], [0, 2, 4, 6])


def test_frames_do_not_alias_input():
    x = np.arange(10.0)
    f = dsp.frame_signal(x, 4, 2)
    f[:] = -1
    np.testing.assert_array_equal(x, np.arange(10.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 300), st.integers(1, 50), st.integers(1, 50))
def test_frame_count_formula(length, frame, hop):
    if length < frame:
        with pytest.raises(dsp.SignalTooShortError, match=str(frame)):
            dsp.frame_signal(np.zeros(length), frame, hop)
    else:
        assert len(dsp.frame_signal(np.zeros(length), frame, hop)) == (length - frame) // hop + 1


# window ------------------------------------------------------------------

def test_hann_values():
    w = dsp.hann_window(8)
    assert w[0] == 0.0 and w[4] == 1.0
    assert abs(w[2] - 0.5) < 1e-15
    np.testing.assert_allclose(w[1:4], w[7:4:-1], atol=1e-15)  # symmetric about n/2
    with pytest.raises(ConfigError):
        dsp.hann_window(1)


# power spectrum ----------------------------------------------------------

def test_impulse_is_flat():
    x = np.zeros(1024)
    x[0] = 1
    np.testing.assert_allclose(dsp.power_spectrum(x, 1024), 1 / 1024, rtol=1e-12)


def test_zero_frame():
    assert not dsp.power_spectrum(np.zeros(882), 1024).any()


def test_cosine_peak():
    t = np.arange(1024)
    p = dsp.power_spectrum(np.cos(2 * np.pi * 64 * t / 1024), 1024)
    assert np.argmax(p) == 64
    ref = naive_power(np.cos(2 * np.pi * 64 * t / 1024), 1024)
    np.testing.assert_allclose(p, ref, atol=1e-9)


@pytest.mark.parametrize("n_fft,frame_len", [(8, 5), (64, 64), (256, 200)])
def test_power_matches_naive_dft(n_fft, frame_len):
    frames = np.random.default_rng(n_fft).standard_normal((4, frame_len))
    got = dsp.power_spectrum(frames, n_fft)
    for f, g in zip(frames, got):
        np.testing.assert_allclose(g, naive_power(f, n_fft), rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("n_fft,frame_len", [(1000, 10), (8, 9)])
def test_power_argument_errors(n_fft, frame_len):
    with pytest.raises(ConfigError):
        dsp.power_spectrum(np.zeros(frame_len), n_fft)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 10), st.integers(0, 2 ** 31))
def test_parseval(log_n, seed):
    n = 2 ** log_n
    x = np.random.default_rng(seed).standard_normal(n - seed % 3)
    p = dsp.power_spectrum(x, n)
    two_sided = p[0] + p[-1] + 2 * p[1:-1].sum()
    assert abs(two_sided - np.sum(x * x)) <= 1e-9 * np.sum(x * x)


# mel scale ---------------------------------------------------------------

def test_mel_values():
    assert dsp.mel_scale(0.0) == 0.0
    assert abs(dsp.mel_scale(1000.0) - 2595 * math.log10(1 + 1000 / 700)) < 1e-12
    assert abs(dsp.mel_scale(1000.0) - 999.99) < 0.01
    assert abs(dsp.hz_scale(dsp.mel_scale(4000.0)) - 4000.0) < 4000 * 1e-6
    with pytest.raises(ConfigError):
        dsp.mel_scale(-1.0)
    with pytest.raises(ConfigError):
        dsp.hz_scale(-1.0)


@settings(max_examples=50)
@given(st.floats(0, 30000))
def test_mel_round_trip(f):
    assert abs(dsp.hz_scale(dsp.mel_scale(f)) - f) <= 1e-6 * max(f, 1.0)


# filterbank --------------------------------------------------------------

def test_default_bank_partition_of_unity():
    bank = dsp.build_mel_filterbank(40, 1024, 44100, 0, 22050)
    freqs = np.arange(513) * 44100 / 1024
    c = bank.center_freqs_hz
    inside = (freqs > c[0]) & (freqs < c[-1])
    np.testing.assert_allclose(bank.weights[:, inside].sum(axis=0), 1.0, atol=1e-6)


def test_bank_structure():
    bank = dsp.build_mel_filterbank(40, 1024, 44100)
    assert bank.weights.shape == (40, 513)
    assert (bank.weights >= 0).all() and (bank.weights <= 1).all()
    assert np.all(np.diff(bank.center_freqs_hz) > 0)
    freqs = np.arange(513) * 44100 / 1024
    for m in range(40):
        outside = (freqs <= bank.edges_hz[m]) | (freqs >= bank.edges_hz[m + 2])
        assert not bank.weights[m, outside].any()
    # the continuous triangles peak at exactly 1 on the centre frequencies
    np.testing.assert_allclose(np.diag(bank.response(bank.center_freqs_hz)), 1.0, atol=1e-12)


def test_edges_equally_spaced_in_mel():
    bank = dsp.build_mel_filterbank(10, 512, 16000, 100, 7000)
    steps = np.diff(dsp.mel_scale(bank.edges_hz))
    np.testing.assert_allclose(steps, steps[0], rtol=1e-9)
    assert len(bank.edges_hz) == 12


def test_two_band_bank_on_exact_bins():
    # mel edges 0, 700, 2100, 4900 Hz land on bins 0, 1, 3, 7 when rate/n_fft = 700 Hz.
    # f_max is chosen so mel(f_max)/3 = mel(700); 2595 log10(8) / 3 = 2595 log10(2).
    bank = dsp.build_mel_filterbank(2, 16, 11200, 0.0, 4900.0)
    np.testing.assert_allclose(bank.edges_hz, [0, 700, 2100, 4900], atol=1e-9)
    w = bank.weights
    np.testing.assert_allclose(w.max(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(w[0], [0, 1, 0.5, 0, 0, 0, 0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(w[1, :8], [0, 0, 0.5, 1, 0.75, 0.5, 0.25, 0], atol=1e-12)
    # supports abut at the shared centre: filter 0 ends where filter 1 peaks
    assert w[0, 3] == 0 and w[1, 3] == pytest.approx(1.0)


@pytest.mark.parametrize("kw", [dict(f_min_hz=500, f_max_hz=400), dict(f_max_hz=30000), dict(n_mels=1)])
def test_bank_argument_errors(kw):
    args = dict(n_mels=8, n_fft=256, rate_hz=16000)
    args.update(kw)
    with pytest.raises(ConfigError):
        dsp.build_mel_filterbank(**args)


def test_apply_filterbank_linear():
    bank = dsp.build_mel_filterbank(8, 256, 16000)
    np.testing.assert_allclose(dsp.apply_filterbank(np.ones((1, 129)), bank)[0], bank.weights.sum(axis=1))
    assert not dsp.apply_filterbank(np.zeros((2, 129)), bank).any()
    s = np.random.default_rng(1).random((3, 129))
    np.testing.assert_allclose(dsp.apply_filterbank(2 * s, bank), 2 * dsp.apply_filterbank(s, bank))
    with pytest.raises(ShapeError):
        dsp.apply_filterbank(np.ones((1, 128)), bank)


# DCT ---------------------------------------------------------------------

@pytest.mark.parametrize("m", [1, 2, 4, 13, 20, 40, 128])
def test_dct_orthonormal(m):
    d = dsp.dct2_matrix(m)
    assert np.abs(d @ d.T - np.eye(m)).max() < 1e-10


def test_dct_small_cases():
    np.testing.assert_array_equal(dsp.dct2_matrix(1), [[1.0]])
    np.testing.assert_allclose(dsp.dct2_matrix(4) @ np.ones(4), [2, 0, 0, 0], atol=1e-12)


def test_dct_matches_direct_sum():
    m = 7
    x = np.random.default_rng(0).standard_normal(m)
    direct = [sum(x[k] * math.cos(math.pi * j * (2 * k + 1) / (2 * m)) for k in range(m)) *
              (math.sqrt(1 / m) if j == 0 else math.sqrt(2 / m)) for j in range(m)]
    np.testing.assert_allclose(dsp.dct2_matrix(m) @ x, direct, atol=1e-12)


# log-mel and MFCC --------------------------------------------------------

def noise_clip(seconds=0.5, rate=44100, amp=0.3, seed=0):
    x = amp * np.random.default_rng(seed).uniform(-1, 1, int(seconds * rate))
    return AudioClip(x[None, :], rate, "noise")


def test_log_mel_shape_and_silence():
    lms = dsp.log_mel_spectrogram(AudioClip(np.zeros((1, 220500)), 44100), FeatureConfig())
    assert lms.values.shape == (499, 128)
    np.testing.assert_array_equal(lms.values, LN_FLOOR)


def test_log_mel_amplitude_shift():
    cfg = FeatureConfig()
    a = dsp.log_mel_spectrogram(noise_clip(amp=0.3), cfg).values
    b = dsp.log_mel_spectrogram(noise_clip(amp=0.6), cfg).values
    mask = a > LN_FLOOR + 1
    np.testing.assert_allclose((b - a)[mask], 2 * math.log(2), atol=1e-9)


def test_mfcc_shape_and_amplitude_property():
    cfg = FeatureConfig.for_representation("mfcc")
    assert (cfg.n_mels, cfg.n_coeffs) == (40, 20)
    a = dsp.mfcc(noise_clip(5.0, amp=0.25), cfg).values
    b = dsp.mfcc(noise_clip(5.0, amp=0.5), cfg).values
    assert a.shape == (499, 20)
    np.testing.assert_allclose(b[:, 0] - a[:, 0], 2 * math.log(2) * math.sqrt(40), atol=1e-6)
    np.testing.assert_allclose(b[:, 1:], a[:, 1:], atol=1e-6)


def test_mfcc_identical_frames_identical_rows():
    tile = np.random.default_rng(2).uniform(-0.5, 0.5, 441)
    clip = AudioClip(np.tile(tile, 20)[None, :], 44100)
    rows = dsp.mfcc(clip, FeatureConfig.for_representation("mfcc")).values
    np.testing.assert_array_equal(rows, np.broadcast_to(rows[0], rows.shape))


def test_mfcc_rejects_too_many_coefficients():
    with pytest.raises(ConfigError):
        dsp.mfcc(noise_clip(), FeatureConfig.for_representation("mfcc", n_coeffs=41))


def test_features_deterministic_and_fingerprinted():
    c = noise_clip()
    a, b = dsp.log_mel_spectrogram(c), dsp.log_mel_spectrogram(c)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.fingerprint == b.fingerprint
    other = dsp.log_mel_spectrogram(c, FeatureConfig(hop_length=882))
    assert other.fingerprint != a.fingerprint


# image rendering ---------------------------------------------------------

def test_identity_size_render():
    v = np.random.default_rng(3).standard_normal((224, 224))
    img = dsp.render_spectrogram_image(dsp.LogMelSpectrogram(v)).pixels
    expected = np.floor(255 * (v.T[::-1] - v.min()) / (v.max() - v.min()) + 0.5)
    np.testing.assert_array_equal(img, expected)
    assert img.dtype == np.uint8 and img.min() == 0 and img.max() == 255


def test_low_bands_at_bottom():
    v = np.zeros((10, 4))
    v[:, 0] = 1.0  # lowest band loud
    img = dsp.render_spectrogram_image(dsp.LogMelSpectrogram(v)).pixels
    assert img.shape == (224, 224)
    assert img[-1].min() == 255 and img[0].max() == 0


def test_constant_input_is_black():
    img = dsp.render_spectrogram_image(dsp.LogMelSpectrogram(np.full((5, 7), 3.0))).pixels
    assert not img.any()


def test_empty_render_rejected():
    with pytest.raises(ConfigError):
        dsp.render_spectrogram_image(dsp.LogMelSpectrogram(np.zeros((0, 4))))


def test_bilinear_two_by_two():
    out = dsp.bilinear_resize(np.array([[0.0, 255.0], [0.0, 255.0]]), 224, 224)
    assert np.all(np.diff(out, axis=1) > 0)
    np.testing.assert_allclose(out[:, 0], 0)
    np.testing.assert_allclose(out[:, -1], 255)
    # corner-aligned: sample j sits at j/(223) of the way across
    np.testing.assert_allclose(out[0], 255 * np.arange(224) / 223, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 30), st.integers(1, 30), st.integers(0, 2 ** 31))
def test_bilinear_stays_within_range(h, w, oh, ow, seed):
    a = np.random.default_rng(seed).standard_normal((h, w))
    out = dsp.bilinear_resize(a, oh, ow)
    assert out.shape == (oh, ow)
    assert out.min() >= a.min() - 1e-12 and out.max() <= a.max() + 1e-12
