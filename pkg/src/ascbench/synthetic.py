"""Synthetic two-scene audio corpus for desk-scale experiments.

Indoor recordings are Gaussian noise low-passed below 2 kHz; outdoor
recordings are a few steady tones above 4 kHz over faint broadband noise.
Gains and band edges vary per recording so loudness alone does not
separate the classes.
"""

from pathlib import Path

import numpy as np

from .audio_io import AudioClip, write_wav
from .dataset import SCENE_OF, SUBCLASSES

INDOOR = [s for s in SUBCLASSES if SCENE_OF[s] == "Indoor"]
OUTDOOR = [s for s in SUBCLASSES if SCENE_OF[s] == "Outdoor"]


def lowpass_noise(rng, n, rate, cutoff_hz):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    spec[freqs >= cutoff_hz] = 0.0
    x = np.fft.irfft(spec, n)
    return x / np.max(np.abs(x))


def tonal(rng, n, rate, lo_hz=4000.0, hi_hz=None, n_tones=(1, 3)):
    hi_hz = hi_hz or min(0.4 * rate, 12000.0)
    t = np.arange(n) / rate
    x = np.zeros(n)
    for _ in range(rng.integers(n_tones[0], n_tones[1] + 1)):
        f = rng.uniform(lo_hz, hi_hz)
        x += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return x / np.max(np.abs(x))


def scene_recording(indoor: bool, rng, seconds=10.0, rate=44100):
    n = int(round(seconds * rate))
    gain = rng.uniform(0.2, 0.8)
    if indoor:
        x = lowpass_noise(rng, n, rate, rng.uniform(800.0, 2000.0))
    else:
        x = tonal(rng, n, rate) + 0.02 * rng.standard_normal(n)
        x /= np.max(np.abs(x))
    return gain * x


def make_two_class_corpus(root, n_recordings=200, seconds=10.0, rate=44100, seed=0):
    """Write ``n_recordings`` WAVs under ``root/<subclass>/``, half per scene.

    Returns the list of written paths. Subclasses are filled round-robin
    within each scene.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n_recordings):
        indoor = i % 2 == 0
        pool = INDOOR if indoor else OUTDOOR
        sub = pool[(i // 2) % len(pool)]
        x = scene_recording(indoor, rng, seconds, rate)
        path = root / sub / f"rec{i:04d}.wav"
        write_wav(path, AudioClip(x[None, :], rate, path.stem))
        paths.append(path)
    return paths
