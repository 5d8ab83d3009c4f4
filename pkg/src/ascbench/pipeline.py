"""Feature extraction over manifests and loading features back as training sets.

A feature directory holds one file per manifest entry (``.png`` for
spectrogram images, ``.feat`` containers otherwise), a ``manifest.jsonl``
whose paths point at those files, and ``features.json`` describing the
representation and pipeline fingerprint.
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path, PurePosixPath

import numpy as np

from .audio_io import downmix_to_mono, read_wav
from .containers import read_feature_matrix, read_png_gray, write_feature_matrix, write_png_gray
from .dataset import DatasetManifest, load_manifest, save_manifest
from .dsp import FeatureConfig, log_mel_spectrogram, mfcc, render_spectrogram_image
from .embeddings import EMBEDDING_DIM, parse_embedding_csv, proxy_embeddings
from .errors import CompatibilityError, DataError, DuplicateEntryError, FormatError
from .fsutil import atomic_write_text, canonical_json, fingerprint, parallel_map
from .models import FeatureSet, ModelConfig, prepare_input

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
FEATURES_META = "features.json"
# ingested CSV embeddings come from outside; their pipeline identity is the format itself
INGEST_FINGERPRINT = fingerprint({"representation": "embedding", "source": "csv", "cols": EMBEDDING_DIM})


def feature_suffix(representation: str) -> str:
    return ".png" if representation == "spectrogram" else ".feat"


def output_name(entry, suffix: str) -> str:
    """``<subclass>/<stem><suffix>``: keeps outputs inside the target directory."""
    return f"{entry.subclass}/{PurePosixPath(entry.path).stem}{suffix}"


def _unique_names(entries, suffix):
    names = [output_name(e, suffix) for e in entries]
    seen = set()
    for n in names:
        if n in seen:
            raise DuplicateEntryError(f"two entries map to the same output file {n}")
        seen.add(n)
    return names


def extract_one(args):
    """Worker: audio file -> feature file. Returns ``(fingerprint, shape)``."""
    src, dst, cfg = args
    clip = downmix_to_mono(read_wav(src))
    if cfg.representation == "spectrogram":
        img = render_spectrogram_image(log_mel_spectrogram(clip, cfg))
        write_png_gray(dst, img.pixels, {"fingerprint": img.provenance})
        return img.provenance, img.pixels.shape
    if cfg.representation == "mfcc":
        m = mfcc(clip, cfg)
        write_feature_matrix(dst, m.values, m.fingerprint)
        return m.fingerprint, m.values.shape
    emb = proxy_embeddings(clip, cfg)
    fp = cfg.fingerprint(clip.sample_rate_hz)
    write_feature_matrix(dst, emb.values, fp)
    return fp, emb.values.shape


def _write_feature_dir(manifest, out_dir, entries, results, representation, run_fingerprint):
    fps = sorted({fp for fp, _ in results})
    if len(fps) != 1:
        raise CompatibilityError(f"clips produced {len(fps)} different pipeline fingerprints "
                                 "(mixed sample rates?); features must share one pipeline")
    shapes = sorted({tuple(s) for _, s in results})
    feats = DatasetManifest(entries, out_dir)
    save_manifest(feats, Path(out_dir) / MANIFEST_NAME)
    meta = {"representation": representation, "fingerprint": fps[0], "shapes": [list(s) for s in shapes],
            "config_fingerprint": run_fingerprint, "count": len(entries)}
    atomic_write_text(Path(out_dir) / FEATURES_META, json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return feats, meta


def extract_features(manifest: DatasetManifest, cfg: FeatureConfig, out_dir, jobs: int = 1,
                     run_fingerprint: str = ""):
    """Compute one feature file per entry; returns the feature manifest and metadata."""
    out_dir = Path(out_dir)
    if not len(manifest):
        raise DataError("manifest has no entries to extract")
    suffix = feature_suffix(cfg.representation)
    tasks, entries = [], []
    for e, rel in zip(manifest, _unique_names(manifest, suffix)):
        src = manifest.resolve(e)
        if not src.is_file():
            raise DataError(f"missing audio file: {src}")
        tasks.append((src, out_dir / rel, cfg))
        entries.append(replace(e, path=rel))
    results = parallel_map(extract_one, tasks, jobs)
    return _write_feature_dir(manifest, out_dir, entries, results, cfg.representation, run_fingerprint)


def ingest_embeddings(manifest: DatasetManifest, csv_dir, out_dir, run_fingerprint: str = ""):
    """Convert ``<csv_dir>/<subclass>/<stem>.csv`` files into feature containers."""
    csv_dir, out_dir = Path(csv_dir), Path(out_dir)
    if not csv_dir.is_dir():
        raise DataError(f"embeddings directory not found: {csv_dir}")
    entries, results = [], []
    for e, rel in zip(manifest, _unique_names(manifest, ".feat")):
        src = csv_dir / output_name(e, ".csv")
        if not src.is_file():
            raise DataError(f"missing embedding file: {src}")
        try:
            emb = parse_embedding_csv(src.read_text(encoding="utf-8"), e.entry_id)
        except FormatError as exc:
            raise FormatError(f"{src}: {exc}") from None
        write_feature_matrix(out_dir / rel, emb.values, INGEST_FINGERPRINT)
        entries.append(replace(e, path=rel))
        results.append((INGEST_FINGERPRINT, emb.values.shape))
    return _write_feature_dir(manifest, out_dir, entries, results, "embedding", run_fingerprint)


def read_feature_file(path):
    """``(matrix float64, fingerprint)`` from a ``.png`` or ``.feat`` file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing feature file: {path}")
    if path.suffix == ".png":
        pixels, text = read_png_gray(path)
        return pixels.astype(np.float64), text.get("fingerprint", "")
    return read_feature_matrix(path)


@dataclass
class FeatureDir:
    manifest: DatasetManifest
    meta: dict

    @property
    def fingerprint(self):
        return self.meta["fingerprint"]

    @property
    def representation(self):
        return self.meta["representation"]

    @property
    def raw_shape(self):
        return tuple(self.meta["shapes"][0])


def open_feature_dir(path) -> FeatureDir:
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"feature directory not found: {path}")
    meta_path = path / FEATURES_META
    if not meta_path.is_file():
        raise DataError(f"{path} has no {FEATURES_META}; run extract or embed-ingest first")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: {exc}") from None
    if len(meta.get("shapes", [])) != 1:
        raise FormatError(f"{meta_path}: features have differing shapes {meta.get('shapes')}")
    return FeatureDir(load_manifest(path / MANIFEST_NAME), meta)


def load_feature_set(fdir: FeatureDir, cfg: ModelConfig, split: str = None) -> FeatureSet:
    """Features of one split (or all), shaped for ``cfg``'s network."""
    xs, ys, ids = [], [], []
    for e in fdir.manifest:
        if split is not None and e.split != split:
            continue
        m, fp = read_feature_file(fdir.manifest.resolve(e))
        if fp != fdir.fingerprint:
            raise CompatibilityError(f"{e.path}: fingerprint {fp} differs from the directory's {fdir.fingerprint}")
        xs.append(prepare_input(m, cfg))
        ys.append(e.label(cfg.n_classes))
        ids.append(e.entry_id)
    x = np.stack(xs) if xs else np.zeros((0,) + tuple(cfg.input_shape))
    return FeatureSet(x, np.array(ys, dtype=np.int64), fdir.fingerprint, ids)


def prepared_shape(raw_shape, cfg: ModelConfig):
    return prepare_input(np.zeros(raw_shape), cfg).shape


def dumps_line(obj) -> str:
    return canonical_json(obj) + "\n"


def waveform_image(samples, width: int = 800, height: int = 200) -> np.ndarray:
    """Min/max envelope of a mono signal as a uint8 raster (black trace on white)."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    img = np.full((height, width), 255, dtype=np.uint8)
    if x.size == 0:
        return img
    edges = np.linspace(0, x.size, width + 1).astype(int)
    mid = (height - 1) / 2.0
    for col in range(width):
        seg = x[edges[col]:max(edges[col + 1], edges[col] + 1)]
        # amplitude +1 maps to the top row
        top = int(round(mid - seg.max() * mid))
        bot = int(round(mid - seg.min() * mid))
        img[max(top, 0):min(bot, height - 1) + 1, col] = 0
    return img
