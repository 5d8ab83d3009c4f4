"""Fixture builders shared by unit and acceptance tests."""

import numpy as np

from ascbench.dataset import SUBCLASSES, DatasetManifest, ManifestEntry


def full_scale_manifest(per_subclass=1440, segments=2, augmented=True):
    """``per_subclass`` ten-second recordings per subclass, cut in two, each half augmented once."""
    entries = []
    for sub in SUBCLASSES:
        for r in range(per_subclass):
            parent = f"{sub}/rec{r:05d}"
            for s in range(segments):
                entries.append(ManifestEntry(f"{parent}_s{s}.wav", sub, parent))
                if augmented:
                    entries.append(ManifestEntry(f"{parent}_s{s}_aug.wav", sub, parent, augmented=True))
    return DatasetManifest(entries)


def history(train_accs, eval_accs):
    return [{"epoch": i + 1, "train_acc": a, "eval_acc": b, "train_loss": 0.0, "eval_loss": 0.0,
             "gap": a - b} for i, (a, b) in enumerate(zip(train_accs, eval_accs))]


def blobs(n, shape, n_classes=2, seed=0, spread=0.3):
    """Balanced labelled Gaussian blobs with class-specific means."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes,) + tuple(shape))
    y = np.arange(n) % n_classes
    x = centers[y] + spread * rng.standard_normal((n,) + tuple(shape))
    return x, y


def tiny_config(path, **train):
    """Small-network MFCC config that trains in well under a second per epoch."""
    import json

    cfg = {"representation": "mfcc", "segment_seconds": 1.0, "split": {"test_fraction": 0.5},
           "model": {"channels": [4, 8], "dense_units": 16},
           "train": {"max_epochs": 2, "batch_size": 8, "learning_rate": 0.01, **train}}
    path.write_text(json.dumps(cfg))
    return path


def run_pipeline(run, raw, out, config):
    """segment -> augment -> split -> extract -> train -> eval -> report; returns exit codes."""
    c = ["--config", str(config)]
    steps = [
        ["segment", "--input", raw, "--out", out / "seg"],
        ["augment", "--input", out / "seg", "--out", out / "aug"],
        ["split", "--input", out / "aug", "--out", out / "split"],
        ["extract", "--input", out / "split", "--out", out / "feats"],
        ["train", "--input", out / "feats", "--out", out / "run"],
        ["eval", "--input", out / "feats", "--model", out / "run" / "model.ascm", "--out", out / "run"],
        ["report", "--input", out / "run" / "results.json", "--out", out / "report"],
    ]
    return [run([str(a) for a in s] + c) for s in steps]


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
