"""Dataset manifests: taxonomy, balance, group-aware splits and accounting.

A manifest file is JSON lines, one record per clip::

    {"augmented": false, "parent_id": "airport/a-01", "path": "airport/a-01.wav",
     "scene": "Indoor", "split": "unassigned", "subclass": "Airport"}

Paths are stored relative to the directory holding the manifest file.
``parent_id`` names the original recording; every segment and augmented
variant of one recording shares it, which is what the split groups on.
"""

import json
import logging
import os
import re
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path, PurePosixPath

import numpy as np

from .errors import ConfigError, DataError, DuplicateEntryError, FormatError, TaxonomyError
from .fsutil import atomic_write_text, canonical_json

log = logging.getLogger(__name__)

SCENES = ("Indoor", "Outdoor")
SUBCLASSES = ("Airport", "MetroStation", "ShoppingMall", "Park", "PedestrianStreet", "PublicSquare")
SCENE_OF = {
    "Airport": "Indoor",
    "MetroStation": "Indoor",
    "ShoppingMall": "Indoor",
    "Park": "Outdoor",
    "PedestrianStreet": "Outdoor",
    "PublicSquare": "Outdoor",
}
SPLITS = ("train", "test", "unassigned")

# directory-name spellings, compared after lowercasing and dropping non-alphanumerics
_ALIASES = {
    "airport": "Airport",
    "metrostation": "MetroStation",
    "shoppingmall": "ShoppingMall",
    "park": "Park",
    "pedestrianstreet": "PedestrianStreet",
    "streetpedestrian": "PedestrianStreet",
    "publicsquare": "PublicSquare",
}


def canonical_subclass(name: str) -> str:
    key = re.sub(r"[^a-z0-9]", "", name.lower())
    if key not in _ALIASES:
        raise TaxonomyError(f"unknown subclass {name!r}; expected one of {', '.join(SUBCLASSES)}")
    return _ALIASES[key]


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    subclass: str
    parent_id: str
    split: str = "unassigned"
    augmented: bool = False
    scene: str = None

    def __post_init__(self):
        if self.subclass not in SCENE_OF:
            raise TaxonomyError(f"unknown subclass {self.subclass!r}")
        expected = SCENE_OF[self.subclass]
        if self.scene is None:
            object.__setattr__(self, "scene", expected)
        elif self.scene != expected:
            raise TaxonomyError(f"{self.subclass} belongs to {expected}, entry says {self.scene}")
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {self.split!r}")

    @property
    def entry_id(self) -> str:
        """Stable identifier: the path without its extension."""
        return str(PurePosixPath(self.path).with_suffix(""))

    def label(self, n_classes: int = 2) -> int:
        if n_classes == 2:
            return SCENES.index(self.scene)
        if n_classes == 6:
            return SUBCLASSES.index(self.subclass)
        raise ConfigError(f"n_classes must be 2 or 6, got {n_classes}")


def class_names(n_classes: int):
    return list(SCENES if n_classes == 2 else SUBCLASSES)


def collapse_label(label6: int) -> int:
    """Map a six-way subclass label to the two-way scene label."""
    return SCENES.index(SCENE_OF[SUBCLASSES[label6]])


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    root: Path = Path(".")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        return Path(self.root) / entry.path

    def with_entries(self, entries):
        return DatasetManifest(list(entries), self.root)


def relative_posix(path, start) -> str:
    return PurePosixPath(Path(os.path.relpath(Path(path).resolve(), Path(start).resolve()))).as_posix()


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write JSON lines with paths rebased onto the manifest file's directory."""
    path = Path(path)
    lines = []
    for e in manifest.entries:
        rec = asdict(e)
        rec["path"] = relative_posix(manifest.resolve(e), path.parent)
        lines.append(canonical_json(rec))
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            entries.append(ManifestEntry(
                path=rec["path"], subclass=rec["subclass"], parent_id=rec["parent_id"],
                split=rec.get("split", "unassigned"), augmented=bool(rec.get("augmented", False)),
                scene=rec.get("scene"),
            ))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}:{lineno}: bad manifest record ({exc})") from None
    return DatasetManifest(entries, path.parent)


def build_manifest(root, extensions=(".wav",)) -> DatasetManifest:
    """Scan a directory-per-subclass tree, or read a ``path,subclass`` CSV index.

    Every file becomes one unassigned, non-augmented entry whose parent is
    itself.
    """
    root = Path(root)
    entries = []
    if root.is_file():
        base = root.parent
        seen = set()
        for lineno, line in enumerate(root.read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rel, sub = (s.strip() for s in line.split(","))
            except ValueError:
                raise FormatError(f"{root}:{lineno}: expected 'path,subclass'") from None
            if rel in seen:
                raise DuplicateEntryError(f"{root}:{lineno}: duplicate path {rel}")
            seen.add(rel)
            entries.append(ManifestEntry(rel, canonical_subclass(sub), str(PurePosixPath(rel).with_suffix(""))))
        return DatasetManifest(entries, base)
    if not root.is_dir():
        raise DataError(f"input directory not found: {root}")
    for sub_dir in sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")):
        sub = canonical_subclass(sub_dir.name)
        for f in sorted(sub_dir.rglob("*")):
            if f.is_file() and f.suffix.lower() in extensions:
                rel = f.relative_to(root).as_posix()
                entries.append(ManifestEntry(rel, sub, str(PurePosixPath(rel).with_suffix(""))))
    stray = [p.name for p in root.iterdir() if p.is_file() and p.suffix.lower() in extensions]
    if stray:
        raise TaxonomyError(f"audio files outside any subclass directory: {', '.join(sorted(stray))}")
    return DatasetManifest(entries, root)


@dataclass
class BalanceReport:
    counts: dict
    balanced: bool
    empty: bool
    deficient: list

    def __str__(self):
        if self.empty:
            return "empty manifest (vacuously balanced)"
        parts = ", ".join(f"{k}={v}" for k, v in self.counts.items())
        return parts + ("; balanced" if self.balanced else f"; deficient: {', '.join(self.deficient)}")


def check_balance(manifest: DatasetManifest) -> BalanceReport:
    c = Counter(e.subclass for e in manifest)
    counts = {s: c.get(s, 0) for s in SUBCLASSES}
    if not manifest.entries:
        return BalanceReport(counts, True, True, [])
    top = max(counts.values())
    deficient = [s for s, n in counts.items() if n < top]
    return BalanceReport(counts, not deficient, False, deficient)


def _rng_for(seed: int, tag: str) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF] + list(tag.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(words))


def _largest_remainder(quotas: dict, total: int) -> dict:
    alloc = {k: int(np.floor(q)) for k, q in quotas.items()}
    left = total - sum(alloc.values())
    order = sorted(quotas, key=lambda k: (-(quotas[k] - alloc[k]), k))
    for k in order[:max(left, 0)]:
        alloc[k] += 1
    return alloc


def split_train_test(manifest: DatasetManifest, test_fraction: float = 0.2, seed: int = 0) -> DatasetManifest:
    """Assign train/test by whole parent recordings, stratified by subclass.

    The number of test groups per subclass comes from a largest-remainder
    allocation of ``test_fraction`` times the group counts, so the grand
    total is the rounded overall quota.
    """
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    assigned = [e.entry_id for e in manifest if e.split != "unassigned"]
    if assigned:
        raise ConfigError(f"{len(assigned)} entries already carry a split, e.g. {assigned[0]}")
    groups = defaultdict(set)
    for e in manifest:
        groups[e.subclass].add(e.parent_id)
    quotas = {s: test_fraction * len(g) for s, g in groups.items()}
    total = int(Decimal(repr(test_fraction * sum(len(g) for g in groups.values()))).quantize(0, ROUND_HALF_UP))
    n_test = _largest_remainder(quotas, total)
    test_parents = set()
    for sub in sorted(groups):
        parents = sorted(groups[sub])
        order = _rng_for(seed, sub).permutation(len(parents))
        test_parents.update(parents[i] for i in order[:n_test[sub]])
    return manifest.with_entries(
        replace(e, split="test" if e.parent_id in test_parents else "train") for e in manifest
    )


@dataclass
class AccountingReport:
    rows: list  # (label, count, hours)
    per_subclass: dict
    per_scene: dict
    per_split: dict

    def as_dict(self):
        return {label: (count, hours) for label, count, hours in self.rows}

    def to_markdown(self) -> str:
        out = ["Type of Data | No. of Data Points | Hours of Audio", "--- | --- | ---"]
        for label, count, hours in self.rows:
            c = "-" if count is None else f"{count:,}"
            h = "-" if hours is None else f"{hours:g}"
            out.append(f"{label} | {c} | {h}")
        return "\n".join(out) + "\n"


def _common(values):
    values = list(values)
    return values[0] if values and all(v == values[0] for v in values) else None


def data_accounting(manifest: DatasetManifest, clip_seconds: float = 5.0) -> AccountingReport:
    """Recompute the data-organisation table from entry-level facts."""
    def hours(n):
        return None if n is None else round(n * clip_seconds / 3600.0, 9)

    originals = [e for e in manifest if not e.augmented]
    segs_per_parent = Counter(e.parent_id for e in originals)
    parent_sub = {e.parent_id: e.subclass for e in originals}
    parent_seconds = {p: n * clip_seconds for p, n in segs_per_parent.items()}
    src_len = _common(parent_seconds.values())
    parents_per_sub = Counter(parent_sub.values())

    scene_orig = Counter(e.scene for e in originals)
    scene_all = Counter(e.scene for e in manifest)
    split_scene = Counter((e.split, e.scene) for e in manifest)

    src_label = f"{src_len:g}-sec" if src_len is not None else "source"
    per_sub_value = _common(parents_per_sub[s] for s in SUBCLASSES if parents_per_sub[s])
    rows = [
        (f"Files in Dataset ({src_label} clips)", len(segs_per_parent),
         round(sum(parent_seconds.values()) / 3600.0, 9)),
        ("Files per subclass", per_sub_value,
         None if per_sub_value is None or src_len is None else round(per_sub_value * src_len / 3600.0, 9)),
    ]
    seg = f"{clip_seconds:g}-sec"
    for scene in SCENES:
        rows.append((f"{scene} Scenes ({seg} clips)", scene_orig[scene], hours(scene_orig[scene])))
    for scene in SCENES:
        rows.append((f"{scene} Scenes with Augmentation", scene_all[scene], hours(scene_all[scene])))
    for split, label in (("test", "Test Data per Class"), ("train", "Train Data per Class")):
        v = _common(split_scene[(split, s)] for s in SCENES)
        rows.append((label, v, hours(v)))
    rows.append(("Total Data (with 2 classes)", len(manifest), hours(len(manifest))))
    return AccountingReport(
        rows,
        per_subclass={s: parents_per_sub[s] for s in SUBCLASSES},
        per_scene=dict(scene_all),
        per_split={k: v for k, v in sorted(Counter(e.split for e in manifest).items())},
    )


def leakage(manifest: DatasetManifest) -> set:
    """Parent ids present in both splits (should be empty)."""
    train = {e.parent_id for e in manifest if e.split == "train"}
    test = {e.parent_id for e in manifest if e.split == "test"}
    return train & test
