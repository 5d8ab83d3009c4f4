"""Confusion matrices, accuracy, overfitting reports and results tables."""

import csv
import io
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import ConfigError, ParseError

OVERFIT_THRESHOLD = 0.10


class UndefinedClassError(ConfigError):
    pass


@dataclass
class ConfusionMatrix:
    """``counts[i, j]`` = number of clips of true class i predicted as j."""

    counts: np.ndarray
    class_names: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ConfigError(f"confusion counts must be square, got {c.shape}")
        if (c < 0).any() or not np.array_equal(c, np.round(c)):
            raise ConfigError("confusion counts must be non-negative integers")
        self.counts = c.astype(np.int64)
        self.class_names = tuple(self.class_names)

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def name(self, i):
        return self.class_names[i] if i < len(self.class_names) else f"class {i}"

    def to_dict(self):
        return {"class_names": list(self.class_names), "counts": self.counts.tolist()}


def predicted_labels(probs) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    return np.argmax(np.asarray(probs), axis=1)


def confusion_from_labels(y_true, y_pred, n_classes: int, class_names=()) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ConfigError(f"{len(y_true)} labels but {len(y_pred)} predictions")
    if len(y_true) and (min(y_true.min(), y_pred.min()) < 0 or max(y_true.max(), y_pred.max()) >= n_classes):
        raise ConfigError(f"labels must lie in [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts, class_names)


def confusion_from_probs(probs, y_true, class_names=()) -> ConfusionMatrix:
    probs = np.asarray(probs)
    if probs.ndim != 2:
        raise ConfigError(f"probabilities must be (N, classes), got {probs.shape}")
    return confusion_from_labels(y_true, predicted_labels(probs), probs.shape[1], class_names)


def accuracy_from_confusion(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ConfigError("accuracy of an empty evaluation set is undefined")
    return float(np.trace(cm.counts)) / cm.total


def evaluate(tm, test_set, class_names=()):
    """Predict every item of a ``FeatureSet``; returns ``(ConfusionMatrix, accuracy)``."""
    from .models import predict

    if len(test_set) == 0:
        raise ConfigError("cannot evaluate on an empty test set")
    probs = predict(tm, test_set.x)
    cm = confusion_from_probs(probs, test_set.y, class_names)
    return cm, accuracy_from_confusion(cm)


def per_class_accuracy(cm: ConfusionMatrix) -> np.ndarray:
    """Recall per true class."""
    rows = cm.counts.sum(axis=1)
    for i, r in enumerate(rows):
        if r == 0:
            raise UndefinedClassError(f"{cm.name(i)} has no test items; its accuracy is undefined")
    return np.diag(cm.counts) / rows


@dataclass
class OverfitReport:
    gaps: list  # train - eval accuracy per epoch
    max_gap: float
    first_epoch: int  # 1-based first epoch over the threshold, or None
    flagged: bool
    threshold: float


def overfit_gap(history, threshold: float = OVERFIT_THRESHOLD) -> OverfitReport:
    """Train-minus-eval accuracy gap per epoch; flagged iff some gap exceeds ``threshold``."""
    gaps = [float(h["train_acc"]) - float(h["eval_acc"]) for h in history]
    over = [i for i, g in enumerate(gaps, 1) if g > threshold]
    return OverfitReport(gaps, max(gaps) if gaps else 0.0, over[0] if over else None, bool(over), threshold)


def format_percent(value: float, digits: int = 1) -> str:
    """``0.7625 -> '76.3%'``; halves round up on the shortest decimal repr."""
    d = Decimal(repr(float(value))) * 100
    return f"{d.quantize(Decimal(1).scaleb(-digits), rounding=ROUND_HALF_UP)}%"


@dataclass
class ResultRow:
    architecture: str
    representation: str
    test_accuracy: float
    train_accuracy: float
    overfit: bool = None  # None -> derived from the gap and threshold
    param_count: int = 0
    threshold: float = OVERFIT_THRESHOLD

    def __post_init__(self):
        for name in ("test_accuracy", "train_accuracy"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
            setattr(self, name, v)
        gap_flag = self.train_accuracy - self.test_accuracy > self.threshold
        if self.overfit is None:
            self.overfit = gap_flag
        elif bool(self.overfit) != gap_flag:
            raise ConfigError(f"overfit flag {self.overfit} disagrees with gap "
                              f"{self.train_accuracy - self.test_accuracy:.3f} at threshold {self.threshold}")


@dataclass
class ResultsTable:
    rows: list = field(default_factory=list)

    def add(self, row: ResultRow):
        self.rows.append(row)
        return row

    @property
    def representations(self):
        return list(dict.fromkeys(r.representation for r in self.rows))


_MD_HEAD = "| CNN Architecture | Test Accuracy | Training Accuracy |\n|---|---|---|\n"


def _md_line(r: ResultRow):
    train = format_percent(r.train_accuracy) + (" (overfit)" if r.overfit else "")
    return f"| {r.architecture} | {format_percent(r.test_accuracy)} | {train} |\n"


def render_results_table(rows) -> str:
    """Markdown: one three-column table per representation, in first-seen order."""
    rows = list(rows.rows if isinstance(rows, ResultsTable) else rows)
    if not rows:
        return _MD_HEAD
    parts = []
    for rep in dict.fromkeys(r.representation for r in rows):
        parts.append(f"### {rep}\n\n" + _MD_HEAD + "".join(_md_line(r) for r in rows if r.representation == rep))
    return "\n".join(parts)


CSV_FIELDS = ["architecture", "representation", "test_accuracy", "train_accuracy", "overfit", "param_count"]


def render_results_csv(rows) -> str:
    rows = list(rows.rows if isinstance(rows, ResultsTable) else rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([r.architecture, r.representation, repr(r.test_accuracy), repr(r.train_accuracy),
                    int(r.overfit), r.param_count])
    return buf.getvalue()


def parse_results_csv(text: str, threshold: float = OVERFIT_THRESHOLD) -> ResultsTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != CSV_FIELDS:
        raise ParseError(f"line 1: unexpected results header {header}")
    table = ResultsTable()
    for lineno, rec in enumerate(reader, 2):
        if not rec:
            continue
        if len(rec) != len(CSV_FIELDS):
            raise ParseError(f"line {lineno}: expected {len(CSV_FIELDS)} fields, found {len(rec)}")
        try:
            table.add(ResultRow(rec[0], rec[1], float(rec[2]), float(rec[3]), bool(int(rec[4])), int(rec[5]),
                                threshold))
        except (ValueError, ConfigError) as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    return table


def results_record(tm, cm: ConfusionMatrix, train_accuracy: float, seed: int) -> dict:
    """JSON-ready summary of one evaluated model."""
    cfg = tm.config
    rep = overfit_gap(tm.history)
    test_acc = accuracy_from_confusion(cm)
    return {
        "architecture": cfg.architecture if cfg else "custom",
        "representation": cfg.representation if cfg else "",
        "seed": seed,
        "accuracies": {"test": test_acc, "train": train_accuracy},
        "overfit": train_accuracy - test_acc > OVERFIT_THRESHOLD,
        "max_epoch_gap": rep.max_gap,
        "param_count": tm.n_params,
        "confusion": cm.to_dict(),
        "fingerprint": tm.fingerprint,
    }


def row_from_record(rec: dict, name: str = None) -> ResultRow:
    return ResultRow(name or rec["architecture"], rec["representation"], rec["accuracies"]["test"],
                     rec["accuracies"]["train"], None, rec["param_count"])


def dump_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, indent=2) + "\n"
