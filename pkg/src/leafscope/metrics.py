"""Confusion matrices and per-class precision, recall, F1 and accuracy.

Internal orientation is ``counts[true][predicted]``. The published figures
use the opposite orientation and are imported through
:func:`from_published_figure`.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import LabelMap, encode_labels
from .errors import InputError

INTERNAL_CORNER = "true\\predicted"
PUBLISHED_CORNER = "predicted\\true"


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self):
        arr = np.array(self.counts, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise InputError(f"confusion matrix must be square, got shape {arr.shape}")
        if np.any(arr < 0):
            raise InputError("confusion matrix entries must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def transpose(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts.T)

    def permute(self, order: Sequence[int]) -> "ConfusionMatrix":
        idx = np.asarray(order)
        return ConfusionMatrix(self.counts[np.ix_(idx, idx)])

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __hash__(self):
        return hash(self.counts.tobytes())


@dataclass(frozen=True)
class ClassCounts:
    true_positive: int
    false_positive: int
    false_negative: int
    true_negative: int

    @property
    def total(self) -> int:
        return self.true_positive + self.false_positive + self.false_negative + self.true_negative


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    degenerate: bool = False  # some ratio had a zero denominator and was set to 0


@dataclass(frozen=True)
class ClassReport:
    class_name: str
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool = False


@dataclass(frozen=True)
class EvaluationReport:
    per_class: tuple[ClassReport, ...]
    overall_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    matrix: ConfusionMatrix

    @property
    def class_names(self) -> list[str]:
        return [c.class_name for c in self.per_class]

    def to_dict(self) -> dict:
        return {
            "per_class": [asdict(c) for c in self.per_class],
            "overall_accuracy": self.overall_accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "matrix": {"orientation": "rows=true,cols=predicted", "counts": self.matrix.counts.tolist()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvaluationReport":
        return cls(
            tuple(ClassReport(**c) for c in doc["per_class"]),
            doc["overall_accuracy"], doc["macro_precision"], doc["macro_recall"], doc["macro_f1"],
            ConfusionMatrix(doc["matrix"]["counts"]),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "EvaluationReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def confusion_matrix(true_labels, predicted_labels, num_classes: int) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(predicted_labels, dtype=np.int64).ravel()
    if len(t) != len(p):
        raise InputError(f"{len(t)} true labels but {len(p)} predictions")
    if num_classes < 1:
        raise InputError("num_classes must be >= 1")
    if len(t) and (t.min() < 0 or p.min() < 0 or t.max() >= num_classes or p.max() >= num_classes):
        raise InputError(f"class ids must lie in [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def from_published_figure(rows_predicted) -> ConfusionMatrix:
    """Import a matrix printed with rows = predicted, columns = true."""
    return ConfusionMatrix(np.asarray(rows_predicted).T)


def class_counts(matrix: ConfusionMatrix, class_id: int) -> ClassCounts:
    if not 0 <= class_id < matrix.num_classes:
        raise InputError(f"class id {class_id} outside [0, {matrix.num_classes})")
    c = matrix.counts
    tp = int(c[class_id, class_id])
    fn = int(c[class_id].sum()) - tp
    fp = int(c[:, class_id].sum()) - tp
    return ClassCounts(tp, fp, fn, matrix.total - tp - fp - fn)


def _ratio(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


def class_metrics(counts: ClassCounts) -> ClassMetrics:
    tp, fp, fn, tn = counts.true_positive, counts.false_positive, counts.false_negative, counts.true_negative
    if counts.total == 0:
        raise InputError("all counts are zero")
    precision, d1 = _ratio(tp, tp + fp)
    recall, d2 = _ratio(tp, tp + fn)
    f1, d3 = _ratio(2 * precision * recall, precision + recall)
    return ClassMetrics(precision, recall, f1, (tp + tn) / counts.total, d1 or d2 or d3)


def overall_accuracy(matrix: ConfusionMatrix) -> float:
    if matrix.total == 0:
        raise InputError("confusion matrix is empty")
    return matrix.trace / matrix.total


def build_report(matrix: ConfusionMatrix, label_map: LabelMap | Sequence[str]) -> EvaluationReport:
    if not isinstance(label_map, LabelMap):
        label_map = encode_labels(label_map)
    if len(label_map) != matrix.num_classes:
        raise InputError(f"{len(label_map)} class names for a {matrix.num_classes}-class matrix")
    rows = []
    for cid, name in enumerate(label_map.names):
        m = class_metrics(class_counts(matrix, cid))
        support = int(matrix.counts[cid].sum())
        rows.append(ClassReport(name, m.precision, m.recall, m.f1, support, m.degenerate))
    return EvaluationReport(
        tuple(rows),
        overall_accuracy(matrix),
        float(np.mean([r.precision for r in rows])),
        float(np.mean([r.recall for r in rows])),
        float(np.mean([r.f1 for r in rows])),
        matrix,
    )


def round_half_up(value: float, places: int = 2) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_UP))


# --- CSV -------------------------------------------------------------------

def matrix_to_csv(matrix: ConfusionMatrix, class_names: Sequence[str], orientation: str = "internal") -> str:
    if orientation not in ("internal", "paper"):
        raise InputError(f"orientation must be 'internal' or 'paper', got {orientation!r}")
    grid = matrix.counts if orientation == "internal" else matrix.counts.T
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([INTERNAL_CORNER if orientation == "internal" else PUBLISHED_CORNER, *class_names])
    for name, row in zip(class_names, grid):
        w.writerow([name, *(int(v) for v in row)])
    return buf.getvalue()


def matrix_from_csv(text: str, transpose_paper: bool | None = None) -> tuple[ConfusionMatrix, list[str]]:
    """Parse a matrix CSV back into internal orientation.

    The corner cell records the orientation; ``transpose_paper`` overrides it
    for bare figure transcriptions whose corner cell is blank.
    """
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if len(rows) < 2:
        raise InputError("matrix CSV needs a header row and at least one data row")
    corner, names = rows[0][0].strip(), [n.strip() for n in rows[0][1:]]
    if [r[0].strip() for r in rows[1:]] != names:
        raise InputError("row labels must match the column labels in the same order")
    try:
        grid = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    except ValueError as exc:
        raise InputError(f"non-integer cell in matrix CSV: {exc}") from None
    if transpose_paper is None:
        transpose_paper = corner == PUBLISHED_CORNER
    return ConfusionMatrix(grid.T if transpose_paper else grid), names


def write_matrix_csv(path: str | Path, matrix: ConfusionMatrix, class_names: Sequence[str],
                     orientation: str = "internal") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(matrix_to_csv(matrix, class_names, orientation))
    return path


def read_matrix_csv(path: str | Path, transpose_paper: bool | None = None) -> tuple[ConfusionMatrix, list[str]]:
    return matrix_from_csv(Path(path).read_text(), transpose_paper)
