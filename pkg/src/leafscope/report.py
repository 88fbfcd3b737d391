"""Result artifacts: history curves, confusion heatmaps and model comparisons.

Machine-readable outputs (CSV, JSON) keep full precision; text tables use two
decimals. Charts are written as PNG and SVG with fixed metadata so repeated
rendering of the same inputs is byte-identical.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import InputError  # noqa: E402
from .metrics import EvaluationReport, round_half_up, write_matrix_csv  # noqa: E402
from .model import BACKBONES  # noqa: E402
from .trainer import EpochRecord, TrainingHistory  # noqa: E402

STYLE = {
    "svg.hashsalt": "leafscope",
    "svg.fonttype": "path",
    "font.size": 9,
    "figure.dpi": 100,
}
PNG_META = {"Software": None}
SVG_META = {"Date": None, "Creator": None}


@dataclass(frozen=True)
class RunBundle:
    model_name: str
    history: TrainingHistory | None
    report: EvaluationReport
    config_hash: str = ""

    def __post_init__(self):
        if self.model_name not in BACKBONES:
            raise InputError(f"{self.model_name!r} is not a registered backbone")


@dataclass(frozen=True)
class ComparisonRow:
    model_name: str
    overall_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]

    @property
    def model_names(self) -> list[str]:
        return [r.model_name for r in self.rows]


def _save(fig, stem: Path) -> tuple[Path, Path]:
    png, svg = stem.with_suffix(".png"), stem.with_suffix(".svg")
    fig.savefig(png, metadata=PNG_META)
    fig.savefig(svg, metadata=SVG_META)
    plt.close(fig)
    return png, svg


def _ensure_dir(destination: str | Path) -> Path:
    d = Path(destination)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write reports to {d}: {exc}") from exc
    return d


# --- history ---------------------------------------------------------------

HISTORY_FIELDS = [f.name for f in fields(EpochRecord)]


def history_to_csv(history: TrainingHistory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_FIELDS)
    for r in history.records:
        w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
    return buf.getvalue()


def history_from_csv(text: str) -> list[EpochRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != HISTORY_FIELDS:
        raise InputError(f"unexpected history columns {reader.fieldnames}")
    out = []
    for row in reader:
        out.append(EpochRecord(
            epoch=int(row["epoch"]), phase=row["phase"],
            **{k: float(row[k]) for k in HISTORY_FIELDS if k not in ("epoch", "phase")},
        ))
    return out


def render_history(history: TrainingHistory, destination: str | Path) -> dict:
    if not history.records:
        raise InputError("cannot render an empty history")
    d = _ensure_dir(destination)
    csv_path = d / "history.csv"
    csv_path.write_text(history_to_csv(history))

    epochs = [r.epoch for r in history.records]
    losses = [v for r in history.records for v in (r.train_loss, r.val_loss)]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, [r.train_loss for r in history.records], marker=".", label="train loss")
        ax.plot(epochs, [r.val_loss for r in history.records], marker=".", label="validation loss")
        ax.axvline(history.best_epoch, color="grey", linestyle=":", linewidth=1, label="best epoch")
        ax.set_ylim(0.0, max(max(losses), 1e-3) * 1.05)
        if len(epochs) == 1:
            ax.set_xlim(epochs[0] - 1, epochs[0] + 1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend()
        ylim = ax.get_ylim()
        png, svg = _save(fig, d / "history")

        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, [r.train_accuracy for r in history.records], marker=".", label="train accuracy")
        ax.plot(epochs, [r.val_accuracy for r in history.records], marker=".", label="validation accuracy")
        ax.set_ylim(0.0, 1.0)
        if len(epochs) == 1:
            ax.set_xlim(epochs[0] - 1, epochs[0] + 1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("accuracy")
        ax.legend()
        acc_png, acc_svg = _save(fig, d / "history_accuracy")
    return {"csv": csv_path, "png": png, "svg": svg, "accuracy_png": acc_png,
            "accuracy_svg": acc_svg, "loss_ylim": ylim}


# --- confusion -------------------------------------------------------------

def confusion_grid(report: EvaluationReport, orientation: str = "internal") -> np.ndarray:
    if orientation == "internal":
        return report.matrix.counts.copy()
    if orientation == "paper":
        return report.matrix.counts.T.copy()
    raise InputError(f"orientation must be 'internal' or 'paper', got {orientation!r}")


def format_report_table(report: EvaluationReport, model_name: str = "") -> str:
    lines = [f"{'Model':<14}{'Class':<8}{'Precision':>10}{'Recall':>8}{'F1-score':>10}{'Support':>9}"]
    for i, c in enumerate(report.per_class):
        label = model_name if i == 0 else ""
        lines.append(f"{label:<14}{c.class_name:<8}{round_half_up(c.precision):>10.2f}"
                     f"{round_half_up(c.recall):>8.2f}{round_half_up(c.f1):>10.2f}{c.support:>9d}")
    lines.append(f"{'':<14}{'macro':<8}{round_half_up(report.macro_precision):>10.2f}"
                 f"{round_half_up(report.macro_recall):>8.2f}{round_half_up(report.macro_f1):>10.2f}"
                 f"{report.matrix.total:>9d}")
    lines.append(f"overall accuracy: {round_half_up(100 * report.overall_accuracy):.2f}%")
    return "\n".join(lines) + "\n"


def render_confusion(report: EvaluationReport, destination: str | Path,
                     orientation: str = "internal", title: str = "") -> dict:
    grid = confusion_grid(report, orientation)
    d = _ensure_dir(destination)
    names = report.class_names
    csv_path = write_matrix_csv(d / "confusion.csv", report.matrix, names, orientation)
    row_label, col_label = ("true", "predicted") if orientation == "internal" else ("predicted", "true")
    n = len(names)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.0 + 0.75 * n, 0.8 + 0.7 * n))
        ax.imshow(grid, cmap="Blues")
        ax.set_xticks(range(n), names)
        ax.set_yticks(range(n), names)
        ax.set_xlabel(col_label)
        ax.set_ylabel(row_label)
        vmax = grid.max() if grid.size else 0
        for i in range(n):
            for j in range(n):
                ax.text(j, i, str(int(grid[i, j])), ha="center", va="center", fontsize=7,
                        color="white" if vmax and grid[i, j] > vmax / 2 else "black")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        png, svg = _save(fig, d / "confusion")
    return {"csv": csv_path, "png": png, "svg": svg, "grid": grid}


# --- comparison ------------------------------------------------------------

def comparison_to_csv(table: ComparisonTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f.name for f in fields(ComparisonRow)])
    for r in table.rows:
        w.writerow([r.model_name, *(repr(float(v)) for v in asdict(r).values() if not isinstance(v, str))])
    return buf.getvalue()


def comparison_from_csv(text: str) -> ComparisonTable:
    reader = csv.DictReader(io.StringIO(text))
    expected = [f.name for f in fields(ComparisonRow)]
    if reader.fieldnames != expected:
        raise InputError(f"unexpected comparison columns {reader.fieldnames}")
    return ComparisonTable(tuple(
        ComparisonRow(row["model_name"], *(float(row[k]) for k in expected[1:])) for row in reader
    ))


def compare_runs(bundles: Sequence[RunBundle], destination: str | Path) -> ComparisonTable:
    if not bundles:
        raise InputError("need at least one run to compare")
    names = [b.model_name for b in bundles]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise InputError(f"duplicate model names: {dupes}")
    rows = sorted(
        (ComparisonRow(b.model_name, b.report.overall_accuracy, b.report.macro_precision,
                       b.report.macro_recall, b.report.macro_f1) for b in bundles),
        key=lambda r: (-r.overall_accuracy, r.model_name),
    )
    table = ComparisonTable(tuple(rows))
    d = _ensure_dir(destination)
    (d / "comparison.csv").write_text(comparison_to_csv(table))
    text = [f"{'Model':<14}{'Accuracy':>10}{'Precision':>11}{'Recall':>8}{'F1':>7}"]
    text += [f"{r.model_name:<14}{round_half_up(100 * r.overall_accuracy):>9.2f}%"
             f"{round_half_up(r.macro_precision):>11.2f}{round_half_up(r.macro_recall):>8.2f}"
             f"{round_half_up(r.macro_f1):>7.2f}" for r in rows]
    (d / "comparison.txt").write_text("\n".join(text) + "\n")

    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.3 * len(rows)), 4))
        x = np.arange(len(rows))
        ax.plot(x, [r.overall_accuracy for r in rows], marker="o", label="accuracy")
        ax.plot(x, [r.macro_precision for r in rows], marker="s", label="macro precision")
        ax.set_xticks(x, [r.model_name for r in rows])
        if len(rows) == 1:
            ax.set_xlim(-1, 1)
        ax.set_ylabel("score")
        ax.legend()
        fig.tight_layout()
        _save(fig, d / "comparison")
    return table


# --- run directories -------------------------------------------------------

def load_bundle(run_dir: str | Path) -> RunBundle:
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "run.json").read_text())
    history_path = run_dir / "history.json"
    history = TrainingHistory.load(history_path) if history_path.exists() else None
    report = EvaluationReport.load(run_dir / "reports" / "report.json")
    return RunBundle(meta["model_name"], history, report, meta.get("config_hash", ""))
