"""Confusion matrices, accuracy, Cohen's kappa, macro F1 and cross-validated reports."""

import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from rich.table import Table
from sklearn.metrics import confusion_matrix

from .edf import CLASS_NAMES
from .epoching import NUM_CLASSES


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"Confusion matrix must be square, got shape {counts.shape}")
        if (counts < 0).any():
            raise ValueError("Confusion matrix entries must be nonnegative")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.num_classes != other.num_classes:
            raise ValueError(
                f"Cannot add {self.num_classes}- and {other.num_classes}-class matrices"
            )
        return ConfusionMatrix(self.counts + other.counts)


def confusion_from_labels(
    y_true: Sequence[int] | np.ndarray,
    y_pred: Sequence[int] | np.ndarray,
    num_classes: int = NUM_CLASSES,
) -> ConfusionMatrix:
    return ConfusionMatrix(
        confusion_matrix(y_true, y_pred, labels=list(range(num_classes)))
    )


def _nonempty(cm: ConfusionMatrix) -> np.ndarray:
    if cm.total == 0:
        raise ValueError("Confusion matrix is empty (no scored samples)")
    return cm.counts.astype(np.float64)


def accuracy(cm: ConfusionMatrix) -> float:
    counts = _nonempty(cm)
    return float(np.trace(counts) / counts.sum())


def cohen_kappa(cm: ConfusionMatrix) -> float:
    """(p_o - p_e) / (1 - p_e); 0 when p_e == 1."""
    counts = _nonempty(cm)
    total = counts.sum()
    p_o = np.trace(counts) / total
    p_e = float(counts.sum(axis=1) @ counts.sum(axis=0)) / total**2
    if p_e == 1.0:
        return 0.0
    return float((p_o - p_e) / (1 - p_e))


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    """F1 per class, with precision, recall and F1 each 0 when their denominator is 0."""
    counts = _nonempty(cm)
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    return np.divide(
        2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0
    )


def absent_classes(cm: ConfusionMatrix) -> list[int]:
    """Classes neither present in the labels nor ever predicted."""
    counts = cm.counts
    return [
        c
        for c in range(cm.num_classes)
        if counts[c, :].sum() == 0 and counts[:, c].sum() == 0
    ]


def macro_f1(cm: ConfusionMatrix) -> float:
    return float(per_class_f1(cm).mean())


@dataclass(frozen=True)
class FoldReport:
    fold: int
    accuracy: float
    kappa: float
    macro_f1: float
    confusion: ConfusionMatrix
    absent_classes: tuple[int, ...] = ()

    @classmethod
    def from_confusion(cls, fold: int, cm: ConfusionMatrix) -> "FoldReport":
        absent = tuple(absent_classes(cm))
        if absent:
            warnings.warn(
                f"Fold {fold}: classes {list(absent)} absent; their F1 counts as 0 in MF1",
                UserWarning,
                stacklevel=2,
            )
        return cls(
            fold=fold,
            accuracy=accuracy(cm),
            kappa=cohen_kappa(cm),
            macro_f1=macro_f1(cm),
            confusion=cm,
            absent_classes=absent,
        )

    @classmethod
    def from_labels(
        cls,
        fold: int,
        y_true: Sequence[int] | np.ndarray,
        y_pred: Sequence[int] | np.ndarray,
    ) -> "FoldReport":
        return cls.from_confusion(fold, confusion_from_labels(y_true, y_pred))


@dataclass(frozen=True)
class EvalReport:
    """Per-fold metrics, their means, the summed confusion matrix and provenance."""

    folds: tuple[FoldReport, ...]
    accuracy: float
    kappa: float
    macro_f1: float
    confusion: ConfusionMatrix
    provenance: dict[str, Any] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        """One row per fold plus a 'mean' row."""
        rows = [
            {
                "fold": str(f.fold),
                "accuracy": f.accuracy,
                "kappa": f.kappa,
                "macro_f1": f.macro_f1,
                "samples": f.confusion.total,
                "absent_classes": " ".join(str(c) for c in f.absent_classes),
            }
            for f in self.folds
        ]
        rows.append(
            {
                "fold": "mean",
                "accuracy": self.accuracy,
                "kappa": self.kappa,
                "macro_f1": self.macro_f1,
                "samples": self.confusion.total,
                "absent_classes": "",
            }
        )
        return pd.DataFrame(rows)

    def to_text(self) -> str:
        lines = [f"{key}={self.provenance[key]}" for key in sorted(self.provenance)]
        lines.append("")
        lines.append(self.to_frame().to_string(index=False, float_format="%.4f"))
        lines.append("")
        names = CLASS_NAMES if self.confusion.num_classes == len(CLASS_NAMES) else None
        lines.append("confusion (rows true, cols predicted)")
        lines.append(
            pd.DataFrame(self.confusion.counts, index=names, columns=names).to_string()
        )
        return "\n".join(lines) + "\n"


def aggregate(
    fold_reports: Sequence[FoldReport], provenance: dict[str, Any] | None = None
) -> EvalReport:
    """Arithmetic means of the fold metrics and the sum of their confusion matrices."""
    if not fold_reports:
        raise ValueError("Cannot aggregate zero folds")
    sizes = {f.confusion.num_classes for f in fold_reports}
    if len(sizes) != 1:
        raise ValueError(f"Folds disagree on the class set: sizes {sorted(sizes)}")
    overall = fold_reports[0].confusion
    for f in fold_reports[1:]:
        overall = overall + f.confusion
    return EvalReport(
        folds=tuple(fold_reports),
        accuracy=float(np.mean([f.accuracy for f in fold_reports])),
        kappa=float(np.mean([f.kappa for f in fold_reports])),
        macro_f1=float(np.mean([f.macro_f1 for f in fold_reports])),
        confusion=overall,
        provenance=dict(provenance or {}),
    )


def write_report(report: EvalReport, path: str | Path) -> tuple[Path, Path]:
    """
    Write `<path>.csv` (metrics with provenance columns) and `<path>.txt`.

    Returns:
        The CSV and text paths.
    """
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = base.with_suffix(".csv")
    txt_path = base.with_suffix(".txt")
    frame = report.to_frame()
    for key in sorted(report.provenance):
        frame[key] = report.provenance[key]
    frame.to_csv(csv_path, index=False, float_format="%.10g")
    txt_path.write_text(report.to_text(), encoding="utf-8")
    return csv_path, txt_path


def render_table(report: EvalReport, title: str = "Evaluation") -> Table:
    table = Table(title=title)
    for column in ("fold", "Acc", "kappa", "MF1", "samples"):
        table.add_column(column, justify="right")
    for f in report.folds:
        table.add_row(
            str(f.fold),
            f"{f.accuracy:.4f}",
            f"{f.kappa:.4f}",
            f"{f.macro_f1:.4f}",
            str(f.confusion.total),
        )
    table.add_row(
        "[bold]mean[/bold]",
        f"[bold]{report.accuracy:.4f}[/bold]",
        f"[bold]{report.kappa:.4f}[/bold]",
        f"[bold]{report.macro_f1:.4f}[/bold]",
        str(report.confusion.total),
    )
    return table
