"""Segmentation metrics against ground-truth label volumes."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch


@dataclass(frozen=True)
class LabelVolume:
    dims: tuple[int, int, int]
    labels: np.ndarray  # integer grid, 0 = background
    class_names: dict[int, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    iou: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    per_class: dict[int, ClassMetrics]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    mean_iou: float
    annotations_per_class: float | None = None


def _safe_div(num: float, den: float) -> float:
    # zero-denominator convention: metric = 0
    return num / den if den > 0 else 0.0


def evaluate(pred: np.ndarray, gt: LabelVolume,
             include_background_in_means: bool = False) -> MetricsReport:
    """Per-class precision/recall/F1/IoU plus macro means and accuracy.

    Macro means cover nonzero classes unless
    ``include_background_in_means`` is set; accuracy always counts every
    voxel, background included.
    """
    if tuple(pred.shape) != tuple(gt.dims):
        raise DimMismatch(f"pred {pred.shape} vs gt {gt.dims}")
    labels = gt.labels
    pred = np.asarray(pred)

    class_ids = sorted(set(np.unique(labels).tolist())
                       | set(np.unique(pred).tolist()))
    per_class: dict[int, ClassMetrics] = {}
    for c in class_ids:
        if c == 0:
            continue
        p = pred == c
        g = labels == c
        tp = int(np.count_nonzero(p & g))
        fp = int(np.count_nonzero(p & ~g))
        fn = int(np.count_nonzero(~p & g))
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        f1 = _safe_div(2 * precision * recall, precision + recall)
        iou = _safe_div(tp, tp + fp + fn)
        per_class[c] = ClassMetrics(precision, recall, f1, iou,
                                    support=int(g.sum()))

    mean_ids = list(per_class)
    if include_background_in_means and 0 in class_ids:
        p = pred == 0
        g = labels == 0
        tp = int(np.count_nonzero(p & g))
        fp = int(np.count_nonzero(p & ~g))
        fn = int(np.count_nonzero(~p & g))
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        per_class[0] = ClassMetrics(
            precision, recall,
            _safe_div(2 * precision * recall, precision + recall),
            _safe_div(tp, tp + fp + fn), support=int(g.sum()))
        mean_ids = sorted(per_class)

    accuracy = float(np.count_nonzero(pred == labels)) / labels.size

    def macro(attr):
        if not mean_ids:
            return 0.0
        return float(np.mean([getattr(per_class[c], attr) for c in mean_ids]))

    return MetricsReport(
        per_class=per_class,
        accuracy=accuracy,
        macro_precision=macro("precision"),
        macro_recall=macro("recall"),
        macro_f1=macro("f1"),
        mean_iou=macro("iou"),
    )


def report_to_table(report: MetricsReport, format: str = "json",
                    class_names: dict[int, str] | None = None) -> str:
    """Render a report as json, csv or markdown text."""
    names = class_names or {}
    rows = [
        {
            "class": c,
            "name": names.get(c, str(c)),
            "precision": m.precision,
            "recall": m.recall,
            "f1": m.f1,
            "iou": m.iou,
            "support": m.support,
        }
        for c, m in sorted(report.per_class.items())
    ]
    means = {
        "accuracy": report.accuracy,
        "macro_precision": report.macro_precision,
        "macro_recall": report.macro_recall,
        "macro_f1": report.macro_f1,
        "mean_iou": report.mean_iou,
    }
    if format == "json":
        return json.dumps({"per_class": rows, "means": means}, indent=2)
    if format == "csv":
        buf = io.StringIO()
        cols = ["class", "name", "precision", "recall", "f1", "iou",
                "support"]
        buf.write(",".join(cols) + "\n")
        for r in rows:
            buf.write(",".join(str(r[c]) for c in cols) + "\n")
        buf.write("\nmetric,value\n")
        for k, v in means.items():
            buf.write(f"{k},{v}\n")
        return buf.getvalue()
    if format == "markdown":
        lines = [
            "| class | name | precision | recall | f1 | iou | support |",
            "|---|---|---|---|---|---|---|",
        ]
        for r in rows:
            lines.append(
                "| {class} | {name} | {precision:.4f} | {recall:.4f} "
                "| {f1:.4f} | {iou:.4f} | {support} |".format(**r)
            )
        lines.append("")
        lines.append(
            "accuracy {accuracy:.4f}, macro P {macro_precision:.4f}, "
            "macro R {macro_recall:.4f}, macro F1 {macro_f1:.4f}, "
            "mIoU {mean_iou:.4f}".format(**means)
        )
        return "\n".join(lines)
    raise ValueError(f"unknown format {format!r}")
