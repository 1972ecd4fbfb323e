"""Confusion-matrix evaluation with macro precision/recall/F1 reporting.

Predictions are filtered by score, sorted by descending score, and matched
greedily (class-agnostic) to the unmatched ground-truth box of highest IoU.
Matched pairs feed the class-confusion counts; unmatched predictions are
false positives (background row), unmatched ground truth false negatives
(background column).  Macro F1 is the unweighted mean of per-class F1
scores, not the harmonic mean of macro precision/recall.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .detections import AnnotationSet, Detection
from .errors import CanvasMismatch
from .geometry import iou as box_iou


@dataclass(frozen=True)
class EvalConfig:
    iou_match_thresh: float = 0.5
    score_thresh: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.iou_match_thresh <= 1.0:
            raise ValueError("iou_match_thresh must be in (0, 1]")
        if not 0.0 <= self.score_thresh < 1.0:
            raise ValueError("score_thresh must be in [0, 1)")


@dataclass
class MatchResult:
    matched: List[Tuple[Detection, Detection, float]]  # (gt, pred, iou)
    false_positives: List[Detection]
    false_negatives: List[Detection]


def match_to_gt(pred: AnnotationSet, gt: AnnotationSet, cfg: EvalConfig) -> MatchResult:
    """Greedy score-ordered matching of predictions to ground truth."""
    if pred.dims != gt.dims:
        raise CanvasMismatch(f"canvas {pred.dims} vs {gt.dims}")
    survivors = [d for d in pred.detections if d.score >= cfg.score_thresh]
    order = sorted(range(len(survivors)), key=lambda i: (-survivors[i].score, i))

    gt_used = [False] * len(gt.detections)
    matched: List[Tuple[Detection, Detection, float]] = []
    fps: List[Detection] = []
    for i in order:
        d = survivors[i]
        best_j = -1
        best_iou = 0.0
        for j, g in enumerate(gt.detections):
            if gt_used[j]:
                continue
            overlap = box_iou(d.box, g.box)
            if overlap >= cfg.iou_match_thresh and overlap > best_iou:
                best_iou = overlap
                best_j = j
        if best_j >= 0:
            gt_used[best_j] = True
            matched.append((gt.detections[best_j], d, best_iou))
        else:
            fps.append(d)
    fns = [g for j, g in enumerate(gt.detections) if not gt_used[j]]
    return MatchResult(matched=matched, false_positives=fps, false_negatives=fns)


@dataclass
class ConfusionMatrix:
    """K true classes plus a background row (FPs) and column (FNs)."""

    classes: Tuple[str, ...]
    counts: np.ndarray = None

    def __post_init__(self):
        k = len(self.classes)
        if self.counts is None:
            self.counts = np.zeros((k + 1, k + 1), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (k + 1, k + 1):
                raise ValueError("counts shape does not match class list")

    @property
    def background(self) -> int:
        return len(self.classes)

    def index(self, name: str) -> int:
        return self.classes.index(name)

    def add(self, result: MatchResult) -> None:
        for g, d, _ in result.matched:
            self.counts[self.index(g.cls.name), self.index(d.cls.name)] += 1
        for d in result.false_positives:
            self.counts[self.background, self.index(d.cls.name)] += 1
        for g in result.false_negatives:
            self.counts[self.index(g.cls.name), self.background] += 1

    def merge(self, other: "ConfusionMatrix") -> None:
        if self.classes != other.classes:
            raise ValueError("cannot merge matrices over different classes")
        self.counts += other.counts


def macro_f1(per_class_f1: Sequence[float]) -> float:
    """Averaged-F1 macro variant: unweighted mean of per-class F1 scores."""
    values = list(per_class_f1)
    return sum(values) / len(values) if values else 0.0


@dataclass
class MetricsReport:
    classes: Tuple[str, ...]
    per_class: Dict[str, Dict[str, float]]  # name -> tp/fp/fn/precision/recall/f1
    macro_precision: float
    macro_recall: float
    macro_f1: float
    detections: int
    false_negatives: int
    false_positives: int
    gt_total: int


def macro_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class and macro metrics; zero-denominator classes contribute 0."""
    k = len(cm.classes)
    counts = cm.counts
    per_class: Dict[str, Dict[str, float]] = {}
    precisions, recalls, f1s = [], [], []
    for i, name in enumerate(cm.classes):
        tp = int(counts[i, i])
        col = int(counts[:, i].sum())  # predictions of this class, incl. FP row
        row = int(counts[i, :].sum())  # GT of this class, incl. FN column
        p = tp / col if col > 0 else 0.0
        r = tp / row if row > 0 else 0.0
        f1 = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
        per_class[name] = {
            "tp": tp,
            "fp": col - tp,
            "fn": row - tp,
            "precision": p,
            "recall": r,
            "f1": f1,
        }
        precisions.append(p)
        recalls.append(r)
        f1s.append(f1)
    return MetricsReport(
        classes=cm.classes,
        per_class=per_class,
        macro_precision=sum(precisions) / k if k else 0.0,
        macro_recall=sum(recalls) / k if k else 0.0,
        macro_f1=macro_f1(f1s),
        detections=int(counts[:, :k].sum()),
        false_negatives=int(counts[:k, k].sum()),
        false_positives=int(counts[k, :k].sum()),
        gt_total=int(counts[:k, :].sum()),
    )


def evaluate_sets(
    preds: Sequence[AnnotationSet],
    gts: Sequence[AnnotationSet],
    classes: Tuple[str, ...],
    cfg: EvalConfig,
) -> Tuple[ConfusionMatrix, MetricsReport]:
    """Accumulate per-image matches into one matrix and compute metrics."""
    if len(preds) != len(gts):
        raise ValueError("prediction/ground-truth set counts differ")
    cm = ConfusionMatrix(classes=classes)
    for pred, gt in zip(preds, gts):
        if pred.image_id != gt.image_id:
            raise ValueError(f"image id mismatch: {pred.image_id} vs {gt.image_id}")
        cm.add(match_to_gt(pred, gt, cfg))
    return cm, macro_metrics(cm)


def _pct(numerator: int, denominator: int) -> str:
    if denominator <= 0:
        return "0%"
    return f"{100.0 * numerator / denominator:.0f}%"


def render_text(report: MetricsReport) -> str:
    """Human-readable summary shaped like the survey metric tables."""
    lines = [
        f"detections:       {report.detections}",
        f"false negatives:  {report.false_negatives} ({_pct(report.false_negatives, report.gt_total)})",
        f"false positives:  {report.false_positives} ({_pct(report.false_positives, report.detections)})",
        f"average recall:    {100.0 * report.macro_recall:.1f}%",
        f"average precision: {100.0 * report.macro_precision:.1f}%",
        f"macro F1:          {100.0 * report.macro_f1:.1f}%",
        "per-class F1:",
    ]
    for name in report.classes:
        lines.append(f"  {name:<22} {100.0 * report.per_class[name]['f1']:.1f}%")
    lines.append(
        "note: FN% is relative to the ground-truth count, FP% to the detection count."
    )
    return "\n".join(lines) + "\n"


def render_csv(report: MetricsReport) -> str:
    """CSV: one row per class, then macro and totals footer rows."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "tp", "fp", "fn", "precision", "recall", "f1"])
    for name in report.classes:
        row = report.per_class[name]
        writer.writerow(
            [
                name,
                int(row["tp"]),
                int(row["fp"]),
                int(row["fn"]),
                f"{row['precision']:.6f}",
                f"{row['recall']:.6f}",
                f"{row['f1']:.6f}",
            ]
        )
    writer.writerow(
        [
            "macro",
            "",
            "",
            "",
            f"{report.macro_precision:.6f}",
            f"{report.macro_recall:.6f}",
            f"{report.macro_f1:.6f}",
        ]
    )
    writer.writerow(
        ["totals", report.detections, report.false_positives, report.false_negatives, "", "", ""]
    )
    return buf.getvalue()


def parse_report_csv(text: str) -> dict:
    """Re-parse render_csv output (used for round-trip verification)."""
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    assert header[0] == "class"
    out = {"per_class": {}, "macro": None, "totals": None}
    for row in body:
        if row[0] == "macro":
            out["macro"] = tuple(float(v) for v in row[4:7])
        elif row[0] == "totals":
            out["totals"] = tuple(int(v) for v in row[1:4])
        else:
            out["per_class"][row[0]] = {
                "tp": int(row[1]),
                "fp": int(row[2]),
                "fn": int(row[3]),
                "precision": float(row[4]),
                "recall": float(row[5]),
                "f1": float(row[6]),
            }
    return out


def report_to_dict(report: MetricsReport) -> dict:
    """JSON-ready form of the report (stable key order via sort on dump)."""
    return {
        "classes": list(report.classes),
        "per_class": {
            name: {k: v for k, v in row.items()} for name, row in report.per_class.items()
        },
        "macro_precision": report.macro_precision,
        "macro_recall": report.macro_recall,
        "macro_f1": report.macro_f1,
        "detections": report.detections,
        "false_negatives": report.false_negatives,
        "false_positives": report.false_positives,
        "gt_total": report.gt_total,
    }
