"""COCO-protocol detection scoring: AP and AR over an IoU sweep.

Bbox-only evaluation. AP uses 101-point interpolation (recall grid
0.00..1.00, precision = max precision at recall >= r), averaged over IoU
thresholds 0.50:0.05:0.95; AR is the mean over the same thresholds of the
best recall with at most `max_detections` detections per image and
category. AP at IoU 0.50 alone is reported alongside the sweep average.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .cocoio import CocoDataset

__all__ = [
    "DetectionResult",
    "EvalSettings",
    "CategoryMetrics",
    "EvalReport",
    "Matching",
    "bbox_iou",
    "match_detections",
    "average_precision",
    "evaluate",
    "load_detections",
]

_IOU_SWEEP = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class DetectionResult:
    """One detector output row, in the standard COCO results-file shape."""

    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]  # x, y, w, h
    score: float

    def __post_init__(self) -> None:
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ValueError(f"detection bbox extent must be positive, got {self.bbox}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class EvalSettings:
    iou_thresholds: tuple[float, ...] = _IOU_SWEEP
    max_detections: int = 100
    recall_points: int = 101


@dataclass(frozen=True)
class CategoryMetrics:
    ap: float
    ap50: float | None
    ar: float


@dataclass(frozen=True)
class EvalReport:
    """Per-category and mean AP/AR plus the settings that produced them."""

    per_category: dict[int, CategoryMetrics]
    mean_ap: float
    mean_ap50: float | None
    mean_ar: float
    settings: EvalSettings
    absent_categories: tuple[int, ...] = ()
    excluded_detections: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "mean_ap": self.mean_ap,
            "mean_ap50": self.mean_ap50,
            "mean_ar": self.mean_ar,
            "per_category": {
                str(cid): {"ap": m.ap, "ap50": m.ap50, "ar": m.ar}
                for cid, m in sorted(self.per_category.items())
            },
            "absent_categories": list(self.absent_categories),
            "excluded_detections": list(self.excluded_detections),
            "settings": {
                "iou_thresholds": list(self.settings.iou_thresholds),
                "max_detections": self.settings.max_detections,
                "recall_points": self.settings.recall_points,
            },
        }

    def to_table(self, names: dict[int, str] | None = None) -> str:
        names = names or {}
        rows = [("category", "AP", "AP50", "AR")]
        for cid, m in sorted(self.per_category.items()):
            label = names.get(cid, str(cid))
            ap50 = f"{m.ap50:.4f}" if m.ap50 is not None else "-"
            rows.append((label, f"{m.ap:.4f}", ap50, f"{m.ar:.4f}"))
        mean50 = f"{self.mean_ap50:.4f}" if self.mean_ap50 is not None else "-"
        rows.append(("mean", f"{self.mean_ap:.4f}", mean50, f"{self.mean_ar:.4f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


@dataclass(frozen=True)
class Matching:
    """Greedy match of one image+category cell: (det, gt) index pairs."""

    pairs: tuple[tuple[int, int], ...]
    unmatched_dets: tuple[int, ...]
    unmatched_gts: tuple[int, ...]


def bbox_iou(a: Sequence[float], b: Sequence[float]) -> float:
    """IoU of two axis-aligned (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    return inter / (aw * ah + bw * bh - inter)


def match_detections(
    dets: Sequence[tuple[Sequence[float], float]],
    gts: Sequence[Sequence[float]],
    iou_thr: float,
) -> Matching:
    """Greedy COCO matching within one image+category cell.

    `dets` are (bbox, score) pairs. Detections are taken in descending
    score order (ties keep input order); each grabs the unmatched ground
    truth with the highest IoU, requiring IoU >= iou_thr. IoU ties go to
    the earlier ground truth.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i][1])
    gt_taken = [False] * len(gts)
    pairs: list[tuple[int, int]] = []
    unmatched_dets: list[int] = []
    for di in order:
        box = dets[di][0]
        best_gt = -1
        best_iou = 0.0
        for gi, gt_box in enumerate(gts):
            if gt_taken[gi]:
                continue
            iou = bbox_iou(box, gt_box)
            if iou >= iou_thr and iou > best_iou:
                best_iou = iou
                best_gt = gi
        if best_gt >= 0:
            gt_taken[best_gt] = True
            pairs.append((di, best_gt))
        else:
            unmatched_dets.append(di)
    unmatched_gts = [gi for gi, taken in enumerate(gt_taken) if not taken]
    return Matching(tuple(pairs), tuple(unmatched_dets), tuple(unmatched_gts))


def average_precision(
    scored_flags: Sequence[tuple[float, bool]],
    n_gt: int,
    recall_points: int = 101,
) -> float:
    """101-point interpolated AP from (score, is_true_positive) rows.

    Rows are sorted by descending score (stable), the precision/recall
    curve is built cumulatively, and each recall grid point takes the
    maximum precision at recall >= r. The recall comparison is done in
    exact integer arithmetic, so grid boundaries are unambiguous.
    """
    if n_gt == 0:
        raise ValueError("average_precision needs at least one ground truth")
    rows = sorted(range(len(scored_flags)), key=lambda i: -scored_flags[i][0])
    precisions: list[float] = []
    tp_counts: list[int] = []
    tp = 0
    for rank, i in enumerate(rows, start=1):
        if scored_flags[i][1]:
            tp += 1
        precisions.append(tp / rank)
        tp_counts.append(tp)

    # envelope: best precision achievable at or beyond each point
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])

    denom = recall_points - 1
    total = 0.0
    j = 0
    for k in range(recall_points):
        # first row whose recall tp/n_gt reaches the grid point k/denom
        while j < len(tp_counts) and tp_counts[j] * denom < k * n_gt:
            j += 1
        total += precisions[j] if j < len(precisions) else 0.0
    return total / recall_points


def _group_gts(ds: CocoDataset) -> dict[tuple[int, int], list[tuple[float, float, float, float]]]:
    cells: dict[tuple[int, int], list[tuple[float, float, float, float]]] = {}
    for ann in ds.annotations:
        cells.setdefault((ann.image_id, ann.category_id), []).append(ann.bbox)
    return cells


def evaluate(
    ds: CocoDataset,
    dets: Sequence[DetectionResult],
    settings: EvalSettings | None = None,
) -> EvalReport:
    """Score detections against a dataset's ground truth.

    Per-category AP/AR are averaged (unweighted) only over categories that
    own at least one ground-truth annotation; categories without ground
    truth are reported as absent. Detections naming unknown images or
    categories are excluded and listed.
    """
    settings = settings or EvalSettings()
    image_ids = {im.id for im in ds.images}
    cat_ids = {c.id for c in ds.categories}

    excluded: list[str] = []
    kept: list[tuple[int, DetectionResult]] = []
    for i, det in enumerate(dets):
        if det.image_id not in image_ids:
            excluded.append(f"detection {i}: unknown image_id {det.image_id}")
        elif det.category_id not in cat_ids:
            excluded.append(f"detection {i}: unknown category_id {det.category_id}")
        else:
            kept.append((i, det))

    gt_cells = _group_gts(ds)
    det_cells: dict[tuple[int, int], list[tuple[int, DetectionResult]]] = {}
    for i, det in kept:
        det_cells.setdefault((det.image_id, det.category_id), []).append((i, det))

    cats_with_gt = sorted({cat for (_img, cat) in gt_cells})
    sorted_images = sorted(image_ids)

    per_category: dict[int, CategoryMetrics] = {}
    for cat in cats_with_gt:
        n_gt = sum(len(gt_cells.get((img, cat), ())) for img in sorted_images)
        ap_per_thr: list[float] = []
        recall_per_thr: list[float] = []
        for thr in settings.iou_thresholds:
            flags: list[tuple[float, int, bool]] = []  # (score, original index, tp)
            matched_total = 0
            for img in sorted_images:
                gts = gt_cells.get((img, cat), [])
                cell = det_cells.get((img, cat), [])
                # cap detections per image+category, keeping the highest scores
                cell = sorted(cell, key=lambda pair: -pair[1].score)[: settings.max_detections]
                cell = sorted(cell, key=lambda pair: pair[0])  # back to input order
                matching = match_detections([(d.bbox, d.score) for _, d in cell], gts, thr)
                tp_local = {di for di, _gi in matching.pairs}
                matched_total += len(matching.pairs)
                for local, (orig, det) in enumerate(cell):
                    flags.append((det.score, orig, local in tp_local))
            flags.sort(key=lambda row: (-row[0], row[1]))
            ap_per_thr.append(
                average_precision([(s, tp) for s, _o, tp in flags], n_gt, settings.recall_points)
            )
            recall_per_thr.append(matched_total / n_gt)
        ap = sum(ap_per_thr) / len(ap_per_thr)
        ap50 = None
        if 0.5 in settings.iou_thresholds:
            ap50 = ap_per_thr[settings.iou_thresholds.index(0.5)]
        ar = sum(recall_per_thr) / len(recall_per_thr)
        per_category[cat] = CategoryMetrics(ap=ap, ap50=ap50, ar=ar)

    if per_category:
        mean_ap = sum(m.ap for m in per_category.values()) / len(per_category)
        mean_ar = sum(m.ar for m in per_category.values()) / len(per_category)
        ap50s = [m.ap50 for m in per_category.values()]
        mean_ap50 = None if any(v is None for v in ap50s) else sum(ap50s) / len(ap50s)
    else:
        mean_ap = mean_ar = 0.0
        mean_ap50 = 0.0 if 0.5 in settings.iou_thresholds else None

    absent = tuple(sorted(cat_ids - set(cats_with_gt)))
    return EvalReport(
        per_category=per_category,
        mean_ap=mean_ap,
        mean_ap50=mean_ap50,
        mean_ar=mean_ar,
        settings=settings,
        absent_categories=absent,
        excluded_detections=tuple(excluded),
    )


def load_detections(path: str | Path) -> list[DetectionResult]:
    """Read a JSON array of detection rows."""
    with open(path, "r", encoding="utf-8") as fp:
        doc = json.load(fp)
    if not isinstance(doc, list):
        raise ValueError("detections file must hold a JSON array")
    dets: list[DetectionResult] = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict):
            raise ValueError(f"detection {i}: must be an object")
        try:
            dets.append(
                DetectionResult(
                    image_id=int(entry["image_id"]),
                    category_id=int(entry["category_id"]),
                    bbox=tuple(float(v) for v in entry["bbox"]),
                    score=float(entry["score"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"detection {i}: {exc}") from exc
    return dets
