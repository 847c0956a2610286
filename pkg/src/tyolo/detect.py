"""Grid-cell detection head: decoding, NMS, and PR-curve evaluation.

Boxes live in normalized image coordinates: center (cx, cy) plus width
and height, all in [0, 1]. A head output vector is an S x S grid, row
major (cell index = row * S + col), each cell holding B predictors of
(x_off, y_off, w, h, confidence) followed by C shared class scores.

Evaluation follows the usual single-threshold protocol: predictions are
matched to ground truth greedily in score order, one match per ground
truth box, a match requiring IoU >= the threshold (0.5 unless stated).
average_precision supports both the 11-point interpolation and the
every-point (area under the interpolated envelope) variant.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class DetectionBox:
    class_id: int
    score: float
    cx: float
    cy: float
    w: float
    h: float
    image_id: str = ""

    def sort_key(self):
        # Total order: ties on score can't reorder results run to run.
        return (-self.score, self.class_id, self.cx, self.cy, self.w, self.h, self.image_id)


@dataclass(frozen=True)
class GroundTruthBox:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float
    image_id: str = ""


def decode(
    vector: np.ndarray,
    grid: int,
    boxes: int,
    classes: int,
    threshold: float = 0.0,
    image_id: str = "",
) -> list[DetectionBox]:
    """Turn a head output vector into scored boxes (no NMS).

    Box geometry and scores are clamped to [0, 1] before use; the cell
    offsets are resolved as (col + x_off) / grid. Score is confidence
    times the best class probability; a box survives only if its score
    strictly exceeds the threshold, so threshold 1.0 always yields [].
    """
    per_cell = 5 * boxes + classes
    v = np.asarray(vector, dtype=np.float64).reshape(grid, grid, per_cell)
    out: list[DetectionBox] = []
    for row in range(grid):
        for col in range(grid):
            cell = v[row, col]
            probs = np.clip(cell[5 * boxes :], 0.0, 1.0)
            class_id = int(np.argmax(probs))
            best_prob = float(probs[class_id])
            for b in range(boxes):
                x_off, y_off, w, h, conf = np.clip(cell[5 * b : 5 * b + 5], 0.0, 1.0)
                score = float(conf) * best_prob
                if score > threshold:
                    out.append(
                        DetectionBox(
                            class_id=class_id,
                            score=score,
                            cx=(col + float(x_off)) / grid,
                            cy=(row + float(y_off)) / grid,
                            w=float(w),
                            h=float(h),
                            image_id=image_id,
                        )
                    )
    out.sort(key=DetectionBox.sort_key)
    return out


def iou(a, b) -> float:
    """Intersection over union of two center-format boxes."""
    ax0, ax1 = a.cx - a.w / 2, a.cx + a.w / 2
    ay0, ay1 = a.cy - a.h / 2, a.cy + a.h / 2
    bx0, bx1 = b.cx - b.w / 2, b.cx + b.w / 2
    by0, by1 = b.cy - b.h / 2, b.cy + b.h / 2
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def nms(dets: list[DetectionBox], iou_threshold: float = 0.5) -> list[DetectionBox]:
    """Greedy per-class suppression: drop boxes overlapping a kept box of
    the same class with IoU strictly above the threshold."""
    ordered = sorted(dets, key=DetectionBox.sort_key)
    kept: list[DetectionBox] = []
    for d in ordered:
        if any(k.class_id == d.class_id and iou(k, d) > iou_threshold for k in kept):
            continue
        kept.append(d)
    return kept


def _pr_curve(preds: list[DetectionBox], gts: list[GroundTruthBox], iou_threshold: float):
    """Cumulative precision/recall along the score-ranked prediction list."""
    ordered = sorted(preds, key=DetectionBox.sort_key)
    matched: set[int] = set()
    tps = []
    for p in ordered:
        best, best_iou = None, 0.0
        for gi, g in enumerate(gts):
            if gi in matched or g.image_id != p.image_id:
                continue
            v = iou(p, g)
            if v > best_iou:
                best, best_iou = gi, v
        if best is not None and best_iou >= iou_threshold:
            matched.add(best)
            tps.append(1)
        else:
            tps.append(0)
    tp = np.cumsum(tps, dtype=np.float64) if tps else np.zeros(0)
    fp = np.arange(1, len(tps) + 1, dtype=np.float64) - tp
    recall = tp / len(gts)
    precision = tp / (tp + fp)
    return recall, precision


def average_precision(
    preds: list[DetectionBox],
    gts: list[GroundTruthBox],
    iou_threshold: float = 0.5,
    method: str = "11point",
) -> float:
    """AP for a single class. `method` is "11point" or "interp_all"."""
    if not gts:
        raise ValueError("average_precision needs at least one ground-truth box")
    recall, precision = _pr_curve(preds, gts, iou_threshold)
    if recall.size == 0:
        return 0.0
    if method == "11point":
        total = 0.0
        for r in np.linspace(0.0, 1.0, 11):
            mask = recall >= r - 1e-12
            total += float(precision[mask].max()) if mask.any() else 0.0
        return total / 11.0
    if method == "interp_all":
        # Monotone precision envelope, integrated over recall steps.
        env = np.maximum.accumulate(precision[::-1])[::-1]
        ap = 0.0
        prev_r = 0.0
        for r, p in zip(recall, env):
            if r > prev_r:
                ap += (r - prev_r) * p
                prev_r = r
        return float(ap)
    raise ValueError(f"unknown AP method {method!r}")


def mean_ap(
    preds: list[DetectionBox],
    gts: list[GroundTruthBox],
    iou_threshold: float = 0.5,
    method: str = "11point",
) -> tuple[float, dict[int, float]]:
    """mAP over every class that has ground truth; also returns per-class AP."""
    if not gts:
        raise ValueError("mean_ap needs at least one ground-truth box")
    class_ids = sorted({g.class_id for g in gts})
    per_class = {}
    for cid in class_ids:
        p = [d for d in preds if d.class_id == cid]
        g = [d for d in gts if d.class_id == cid]
        per_class[cid] = average_precision(p, g, iou_threshold, method)
    return float(np.mean(list(per_class.values()))), per_class


def save_detections_jsonl(path: str, dets: list[DetectionBox]) -> None:
    with open(path, "w") as f:
        for d in dets:
            f.write(json.dumps(asdict(d)) + "\n")


def load_detections_jsonl(path: str) -> list[DetectionBox]:
    return _load_jsonl(path, DetectionBox)


def load_ground_truth_jsonl(path: str) -> list[GroundTruthBox]:
    return _load_jsonl(path, GroundTruthBox)


def _load_jsonl(path: str, cls):
    from .errors import FormatError

    out = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(cls(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as e:
                raise FormatError(f"{path}:{ln}: bad record: {e}") from None
    return out
