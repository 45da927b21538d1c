"""Segmentation metrics: mIoU, tagging accuracy, box IoU and boundary F1."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .tensor_core import IGNORE_LABEL

Box = Tuple[int, int, int, int]  # (y0, x0, y1, x1), half-open


def _pair(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return pred, gt


def confusion_matrix(pred, gt, num_labels: int) -> np.ndarray:
    """Rows are ground truth, columns prediction; ignored voxels are skipped."""
    pred, gt = _pair(pred, gt)
    keep = (gt != IGNORE_LABEL) & (gt >= 0) & (gt < num_labels)
    keep &= (pred >= 0) & (pred < num_labels)
    idx = num_labels * gt[keep].astype(np.int64) + pred[keep].astype(np.int64)
    return np.bincount(idx, minlength=num_labels ** 2).reshape(num_labels, num_labels)


def iou_from_confusion(cm: np.ndarray):
    """Per-class IoU (NaN for classes absent from both maps) and their mean."""
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    present = ~np.isnan(iou)
    mean = float(iou[present].mean()) if present.any() else float("nan")
    return iou, mean


def miou(pred, gt, num_labels: Optional[int] = None):
    pred, gt = _pair(pred, gt)
    if num_labels is None:
        vals = np.concatenate([pred[pred != IGNORE_LABEL].ravel(), gt[gt != IGNORE_LABEL].ravel()])
        num_labels = int(vals.max()) + 1 if vals.size else 1
    return iou_from_confusion(confusion_matrix(pred, gt, num_labels))


def tag_set(labels) -> set:
    labels = np.asarray(labels)
    return set(np.unique(labels[labels != IGNORE_LABEL]).tolist())


def tagging_accuracy(pred, gt) -> float:
    """Jaccard index between the label sets present in ``pred`` and ``gt``."""
    pred, gt = _pair(pred, gt)
    a, b = tag_set(pred[gt != IGNORE_LABEL]), tag_set(gt)
    union = a | b
    return 1.0 if not union else len(a & b) / len(union)


def box_iou(a: Box, b: Box) -> float:
    iy = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    ix = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iy * ix
    area = lambda r: max(0, r[2] - r[0]) * max(0, r[3] - r[1])
    union = area(a) + area(b) - inter
    return inter / union if union > 0 else 0.0


_FOUR = ndimage.generate_binary_structure(2, 1)


def components(labels2d, cls: int):
    """4-connected regions of class ``cls``: list of (mask, box)."""
    lab, n = ndimage.label(np.asarray(labels2d) == cls, structure=_FOUR)
    out = []
    for k, sl in enumerate(ndimage.find_objects(lab), start=1):
        if sl is None:
            continue
        box = (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop)
        out.append((lab == k, box))
    return out


def label_boxes(labels2d, classes: Optional[Iterable[int]] = None) -> Dict[int, List[Box]]:
    labels2d = np.asarray(labels2d)
    if classes is None:
        classes = sorted(tag_set(labels2d))
    return {c: [box for _, box in components(labels2d, c)] for c in classes}


def greedy_match(pred_boxes: Sequence[Box], gt_boxes: Sequence[Box]):
    """Pair boxes greedily by descending IoU; returns [(pred_idx, gt_idx, iou)]."""
    cand = [(box_iou(p, g), i, j) for i, p in enumerate(pred_boxes) for j, g in enumerate(gt_boxes)]
    cand.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_p, used_g, pairs = set(), set(), []
    for iou, i, j in cand:
        if iou <= 0 or i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, iou))
    return pairs


def localization_scores(pred2d, gt_boxes: Dict[int, Sequence[Box]]):
    """Summed matched IoU and the number of boxes it is averaged over.

    Every ground-truth box and every unmatched predicted box counts once.
    """
    total, count = 0.0, 0
    pred2d = np.asarray(pred2d)
    classes = set(gt_boxes) | tag_set(pred2d)
    for c in sorted(classes):
        pb = [box for _, box in components(pred2d, c)]
        gb = list(gt_boxes.get(c, []))
        pairs = greedy_match(pb, gb)
        total += sum(iou for _, _, iou in pairs)
        count += len(gb) + len(pb) - len(pairs)
    return total, count


def localization_biou(pred2d, gt_boxes: Dict[int, Sequence[Box]]) -> float:
    """Mean box IoU between predicted region boxes and ground-truth boxes.

    Predicted boxes bound the 4-connected regions of each predicted class.
    """
    total, count = localization_scores(pred2d, gt_boxes)
    return 1.0 if count == 0 else total / count


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Pixels of ``mask`` with a 4-neighbor inside the image that is not in ``mask``.

    The image border is not a boundary.
    """
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros_like(mask)
    out[1:, :] |= mask[1:, :] & ~mask[:-1, :]
    out[:-1, :] |= mask[:-1, :] & ~mask[1:, :]
    out[:, 1:] |= mask[:, 1:] & ~mask[:, :-1]
    out[:, :-1] |= mask[:, :-1] & ~mask[:, 1:]
    return out


def _within(a: np.ndarray, b: np.ndarray, tol: int) -> np.ndarray:
    """Pixels of ``a`` within Chebyshev distance ``tol`` of some pixel of ``b``."""
    if not b.any():
        return np.zeros_like(a)
    near = ndimage.binary_dilation(b, structure=np.ones((2 * tol + 1, 2 * tol + 1), bool)) if tol else b
    return a & near


def boundary_f1(pred_mask, gt_mask, tol_px: int = 2) -> float:
    bp, bg = boundary_pixels(pred_mask), boundary_pixels(gt_mask)
    if not bp.any() and not bg.any():
        return 1.0
    if not bp.any() or not bg.any():
        return 0.0
    precision = _within(bp, bg, tol_px).sum() / bp.sum()
    recall = _within(bg, bp, tol_px).sum() / bg.sum()
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def boundary_scores(pred2d, gt2d, tol_px: int = 2, match_iou: float = 0.5):
    """Per-object boundary F1 for ground-truth regions localized with box IoU >= match_iou."""
    pred2d, gt2d = _pair(pred2d, gt2d)
    pred2d = np.where(gt2d == IGNORE_LABEL, IGNORE_LABEL, pred2d)
    scores = []
    for c in sorted(tag_set(gt2d)):
        gcomp = components(gt2d, c)
        pcomp = components(pred2d, c)
        pairs = greedy_match([b for _, b in pcomp], [b for _, b in gcomp])
        for i, j, iou in pairs:
            if iou >= match_iou:
                scores.append(boundary_f1(pcomp[i][0], gcomp[j][0], tol_px))
    return scores


def boundary_accuracy(pred2d, gt2d, tol_px: int = 2, match_iou: float = 0.5) -> float:
    """Mean boundary F1 over correctly localized objects (0 if none are)."""
    scores = boundary_scores(pred2d, gt2d, tol_px, match_iou)
    return float(np.mean(scores)) if scores else 0.0


@dataclass
class MetricsReport:
    per_class_iou: List[Optional[float]]
    miou: float
    ta: float
    la_biou: float
    ba: float

    def as_dict(self) -> Dict[str, object]:
        return {
            "miou": self.miou,
            "ta": self.ta,
            "la_biou": self.la_biou,
            "ba": self.ba,
            "per_class_iou": self.per_class_iou,
        }

    def to_text(self) -> str:
        rows = [("mIoU", self.miou), ("TA", self.ta), ("LA (bIoU)", self.la_biou), ("BA", self.ba)]
        lines = [f"{name:<12}{val:.4f}" for name, val in rows]
        for c, v in enumerate(self.per_class_iou):
            lines.append(f"{'IoU[%d]' % c:<12}{'-' if v is None else f'{v:.4f}'}")
        return "\n".join(lines) + "\n"


def _frames(a):
    a = np.asarray(a)
    return a[None] if a.ndim == 2 else a


def evaluate(pairs: Iterable, num_labels: int, gt_boxes: Optional[Sequence] = None,
             tol_px: int = 2) -> MetricsReport:
    """Dataset metrics over ``(pred, gt)`` label maps (2-D or ``(T, H, W)``).

    mIoU pools one confusion matrix over everything; TA, LA and BA treat every
    frame as an image and average.  ``gt_boxes`` gives per-image box dicts;
    when absent, boxes are taken from the ground-truth regions.
    """
    cm = np.zeros((num_labels, num_labels), dtype=np.int64)
    ta, la_tot, la_cnt, ba = [], 0.0, 0, []
    image = 0
    for pred, gt in pairs:
        pred, gt = _pair(_frames(pred), _frames(gt))
        cm += confusion_matrix(pred, gt, num_labels)
        for p2, g2 in zip(pred, gt):
            ta.append(tagging_accuracy(p2, g2))
            boxes = gt_boxes[image] if gt_boxes is not None else label_boxes(g2)
            p_eval = np.where(g2 == IGNORE_LABEL, IGNORE_LABEL, p2)
            tot, cnt = localization_scores(p_eval, boxes)
            la_tot += tot
            la_cnt += cnt
            ba.extend(boundary_scores(p2, g2, tol_px))
            image += 1
    iou, mean = iou_from_confusion(cm)
    return MetricsReport(
        per_class_iou=[None if np.isnan(v) else float(v) for v in iou],
        miou=0.0 if np.isnan(mean) else mean,
        ta=float(np.mean(ta)) if ta else 0.0,
        la_biou=1.0 if la_cnt == 0 else la_tot / la_cnt,
        ba=float(np.mean(ba)) if ba else 0.0,
    )
