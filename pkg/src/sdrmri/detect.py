"""Bounding boxes, proposal generation, a matched-filter detector, and
detection metrics (recall / mAP at a fixed IoU threshold).

Boxes use continuous pixel coordinates: pixel ``(row j, col i)`` covers
``[i, i+1) x [j, j+1)``, so an image of width W spans ``[0, W]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage, signal


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def clipped(self, width: float, height: float) -> "BoundingBox":
        return BoundingBox(
            max(0.0, min(self.x_min, width - 1.0)),
            max(0.0, min(self.y_min, height - 1.0)),
            min(float(width), max(self.x_max, self.x_min + 1e-6)),
            min(float(height), max(self.y_max, self.y_min + 1e-6)),
        )

    def inside(self, width: float, height: float) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    class_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class MergedDetection:
    """One detection pooled across a reconstruction set.

    ``per_recon_scores`` has one slot per reconstruction (0 where the box was
    absent); ``score`` is the arithmetic mean over all slots.
    """

    box: BoundingBox
    class_id: int
    per_recon_scores: tuple[float, ...]

    @property
    def score(self) -> float:
        return sum(self.per_recon_scores) / len(self.per_recon_scores)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression.

    Keeps detections in descending score order and suppresses any remaining
    same-class detection whose IoU with a kept one exceeds the threshold
    (strictly). Ties in score are broken by lower input index.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    order = sorted(range(len(dets)), key=lambda k: (-dets[k].score, k))
    kept: list[int] = []
    suppressed = [False] * len(dets)
    for k in order:
        if suppressed[k]:
            continue
        kept.append(k)
        for j in order:
            if j == k or suppressed[j]:
                continue
            if dets[j].class_id == dets[k].class_id and iou(dets[j].box, dets[k].box) > iou_threshold:
                suppressed[j] = True
    return [dets[k] for k in sorted(kept)]


def _jitter_one(box: BoundingBox, draws: tuple[float, float, float, float],
                image_shape: tuple[int, int]) -> BoundingBox:
    """Apply one jitter draw (scale_w, scale_h, shift_x, shift_y) to a box.

    scale_* are the sampled size factors in [0.75, 1.25]; shift_* are the
    sampled center offsets in [-0.25, 0.25] (fractions of the original
    width/height). The result is clipped to the image.
    """
    sw, sh, tx, ty = draws
    h, w = image_shape
    cx, cy = box.center
    new_w = box.width * sw
    new_h = box.height * sh
    cx = cx + tx * box.width
    cy = cy + ty * box.height
    return BoundingBox(cx - new_w / 2, cy - new_h / 2, cx + new_w / 2, cy + new_h / 2).clipped(w, h)


def jitter_boxes(gt_boxes: Sequence[BoundingBox], image_shape: tuple[int, int],
                 seed: int) -> list[BoundingBox]:
    """Simulate user-drawn suspect boxes by perturbing ground-truth boxes.

    Width and height scale independently by U[0.75, 1.25]; the center shifts
    by U[-0.25, 0.25] of the original width/height on each axis.
    """
    rng = np.random.default_rng(seed)
    out = []
    for box in gt_boxes:
        sw, sh = rng.uniform(0.75, 1.25, size=2)
        tx, ty = rng.uniform(-0.25, 0.25, size=2)
        out.append(_jitter_one(box, (sw, sh, tx, ty), image_shape))
    return out


@dataclass(frozen=True)
class AutoProposalConfig:
    anchor_sizes: tuple[int, ...] = (8, 16, 32)
    stride: int = 8
    keep_fraction: float = 0.75
    nms_iou: float = 0.05
    max_boxes: int = 20


def keep_top_fraction(scores: np.ndarray, fraction: float) -> np.ndarray:
    """Indices of the ceil(fraction * N) highest scores, ties by lower index."""
    n = len(scores)
    if n == 0:
        return np.empty(0, dtype=int)
    keep_n = math.ceil(fraction * n)
    order = np.lexsort((np.arange(n), -np.asarray(scores)))
    return np.sort(order[:keep_n])


def _integral(img: np.ndarray) -> np.ndarray:
    out = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
    out[1:, 1:] = np.cumsum(np.cumsum(img, axis=0), axis=1)
    return out


def _window_sum(integ: np.ndarray, y0, y1, x0, x1):
    return integ[y1, x1] - integ[y0, x1] - integ[y1, x0] + integ[y0, x0]


def propose_boxes_auto(x: np.ndarray, cfg: AutoProposalConfig | None = None) -> list[BoundingBox]:
    """Automatic proposal boxes from local contrast energy.

    Scores square anchors (variance inside the box minus variance of a
    surrounding ring), drops the lowest-scoring 25%, then applies NMS at a
    low IoU threshold and caps the number of proposals.
    """
    cfg = cfg or AutoProposalConfig()
    mag = np.abs(np.asarray(x))
    h, w = mag.shape
    i1 = _integral(mag)
    i2 = _integral(mag * mag)

    anchors: list[BoundingBox] = []
    scores: list[float] = []
    for size in cfg.anchor_sizes:
        if size > min(h, w):
            continue
        margin = size // 2
        for y0 in range(0, h - size + 1, cfg.stride):
            for x0 in range(0, w - size + 1, cfg.stride):
                y1, x1 = y0 + size, x0 + size
                n_in = size * size
                s1 = _window_sum(i1, y0, y1, x0, x1)
                s2 = _window_sum(i2, y0, y1, x0, x1)
                var_in = max(s2 / n_in - (s1 / n_in) ** 2, 0.0)
                ry0, rx0 = max(0, y0 - margin), max(0, x0 - margin)
                ry1, rx1 = min(h, y1 + margin), min(w, x1 + margin)
                n_big = (ry1 - ry0) * (rx1 - rx0)
                n_ring = n_big - n_in
                if n_ring > 0:
                    b1 = _window_sum(i1, ry0, ry1, rx0, rx1) - s1
                    b2 = _window_sum(i2, ry0, ry1, rx0, rx1) - s2
                    var_ring = max(b2 / n_ring - (b1 / n_ring) ** 2, 0.0)
                else:
                    var_ring = 0.0
                anchors.append(BoundingBox(float(x0), float(y0), float(x1), float(y1)))
                scores.append(var_in - var_ring)

    keep = keep_top_fraction(np.asarray(scores), cfg.keep_fraction)
    survivors = [Detection(anchors[k], 0, _unit_score(scores[k], scores)) for k in keep]
    survivors = nms(survivors, cfg.nms_iou)
    survivors.sort(key=lambda d: -d.score)
    return [d.box for d in survivors[: cfg.max_boxes]]


def _unit_score(s: float, all_scores: Sequence[float]) -> float:
    lo, hi = min(all_scores), max(all_scores)
    if hi <= lo:
        return 0.5
    return (s - lo) / (hi - lo)


@dataclass(frozen=True)
class LesionTemplate:
    """NCC matching pattern plus the extent of the detection box to emit.

    The pattern window is larger than the lesion so the correlation's local
    normalization sees the surround; the emitted box matches the lesion
    footprint itself.
    """

    pattern: np.ndarray
    box_size: float

    def __post_init__(self):
        p = np.asarray(self.pattern, dtype=float)
        if p.ndim != 2 or p.shape[0] % 2 == 0 or p.shape[1] % 2 == 0:
            raise ValueError("template pattern must be 2-D with odd dimensions")
        if self.box_size <= 0:
            raise ValueError("box_size must be positive")
        object.__setattr__(self, "pattern", p)


def matched_filter_detect(x: np.ndarray, templates: Mapping[int, Sequence[LesionTemplate]],
                          threshold: float, nms_iou: float = 0.25,
                          smooth_sigma: float = 1.0) -> list[Detection]:
    """Detect lesions by normalized cross-correlation with known templates.

    The magnitude image is lightly smoothed first (``smooth_sigma`` px) so
    broadband pixel noise does not swamp the correlation's normalization;
    templates are smoothed identically to keep the matched pair. Local NCC
    maxima above ``threshold`` become detections (score = NCC clipped to
    [0, 1], box of the template's ``box_size`` centered at the peak).
    Same-class overlaps are removed by NMS.
    """
    if not templates or all(len(v) == 0 for v in templates.values()):
        raise ValueError("templates must be nonempty")
    mag = np.abs(np.asarray(x)).astype(float)
    if smooth_sigma > 0:
        mag = ndimage.gaussian_filter(mag, smooth_sigma)
    h, w = mag.shape
    dets: list[Detection] = []
    for class_id in sorted(templates):
        for tmpl in templates[class_id]:
            pat = tmpl.pattern
            if smooth_sigma > 0:
                pat = ndimage.gaussian_filter(pat, smooth_sigma)
            th, tw = pat.shape
            if th > h or tw > w:
                continue
            ncc = _ncc_map(mag, pat)
            # valid only where the full window fits inside the image
            my, mx = th // 2, tw // 2
            valid = np.zeros_like(ncc, dtype=bool)
            valid[my : h - my, mx : w - mx] = True
            peaks = (ncc == ndimage.maximum_filter(ncc, size=3)) & valid & (ncc >= threshold)
            half = tmpl.box_size / 2
            for py, px in zip(*np.nonzero(peaks)):
                score = float(np.clip(ncc[py, px], 0.0, 1.0))
                cx, cy = px + 0.5, py + 0.5
                box = BoundingBox(cx - half, cy - half, cx + half, cy + half)
                dets.append(Detection(box, class_id, score))
    return nms(dets, nms_iou)


def _ncc_map(mag: np.ndarray, tmpl: np.ndarray) -> np.ndarray:
    t0 = tmpl - tmpl.mean()
    tnorm = np.linalg.norm(t0)
    if tnorm < 1e-12:
        return np.zeros_like(mag)
    n = tmpl.size
    cross = signal.fftconvolve(mag, t0[::-1, ::-1], mode="same")
    ones = np.ones_like(tmpl)
    s1 = signal.fftconvolve(mag, ones, mode="same")
    s2 = signal.fftconvolve(mag * mag, ones, mode="same")
    var = np.maximum(s2 - s1 * s1 / n, 0.0)
    denom = np.sqrt(var) * tnorm
    ncc = np.zeros_like(mag)
    good = denom > 1e-9
    ncc[good] = cross[good] / denom[good]
    return ncc


def merge_detections(per_recon_dets: Sequence[Sequence[Detection]], n_rec: int,
                     iou_threshold: float = 0.25) -> list[MergedDetection]:
    """Pool detections across reconstructions and average their scores.

    Same-class detections overlapping at IoU >= threshold are grouped,
    anchored on the highest-score member whose box is kept. Each group yields
    one merged detection whose per-reconstruction slots hold that
    reconstruction's best member score (0 when absent); the merged score is
    the mean over all ``n_rec`` slots.
    """
    if len(per_recon_dets) != n_rec:
        raise ValueError(f"expected {n_rec} detection lists, got {len(per_recon_dets)}")
    pool = [(det, ridx) for ridx, dets in enumerate(per_recon_dets) for det in dets]
    order = sorted(range(len(pool)), key=lambda k: (-pool[k][0].score, k))
    used = [False] * len(pool)
    merged: list[MergedDetection] = []
    for k in order:
        if used[k]:
            continue
        anchor, _ = pool[k]
        slots = [0.0] * n_rec
        for j in order:
            if used[j]:
                continue
            det, ridx = pool[j]
            if det.class_id != anchor.class_id:
                continue
            if j == k or iou(det.box, anchor.box) >= iou_threshold:
                used[j] = True
                slots[ridx] = max(slots[ridx], det.score)
        merged.append(MergedDetection(anchor.box, anchor.class_id, tuple(slots)))
    return merged


def recall_at_iou(dets: Sequence, gts: Sequence[tuple[BoundingBox, int]],
                  iou_threshold: float = 0.25) -> float | None:
    """Fraction of ground-truth boxes matched by a same-class detection.

    Matching is greedy one-to-one in descending score order; each detection
    claims the unmatched same-class ground truth of highest IoU (>= the
    threshold). Returns None when there is no ground truth.
    """
    if not gts:
        return None
    order = sorted(range(len(dets)), key=lambda k: (-dets[k].score, k))
    taken = [False] * len(gts)
    matched = 0
    for k in order:
        det = dets[k]
        best, best_v = -1, -1.0
        for g, (gbox, gcls) in enumerate(gts):
            if taken[g] or gcls != det.class_id:
                continue
            v = iou(det.box, gbox)
            if v >= iou_threshold and v > best_v:
                best, best_v = g, v
        if best >= 0:
            taken[best] = True
            matched += 1
    return matched / len(gts)


def _greedy_match_flags(flat_dets, per_image_gts, class_id, iou_threshold):
    """TP/FP flags for one class; ``flat_dets`` is score-sorted (score, img, box)."""
    taken = {i: [False] * len(g) for i, g in enumerate(per_image_gts)}
    flags = []
    for _score, img, box in flat_dets:
        gts = per_image_gts[img]
        best, best_v = -1, -1.0
        for g, (gbox, gcls) in enumerate(gts):
            if gcls != class_id or taken[img][g]:
                continue
            v = iou(box, gbox)
            if v >= iou_threshold and v > best_v:
                best, best_v = g, v
        if best >= 0:
            taken[img][best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(tp_flags: Sequence[bool], n_gt: int, method: str = "all-points") -> float:
    """AP from score-ordered TP/FP flags against ``n_gt`` ground truths."""
    if n_gt <= 0:
        raise ValueError("n_gt must be positive")
    tp = np.cumsum(np.asarray(tp_flags, dtype=float))
    fp = np.cumsum(~np.asarray(tp_flags, dtype=bool))
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    if method == "all-points":
        mrec = np.concatenate(([0.0], recall, [1.0]))
        mpre = np.concatenate(([0.0], precision, [0.0]))
        for i in range(len(mpre) - 2, -1, -1):
            mpre[i] = max(mpre[i], mpre[i + 1])
        idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
        return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))
    if method == "11-point":
        ap = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            mask = recall >= t - 1e-12
            ap += float(precision[mask].max()) if mask.any() else 0.0
        return ap / 11.0
    raise ValueError(f"unknown AP method {method!r}")


def map_at_iou(per_image_dets: Sequence[Sequence], per_image_gts: Sequence[Sequence[tuple[BoundingBox, int]]],
               iou_threshold: float = 0.25, method: str = "all-points") -> float | None:
    """Mean average precision over classes with at least one ground truth.

    Detections are ranked by score across all images per class; matching is
    greedy one-to-one within each image. Returns None when no class has any
    ground truth.
    """
    if len(per_image_dets) != len(per_image_gts):
        raise ValueError("detection and ground-truth image counts differ")
    classes = sorted({cls for gts in per_image_gts for _, cls in gts})
    if not classes:
        return None
    aps = []
    for cls in classes:
        n_gt = sum(1 for gts in per_image_gts for _, c in gts if c == cls)
        flat = []
        for img, dets in enumerate(per_image_dets):
            for k, det in enumerate(dets):
                if det.class_id == cls:
                    flat.append((det.score, img, k, det.box))
        flat.sort(key=lambda t: (-t[0], t[1], t[2]))
        ordered = [(s, img, box) for s, img, _k, box in flat]
        flags = _greedy_match_flags(ordered, per_image_gts, cls, iou_threshold)
        aps.append(average_precision(flags, n_gt, method) if ordered else 0.0)
    return float(np.mean(aps))
