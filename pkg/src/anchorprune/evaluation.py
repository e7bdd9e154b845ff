"""Scoring of anchor configurations on cached pre-NMS detections.

The pipeline per configuration: keep only records produced by kept anchors,
run class-wise NMS per image, then compute interpolated average precision
per class and IoU threshold, with size-stratified variants.

`PreparedEvaluation` caches everything that does not depend on the
configuration (sorted candidate lists, IoU matrices against ground truth) so
the search can score thousands of configurations from one dump cheaply. The
public `evaluate` builds a prepared instance on the fly; both paths run the
same code, so results are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ValidationError
from .heads import AnchorConfiguration, AnchorId, HeadSpec, head_digest
from .ingest import (
    Annotation,
    DetectionRecord,
    GroundTruthSet,
    RawDetectionSet,
    LARGE_AREA,
    SMALL_AREA,
)

UNDEFINED = None  # strata without ground truth; serialized as -1

_BUCKETS = {
    "all": (0.0, math.inf),
    "small": (0.0, SMALL_AREA),
    "medium": (SMALL_AREA, LARGE_AREA),
    "large": (LARGE_AREA, math.inf),
}

# exact hundredths 0.00, 0.01, ..., 1.00
RECALL_POINTS = np.round(np.linspace(0.0, 1.0, 101), 2)


class Protocol(str, Enum):
    COCO = "coco"
    VOC50 = "voc50"


@dataclass(frozen=True)
class MetricSpec:
    """Evaluation protocol parameters.

    COCO style averages AP over IoU thresholds 0.50:0.05:0.95; VOC style uses
    the single 0.50 threshold. NMS settings follow the usual SSD inference
    defaults and are explicit here because results are only comparable across
    runs with equal settings.
    """

    protocol: Protocol = Protocol.COCO
    iou_thresholds: tuple[float, ...] = ()
    max_detections_per_image: int = 100
    nms_iou: float = 0.45
    nms_score_floor: float = 0.02
    pre_nms_top_k: int = 400

    def __post_init__(self):
        if not self.iou_thresholds:
            if self.protocol == Protocol.COCO:
                thresholds = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
            else:
                thresholds = (0.50,)
            object.__setattr__(self, "iou_thresholds", thresholds)
        else:
            object.__setattr__(self, "iou_thresholds", tuple(self.iou_thresholds))
        if any(not (0.0 < t < 1.0) for t in self.iou_thresholds):
            raise ValidationError(f"iou thresholds must lie in (0,1): {self.iou_thresholds}")
        if list(self.iou_thresholds) != sorted(set(self.iou_thresholds)):
            raise ValidationError("iou thresholds must be strictly increasing")
        if not (0.0 < self.nms_iou < 1.0):
            raise ValidationError(f"nms_iou must lie in (0,1): {self.nms_iou}")

    @classmethod
    def coco(cls, **kwargs) -> "MetricSpec":
        return cls(protocol=Protocol.COCO, **kwargs)

    @classmethod
    def voc50(cls, **kwargs) -> "MetricSpec":
        return cls(protocol=Protocol.VOC50, **kwargs)


@dataclass(frozen=True)
class EvalResult:
    """Metric bundle; None marks strata with no ground truth (JSON: -1)."""

    map: float | None
    ap50: float | None
    ap75: float | None
    ap_s: float | None
    ap_m: float | None
    ap_l: float | None
    ar_s: float | None
    ar_m: float | None
    ar_l: float | None
    per_class_ap: dict[int, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def enc(v):
            return -1 if v is None else v

        return {
            "map": enc(self.map),
            "ap50": enc(self.ap50),
            "ap75": enc(self.ap75),
            "ap_s": enc(self.ap_s),
            "ap_m": enc(self.ap_m),
            "ap_l": enc(self.ap_l),
            "ar_s": enc(self.ar_s),
            "ar_m": enc(self.ar_m),
            "ar_l": enc(self.ar_l),
            "per_class_ap": {str(k): enc(v) for k, v in sorted(self.per_class_ap.items())},
        }


def iou(a, b) -> float:
    """Intersection over union of two [x, y, w, h] boxes; 0 on empty union."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def filter_by_config(dets: RawDetectionSet, config: AnchorConfiguration) -> RawDetectionSet:
    """Records produced by kept anchors, in original order."""
    if dets.header.head_spec_digest != head_digest(config.head):
        raise ValidationError("detection dump is bound to a different head")
    kept = config.kept
    return RawDetectionSet(
        dets.header, tuple(rec for rec in dets.records if rec.anchor in kept)
    )


def _record_sort_key(indexed: tuple[int, DetectionRecord]):
    idx, rec = indexed
    return (-rec.score, rec.anchor, idx)


def nms(records: list[DetectionRecord], spec: MetricSpec) -> list[DetectionRecord]:
    """Class-wise greedy NMS for one image, then a cross-class detection cap.

    Score ties are broken by canonical anchor order, then input order. The
    kept records are returned sorted by (score desc, anchor, box), which is
    independent of the input order whenever (score, anchor) pairs are unique.
    """
    if len({rec.image_id for rec in records}) > 1:
        raise ValidationError("nms input must share one image_id")
    by_class: dict[int, list[tuple[int, DetectionRecord]]] = {}
    for idx, rec in enumerate(records):
        if rec.score < spec.nms_score_floor:
            continue
        by_class.setdefault(rec.category_id, []).append((idx, rec))
    kept: list[tuple[int, DetectionRecord]] = []
    for cat in sorted(by_class):
        candidates = sorted(by_class[cat], key=_record_sort_key)[: spec.pre_nms_top_k]
        survivors: list[tuple[int, DetectionRecord]] = []
        for idx, rec in candidates:
            if all(iou(rec.bbox, other.bbox) <= spec.nms_iou for _, other in survivors):
                survivors.append((idx, rec))
        kept.extend(survivors)
    kept.sort(key=_record_sort_key)
    kept = kept[: spec.max_detections_per_image]
    return sorted(
        (rec for _, rec in kept),
        key=lambda r: (-r.score, r.anchor, r.bbox, r.category_id),
    )


def _match_flags(
    iou_matrix: np.ndarray, gt_crowd: np.ndarray, threshold: float
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy per-image matching: returns (tp, ignored) flags per detection.

    Each detection, in rank order, matches the unmatched non-crowd ground
    truth with the highest IoU >= threshold; failing that it is ignored if it
    overlaps a crowd region at the threshold (crowd overlap is intersection
    over detection area, the COCO crowd convention), else a false positive.
    """
    n_det, n_gt = iou_matrix.shape
    tp = np.zeros(n_det, dtype=bool)
    ignored = np.zeros(n_det, dtype=bool)
    matched = np.zeros(n_gt, dtype=bool)
    noncrowd = ~gt_crowd
    for d in range(n_det):
        row = iou_matrix[d]
        candidates = noncrowd & ~matched & (row >= threshold)
        if candidates.any():
            best = np.flatnonzero(candidates)[np.argmax(row[candidates])]
            matched[best] = True
            tp[d] = True
        elif (gt_crowd & (row >= threshold)).any():
            ignored[d] = True
    return tp, ignored


def _match_image(
    det_boxes: np.ndarray,
    gt_boxes: np.ndarray,
    gt_crowd: np.ndarray,
    threshold: float,
) -> tuple[np.ndarray, np.ndarray]:
    if len(gt_boxes) == 0:
        empty = np.zeros(len(det_boxes), dtype=bool)
        return empty, empty.copy()
    return _match_flags(det_gt_iou_matrix(det_boxes, gt_boxes, gt_crowd), gt_crowd, threshold)


def det_gt_iou_matrix(
    det_boxes: np.ndarray, gt_boxes: np.ndarray, gt_crowd: np.ndarray
) -> np.ndarray:
    """IoU of each detection against each ground truth box ([x,y,w,h] rows).

    Crowd columns use intersection over detection area instead of union.
    """
    if len(det_boxes) == 0 or len(gt_boxes) == 0:
        return np.zeros((len(det_boxes), len(gt_boxes)))
    dx1, dy1 = det_boxes[:, 0:1], det_boxes[:, 1:2]
    dx2, dy2 = dx1 + det_boxes[:, 2:3], dy1 + det_boxes[:, 3:4]
    gx1, gy1 = gt_boxes[:, 0], gt_boxes[:, 1]
    gx2, gy2 = gx1 + gt_boxes[:, 2], gy1 + gt_boxes[:, 3]
    iw = np.clip(np.minimum(dx2, gx2) - np.maximum(dx1, gx1), 0.0, None)
    ih = np.clip(np.minimum(dy2, gy2) - np.maximum(dy1, gy1), 0.0, None)
    inter = iw * ih
    det_area = (det_boxes[:, 2] * det_boxes[:, 3])[:, None]
    gt_area = (gt_boxes[:, 2] * gt_boxes[:, 3])[None, :]
    denom = np.where(gt_crowd[None, :], det_area, det_area + gt_area - inter)
    out = np.zeros_like(inter)
    np.divide(inter, denom, out=out, where=denom > 0)
    return out


def interpolated_ap(tp: np.ndarray, ignored: np.ndarray, npig: int) -> tuple[float, float]:
    """101-point interpolated AP and final recall from rank-ordered flags."""
    counted = ~ignored
    tp_cum = np.cumsum(tp[counted]).astype(np.float64)
    fp_cum = np.cumsum(~tp[counted]).astype(np.float64)
    if len(tp_cum) == 0:
        return 0.0, 0.0
    recall = tp_cum / npig
    precision = tp_cum / (tp_cum + fp_cum)
    # make precision the running maximum from the right
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    indices = np.searchsorted(recall, RECALL_POINTS, side="left")
    interpolated = np.where(indices < len(precision), precision[np.minimum(indices, len(precision) - 1)], 0.0)
    return float(interpolated.mean()), float(recall[-1])


def average_precision(
    ranked: list[DetectionRecord],
    class_gt: list[Annotation],
    iou_threshold: float,
) -> float | None:
    """AP for one class from detections pre-sorted by descending score.

    Returns None when the class has no non-crowd ground truth.
    """
    npig = sum(1 for ann in class_gt if not ann.iscrowd)
    if npig == 0:
        return UNDEFINED
    gt_by_image: dict[int, list[Annotation]] = {}
    for ann in class_gt:
        gt_by_image.setdefault(ann.image_id, []).append(ann)
    det_by_image: dict[int, list[int]] = {}
    for i, rec in enumerate(ranked):
        det_by_image.setdefault(rec.image_id, []).append(i)
    tp = np.zeros(len(ranked), dtype=bool)
    ignored = np.zeros(len(ranked), dtype=bool)
    for image_id, det_rows in det_by_image.items():
        anns = gt_by_image.get(image_id, [])
        det_boxes = np.array([ranked[i].bbox for i in det_rows], dtype=np.float64)
        gt_boxes = np.array([ann.bbox for ann in anns], dtype=np.float64).reshape(-1, 4)
        gt_crowd = np.array([ann.iscrowd for ann in anns], dtype=bool)
        img_tp, img_ignored = _match_image(det_boxes, gt_boxes, gt_crowd, iou_threshold)
        tp[det_rows] = img_tp
        ignored[det_rows] = img_ignored
    ap, _ = interpolated_ap(tp, ignored, npig)
    return ap


def _mean_or_none(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else UNDEFINED


class PreparedEvaluation:
    """Configuration-independent state for repeated evaluation of one dump."""

    def __init__(self, dets: RawDetectionSet, gt: GroundTruthSet, head: HeadSpec, spec: MetricSpec):
        if dets.header.head_spec_digest != head_digest(head):
            raise ValidationError("detection dump is bound to a different head")
        self.spec = spec
        self.head = head
        self.categories = gt.category_ids
        self.anchor_index = {a: i for i, a in enumerate(head.anchor_ids)}
        anchor_index = self.anchor_index
        self.num_anchors = len(anchor_index)

        records = [
            (idx, rec)
            for idx, rec in enumerate(dets.records)
            if rec.score >= spec.nms_score_floor
        ]
        n = len(records)
        self.scores = np.array([r.score for _, r in records], dtype=np.float64)
        self.boxes = np.array([r.bbox for _, r in records], dtype=np.float64).reshape(n, 4)
        self.det_areas = self.boxes[:, 2] * self.boxes[:, 3]
        self.anchor_idx = np.array(
            [anchor_index[r.anchor] for _, r in records], dtype=np.int64
        )
        self.rec_idx = np.array([idx for idx, _ in records], dtype=np.int64)
        self.image_ids = np.array([r.image_id for _, r in records], dtype=np.int64)
        self.categories_arr = np.array([r.category_id for _, r in records], dtype=np.int64)

        # (image, class) -> candidate rows sorted by (-score, anchor, input)
        self.groups: dict[tuple[int, int], np.ndarray] = {}
        order = np.lexsort((self.rec_idx, self.anchor_idx, -self.scores))
        for row in order:
            key = (int(self.image_ids[row]), int(self.categories_arr[row]))
            self.groups.setdefault(key, []).append(row)
        self.groups = {k: np.array(v, dtype=np.int64) for k, v in self.groups.items()}

        # ground truth per (image, class), annotation order preserved
        self.gt_boxes: dict[tuple[int, int], np.ndarray] = {}
        self.gt_crowd: dict[tuple[int, int], np.ndarray] = {}
        self.gt_areas: dict[tuple[int, int], np.ndarray] = {}
        per_key: dict[tuple[int, int], list[Annotation]] = {}
        for ann in gt.annotations:
            per_key.setdefault((ann.image_id, ann.category_id), []).append(ann)
        for key, anns in per_key.items():
            self.gt_boxes[key] = np.array([a.bbox for a in anns], dtype=np.float64).reshape(-1, 4)
            self.gt_crowd[key] = np.array([a.iscrowd for a in anns], dtype=bool)
            self.gt_areas[key] = np.array([a.area for a in anns], dtype=np.float64)

        self.image_order = [img.image_id for img in gt.images]
        self._det_iou_cache: dict[tuple[int, int], np.ndarray] = {}
        self._gt_iou_cache: dict[tuple[int, int], np.ndarray] = {}

    # -- caches ---------------------------------------------------------

    def _det_iou(self, key: tuple[int, int]) -> np.ndarray:
        cached = self._det_iou_cache.get(key)
        if cached is None:
            rows = self.groups[key]
            boxes = self.boxes[rows]
            crowd = np.zeros(len(rows), dtype=bool)
            cached = det_gt_iou_matrix(boxes, boxes, crowd)
            self._det_iou_cache[key] = cached
        return cached

    def _gt_iou(self, key: tuple[int, int]) -> np.ndarray:
        cached = self._gt_iou_cache.get(key)
        if cached is None:
            rows = self.groups.get(key)
            boxes = self.boxes[rows] if rows is not None else np.zeros((0, 4))
            cached = det_gt_iou_matrix(boxes, self.gt_boxes[key], self.gt_crowd[key])
            self._gt_iou_cache[key] = cached
        return cached

    # -- per-config pipeline ---------------------------------------------

    def _nms_survivors(self, config: AnchorConfiguration) -> dict[tuple[int, int], np.ndarray]:
        """Surviving rows per (image, class); positions within the group list."""
        keep_anchor = np.zeros(self.num_anchors, dtype=bool)
        for anchor in config.kept:
            keep_anchor[self.anchor_index[anchor]] = True
        spec = self.spec
        survivors_by_image: dict[int, list[tuple[float, int, int, int]]] = {}
        for key, rows in self.groups.items():
            mask = keep_anchor[self.anchor_idx[rows]]
            if not mask.any():
                continue
            positions = np.flatnonzero(mask)[: spec.pre_nms_top_k]
            iou_matrix = self._det_iou(key)
            kept_positions: list[int] = []
            for pos in positions:
                row_ious = iou_matrix[pos]
                if all(row_ious[k] <= spec.nms_iou for k in kept_positions):
                    kept_positions.append(int(pos))
            image_id = key[0]
            bucket = survivors_by_image.setdefault(image_id, [])
            for pos in kept_positions:
                row = rows[pos]
                bucket.append(
                    (-self.scores[row], int(self.anchor_idx[row]), int(self.rec_idx[row]), row)
                )
        result: dict[tuple[int, int], np.ndarray] = {}
        for image_id, entries in survivors_by_image.items():
            entries.sort()
            for neg_score, _, _, row in entries[: spec.max_detections_per_image]:
                key = (image_id, int(self.categories_arr[row]))
                result.setdefault(key, []).append(row)
        return {k: np.array(v, dtype=np.int64) for k, v in result.items()}

    def _class_metrics(
        self,
        survivors: dict[tuple[int, int], np.ndarray],
        category: int,
        bucket: str,
    ) -> tuple[list[float], list[float]] | None:
        """Per-threshold (AP, final recall) for one class and area bucket.

        Returns None when the class has no non-crowd ground truth in the
        bucket. Both ground truth and detections are restricted to the
        bucket by their own areas.
        """
        lo, hi = _BUCKETS[bucket]
        npig = 0
        image_entries = []
        for image_id in self.image_order:
            key = (image_id, category)
            gt_in = None
            if key in self.gt_boxes:
                areas = self.gt_areas[key]
                gt_in = (areas >= lo) & (areas < hi)
                npig += int((gt_in & ~self.gt_crowd[key]).sum())
            det_rows = survivors.get(key)
            if det_rows is not None and bucket != "all":
                areas = self.det_areas[det_rows]
                det_rows = det_rows[(areas >= lo) & (areas < hi)]
            if det_rows is not None and len(det_rows) == 0:
                det_rows = None
            if gt_in is not None or det_rows is not None:
                image_entries.append((key, det_rows, gt_in))
        if npig == 0:
            return None

        # global rank order across images for this class
        row_chunks = [rows for _, rows, _ in image_entries if rows is not None]
        all_rows = np.concatenate(row_chunks) if row_chunks else np.zeros(0, dtype=np.int64)
        rank = np.lexsort((self.rec_idx[all_rows], self.anchor_idx[all_rows], -self.scores[all_rows]))

        # per-image det x gt IoU submatrices, independent of the threshold
        matchable: list[tuple[int, np.ndarray | None, np.ndarray | None]] = []
        for key, det_rows, gt_in in image_entries:
            if det_rows is None:
                continue
            if gt_in is not None and gt_in.any():
                group_position = {int(r): i for i, r in enumerate(self.groups[key])}
                det_positions = [group_position[int(r)] for r in det_rows]
                sub = self._gt_iou(key)[np.ix_(det_positions, np.flatnonzero(gt_in))]
                matchable.append((len(det_rows), sub, self.gt_crowd[key][gt_in]))
            else:
                matchable.append((len(det_rows), None, None))

        aps: list[float] = []
        recalls: list[float] = []
        for threshold in self.spec.iou_thresholds:
            tp = np.zeros(len(all_rows), dtype=bool)
            ignored = np.zeros(len(all_rows), dtype=bool)
            offset = 0
            for count, sub, crowd in matchable:
                if sub is not None:
                    img_tp, img_ignored = _match_flags(sub, crowd, threshold)
                    tp[offset : offset + count] = img_tp
                    ignored[offset : offset + count] = img_ignored
                offset += count
            ap, recall = interpolated_ap(tp[rank], ignored[rank], npig)
            aps.append(ap)
            recalls.append(recall)
        return aps, recalls

    def accuracy(self, config: AnchorConfiguration) -> float:
        """Primary accuracy (mean AP over classes and thresholds) only."""
        survivors = self._nms_survivors(config)
        per_threshold: list[float] = []
        for category in self.categories:
            metrics = self._class_metrics(survivors, category, "all")
            if metrics is not None:
                per_threshold.extend(metrics[0])
        mean = _mean_or_none(per_threshold)
        return 0.0 if mean is None else mean

    def evaluate(self, config: AnchorConfiguration) -> EvalResult:
        survivors = self._nms_survivors(config)
        thresholds = self.spec.iou_thresholds
        all_aps: list[list[float]] = []
        per_class_ap: dict[int, float | None] = {}
        stratified: dict[str, tuple[list[float], list[float]]] = {
            b: ([], []) for b in ("small", "medium", "large")
        }
        for category in self.categories:
            metrics = self._class_metrics(survivors, category, "all")
            if metrics is None:
                per_class_ap[category] = UNDEFINED
            else:
                all_aps.append(metrics[0])
                per_class_ap[category] = float(np.mean(metrics[0]))
            for bucket in ("small", "medium", "large"):
                bucket_metrics = self._class_metrics(survivors, category, bucket)
                if bucket_metrics is not None:
                    stratified[bucket][0].extend(bucket_metrics[0])
                    stratified[bucket][1].extend(bucket_metrics[1])

        def threshold_mean(target: float) -> float | None:
            if target not in thresholds:
                return UNDEFINED
            column = thresholds.index(target)
            values = [aps[column] for aps in all_aps]
            return _mean_or_none(values)

        flat = [ap for aps in all_aps for ap in aps]
        return EvalResult(
            map=_mean_or_none(flat),
            ap50=threshold_mean(0.50),
            ap75=threshold_mean(0.75),
            ap_s=_mean_or_none(stratified["small"][0]),
            ap_m=_mean_or_none(stratified["medium"][0]),
            ap_l=_mean_or_none(stratified["large"][0]),
            ar_s=_mean_or_none(stratified["small"][1]),
            ar_m=_mean_or_none(stratified["medium"][1]),
            ar_l=_mean_or_none(stratified["large"][1]),
            per_class_ap=per_class_ap,
        )


def evaluate(
    dets: RawDetectionSet,
    gt: GroundTruthSet,
    config: AnchorConfiguration,
    spec: MetricSpec,
) -> EvalResult:
    """Score one anchor configuration on a cached detection dump."""
    prepared = PreparedEvaluation(dets, gt, config.head, spec)
    return prepared.evaluate(config)
