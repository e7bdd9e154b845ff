"""Parsing and validation of ground-truth annotations and detection dumps.

Ground truth is a strict subset of COCO annotation JSON, so real dataset
files load unmodified (extra COCO keys such as "info" are ignored).
Detections are line-delimited JSON: a header line binding the dump to a head
spec digest and a score floor, then one decoded pre-NMS record per line,
each tagged with the (layer, slot) anchor that produced it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

from .errors import ValidationError
from .heads import AnchorId, HeadSpec, head_digest

DETS_FORMAT = "anchor-dets/v1"

SMALL_AREA = 32.0 ** 2
LARGE_AREA = 96.0 ** 2


def area_bucket(area: float) -> str:
    if area < SMALL_AREA:
        return "small"
    if area < LARGE_AREA:
        return "medium"
    return "large"


@dataclass(frozen=True)
class ImageInfo:
    image_id: int
    width: int
    height: int


@dataclass(frozen=True)
class Category:
    category_id: int
    name: str


@dataclass(frozen=True)
class Annotation:
    annotation_id: int
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]
    area: float
    iscrowd: bool = False


@dataclass(frozen=True)
class GroundTruthSet:
    images: tuple[ImageInfo, ...]
    categories: tuple[Category, ...]
    annotations: tuple[Annotation, ...]

    def __post_init__(self):
        image_ids = [img.image_id for img in self.images]
        cat_ids = [cat.category_id for cat in self.categories]
        ann_ids = [ann.annotation_id for ann in self.annotations]
        for name, ids in (("image", image_ids), ("category", cat_ids), ("annotation", ann_ids)):
            if len(ids) != len(set(ids)):
                raise ValidationError(f"duplicate {name} ids")
        images = set(image_ids)
        cats = set(cat_ids)
        for i, ann in enumerate(self.annotations):
            locus = f"annotations[{i}] (id {ann.annotation_id})"
            if ann.image_id not in images:
                raise ValidationError(f"unknown image_id {ann.image_id}", locus)
            if ann.category_id not in cats:
                raise ValidationError(f"unknown category_id {ann.category_id}", locus)
            if ann.bbox[2] < 0 or ann.bbox[3] < 0:
                raise ValidationError(f"negative bbox extent {ann.bbox}", locus)

    @property
    def image_ids(self) -> frozenset[int]:
        return frozenset(img.image_id for img in self.images)

    @property
    def category_ids(self) -> tuple[int, ...]:
        return tuple(sorted(cat.category_id for cat in self.categories))


@dataclass(frozen=True)
class DetectionRecord:
    image_id: int
    anchor: AnchorId
    category_id: int
    score: float
    bbox: tuple[float, float, float, float]


@dataclass(frozen=True)
class DumpHeader:
    format_version: str
    head_spec_digest: str
    score_floor: float


@dataclass(frozen=True)
class RawDetectionSet:
    """Cached pre-NMS detections bound to a head and a ground-truth set."""

    header: DumpHeader
    records: tuple[DetectionRecord, ...]


def _require(doc: dict, key: str, locus: str):
    if key not in doc:
        raise ValidationError(f"missing field {key!r}", locus)
    return doc[key]


def _bbox(raw, locus: str) -> tuple[float, float, float, float]:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ValidationError(f"bbox must be [x, y, w, h], got {raw!r}", locus)
    try:
        return tuple(float(v) for v in raw)
    except (TypeError, ValueError):
        raise ValidationError(f"non-numeric bbox {raw!r}", locus) from None


def parse_ground_truth(data: bytes | str) -> GroundTruthSet:
    """Parse and fully validate a COCO-style ground-truth document.

    Missing "area" defaults to w*h; missing "iscrowd" defaults to false.
    """
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as err:
        raise ValidationError(f"malformed JSON: {err}", "ground truth") from None
    if not isinstance(doc, dict):
        raise ValidationError("ground truth must be a JSON object")

    images = []
    for i, img in enumerate(doc.get("images", [])):
        locus = f"images[{i}]"
        images.append(
            ImageInfo(
                image_id=int(_require(img, "id", locus)),
                width=int(_require(img, "width", locus)),
                height=int(_require(img, "height", locus)),
            )
        )
    categories = [
        Category(int(_require(cat, "id", f"categories[{i}]")), str(cat.get("name", "")))
        for i, cat in enumerate(doc.get("categories", []))
    ]
    annotations = []
    for i, ann in enumerate(doc.get("annotations", [])):
        locus = f"annotations[{i}]"
        bbox = _bbox(_require(ann, "bbox", locus), locus)
        area = ann.get("area")
        annotations.append(
            Annotation(
                annotation_id=int(_require(ann, "id", locus)),
                image_id=int(_require(ann, "image_id", locus)),
                category_id=int(_require(ann, "category_id", locus)),
                bbox=bbox,
                area=float(area) if area is not None else bbox[2] * bbox[3],
                iscrowd=bool(ann.get("iscrowd", False)),
            )
        )
    return GroundTruthSet(tuple(images), tuple(categories), tuple(annotations))


def ground_truth_to_json(gt: GroundTruthSet) -> str:
    doc = {
        "images": [
            {"id": img.image_id, "width": img.width, "height": img.height}
            for img in gt.images
        ],
        "annotations": [
            {
                "id": ann.annotation_id,
                "image_id": ann.image_id,
                "category_id": ann.category_id,
                "bbox": list(ann.bbox),
                "area": ann.area,
                "iscrowd": int(ann.iscrowd),
            }
            for ann in gt.annotations
        ],
        "categories": [
            {"id": cat.category_id, "name": cat.name} for cat in gt.categories
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def parse_detections(data: bytes | str, head: HeadSpec, gt: GroundTruthSet) -> RawDetectionSet:
    """Parse a detection dump and bind it to `head` and `gt`.

    The header digest is checked against `head` before any record is read;
    record order is preserved.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = data.splitlines()
    if not lines:
        raise ValidationError("empty dump", "dets:1")
    try:
        header_doc = json.loads(lines[0])
    except json.JSONDecodeError as err:
        raise ValidationError(f"malformed header: {err}", "dets:1") from None
    if header_doc.get("format") != DETS_FORMAT:
        raise ValidationError(
            f"expected format {DETS_FORMAT!r}, got {header_doc.get('format')!r}", "dets:1"
        )
    digest = str(_require(header_doc, "head_spec_digest", "dets:1"))
    expected = head_digest(head)
    if digest != expected:
        raise ValidationError(
            f"dump is bound to head {digest[:12]}..., expected {expected[:12]}...", "dets:1"
        )
    score_floor = float(_require(header_doc, "score_floor", "dets:1"))
    header = DumpHeader(DETS_FORMAT, digest, score_floor)

    valid_anchors = set(head.anchor_ids)
    valid_images = gt.image_ids
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        locus = f"dets:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as err:
            raise ValidationError(f"malformed record: {err}", locus) from None
        anchor = AnchorId(int(_require(rec, "layer", locus)), int(_require(rec, "slot", locus)))
        if anchor not in valid_anchors:
            raise ValidationError(
                f"unknown anchor (layer {anchor.layer_index}, slot {anchor.slot_index})", locus
            )
        image_id = int(_require(rec, "image_id", locus))
        if image_id not in valid_images:
            raise ValidationError(f"unknown image_id {image_id}", locus)
        score = float(_require(rec, "score", locus))
        if not (0.0 < score <= 1.0):
            raise ValidationError(f"score {score} outside (0, 1]", locus)
        if score < score_floor:
            raise ValidationError(f"score {score} below dump floor {score_floor}", locus)
        bbox = _bbox(_require(rec, "bbox", locus), locus)
        if bbox[2] < 0 or bbox[3] < 0:
            raise ValidationError(f"negative bbox extent {bbox}", locus)
        records.append(
            DetectionRecord(
                image_id=image_id,
                anchor=anchor,
                category_id=int(_require(rec, "category_id", locus)),
                score=score,
                bbox=bbox,
            )
        )
    return RawDetectionSet(header, tuple(records))


def detections_to_jsonl(dets: RawDetectionSet) -> str:
    lines = [
        json.dumps(
            {
                "format": DETS_FORMAT,
                "head_spec_digest": dets.header.head_spec_digest,
                "score_floor": dets.header.score_floor,
            }
        )
    ]
    for rec in dets.records:
        lines.append(
            json.dumps(
                {
                    "image_id": rec.image_id,
                    "layer": rec.anchor.layer_index,
                    "slot": rec.anchor.slot_index,
                    "category_id": rec.category_id,
                    "score": rec.score,
                    "bbox": list(rec.bbox),
                }
            )
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DatasetSummary:
    records_per_anchor: dict[AnchorId, int] = field(default_factory=dict)
    annotations_per_class: dict[int, int] = field(default_factory=dict)
    annotations_per_bucket: dict[str, int] = field(default_factory=dict)


def dataset_summary(gt: GroundTruthSet, dets: RawDetectionSet, head: HeadSpec) -> DatasetSummary:
    """Per-anchor record counts plus per-class and per-size annotation counts."""
    per_anchor = {anchor: 0 for anchor in head.anchor_ids}
    for rec in dets.records:
        per_anchor[rec.anchor] += 1
    per_class = {cat: 0 for cat in gt.category_ids}
    per_bucket = {"small": 0, "medium": 0, "large": 0}
    for ann in gt.annotations:
        per_class[ann.category_id] += 1
        per_bucket[area_bucket(ann.area)] += 1
    return DatasetSummary(per_anchor, per_class, per_bucket)
