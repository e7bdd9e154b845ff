"""Deterministic synthetic instances for desk-scale verification.

The generator plants objects with log-uniform shapes and makes every anchor
within a log-shape-space radius fire on each object, with optional box
jitter, score noise and spurious detections. Cloned slots emit records
bit-identical to their source anchor, realizing exact redundancy so the
duplicate-anchor properties of the evaluator and the search can be tested
without a trained model.

Randomness comes from a counter-based generator (Philox) keyed by
(seed, image index, stream), so output never depends on generation order
and per-image work could be parallelized without changing a single byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .heads import AnchorId, AnchorShape, HeadSpec, HeadStyle, LayerSpec
from .ingest import (
    Annotation,
    Category,
    DetectionRecord,
    DumpHeader,
    DETS_FORMAT,
    GroundTruthSet,
    ImageInfo,
    RawDetectionSet,
)
from .heads import head_digest

_STREAM_OBJECTS = 0
_STREAM_DETECTIONS = 1
_STREAM_FALSE_POSITIVES = 2


@dataclass(frozen=True)
class SynthClass:
    """Object class with log-uniform width/height ranges in pixels."""

    category_id: int
    name: str
    width_range: tuple[float, float] = (20.0, 120.0)
    height_range: tuple[float, float] = (20.0, 120.0)

    def __post_init__(self):
        for lo, hi in (self.width_range, self.height_range):
            if not (0 < lo <= hi):
                raise ValidationError(f"invalid shape range ({lo}, {hi})")


@dataclass(frozen=True)
class ScoreModel:
    """Detection score: base minus a penalty per unit shape distance, plus noise."""

    base: float = 0.9
    distance_penalty: float = 0.3
    noise: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.base <= 1.0) or self.distance_penalty < 0 or self.noise < 0:
            raise ValidationError(f"invalid score model {self}")


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    num_images: int
    anchors: tuple[tuple[int, int, AnchorShape], ...]
    image_size: tuple[int, int] = (300, 300)
    objects_per_image: tuple[int, int] = (1, 4)
    classes: tuple[SynthClass, ...] = (SynthClass(1, "object"),)
    responsiveness_radius: float = 0.6
    localization_noise: float = 0.0
    score_model: ScoreModel = field(default_factory=ScoreModel)
    false_positive_rate: float = 0.0
    duplicate_slots: tuple[tuple[AnchorId, AnchorId], ...] = ()
    score_floor: float = 0.01

    def __post_init__(self):
        if self.num_images < 0:
            raise ValidationError("num_images must be >= 0")
        if not self.anchors:
            raise ValidationError("at least one anchor required")
        if self.responsiveness_radius < 0 or self.localization_noise < 0:
            raise ValidationError("radius and noise must be >= 0")
        if self.false_positive_rate < 0:
            raise ValidationError("false_positive_rate must be >= 0")
        if not (0.0 < self.score_floor <= 1.0):
            raise ValidationError("score_floor must lie in (0, 1]")
        lo, hi = self.objects_per_image
        if not (0 <= lo <= hi):
            raise ValidationError(f"invalid objects_per_image range ({lo}, {hi})")
        if not self.classes:
            raise ValidationError("at least one class required")
        ids = {AnchorId(layer, slot) for layer, slot, _ in self.anchors}
        if len(ids) != len(self.anchors):
            raise ValidationError("duplicate (layer, slot) pairs in anchors")
        sources = {src for src, _ in self.duplicate_slots}
        clones = {clone for _, clone in self.duplicate_slots}
        for src, clone in self.duplicate_slots:
            if src not in ids or clone not in ids:
                raise ValidationError(f"duplicate_slots pair ({src}, {clone}) not in head")
            if src == clone:
                raise ValidationError("clone must differ from its source")
        if sources & clones:
            raise ValidationError("a clone cannot be the source of another clone")
        if len(clones) != len(self.duplicate_slots):
            raise ValidationError("an anchor can be cloned from only one source")


_SPEC_KEYS = {
    "seed", "num_images", "anchors", "image_size", "objects_per_image",
    "classes", "responsiveness_radius", "localization_noise", "score_model",
    "false_positive_rate", "duplicate_slots", "score_floor",
}


def synth_spec_from_json(data: bytes | str) -> SynthSpec:
    """Parse a SynthSpec JSON document (see README for the schema)."""
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as err:
        raise ValidationError(f"malformed JSON: {err}", "synth spec") from None
    unknown = set(doc) - _SPEC_KEYS
    if unknown:
        raise ValidationError(f"unknown fields {sorted(unknown)}", "synth spec")
    try:
        anchors = tuple(
            (a["layer"], a["slot"], AnchorShape(a["scale"], a["ratio"]))
            for a in doc["anchors"]
        )
        classes = tuple(
            SynthClass(
                category_id=c["id"],
                name=c.get("name", f"class-{c['id']}"),
                width_range=tuple(c.get("width_range", (20.0, 120.0))),
                height_range=tuple(c.get("height_range", (20.0, 120.0))),
            )
            for c in doc.get("classes", [{"id": 1, "name": "object"}])
        )
        score_doc = doc.get("score_model", {})
        spec = SynthSpec(
            seed=int(doc["seed"]),
            num_images=int(doc["num_images"]),
            anchors=anchors,
            image_size=tuple(doc.get("image_size", (300, 300))),
            objects_per_image=tuple(doc.get("objects_per_image", (1, 4))),
            classes=classes,
            responsiveness_radius=float(doc.get("responsiveness_radius", 0.6)),
            localization_noise=float(doc.get("localization_noise", 0.0)),
            score_model=ScoreModel(
                base=float(score_doc.get("base", 0.9)),
                distance_penalty=float(score_doc.get("distance_penalty", 0.3)),
                noise=float(score_doc.get("noise", 0.0)),
            ),
            false_positive_rate=float(doc.get("false_positive_rate", 0.0)),
            duplicate_slots=tuple(
                (AnchorId(*src), AnchorId(*clone))
                for src, clone in doc.get("duplicate_slots", [])
            ),
            score_floor=float(doc.get("score_floor", 0.01)),
        )
    except (KeyError, TypeError) as err:
        raise ValidationError(f"bad synth spec: {err!r}", "synth spec") from None
    return spec


def synth_spec_to_dict(spec: SynthSpec) -> dict:
    return {
        "seed": spec.seed,
        "num_images": spec.num_images,
        "image_size": list(spec.image_size),
        "objects_per_image": list(spec.objects_per_image),
        "classes": [
            {
                "id": c.category_id,
                "name": c.name,
                "width_range": list(c.width_range),
                "height_range": list(c.height_range),
            }
            for c in spec.classes
        ],
        "anchors": [
            {"layer": layer, "slot": slot, "scale": shape.scale, "ratio": shape.aspect_ratio}
            for layer, slot, shape in spec.anchors
        ],
        "responsiveness_radius": spec.responsiveness_radius,
        "localization_noise": spec.localization_noise,
        "score_model": {
            "base": spec.score_model.base,
            "distance_penalty": spec.score_model.distance_penalty,
            "noise": spec.score_model.noise,
        },
        "false_positive_rate": spec.false_positive_rate,
        "duplicate_slots": [
            [[src.layer_index, src.slot_index], [clone.layer_index, clone.slot_index]]
            for src, clone in spec.duplicate_slots
        ],
        "score_floor": spec.score_floor,
    }


def _rng(seed: int, image_index: int, stream: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, 0x616E6368], dtype=np.uint64)
    counter = np.array([0, 0, image_index, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def _log_shape_distance(w: float, h: float, shape: AnchorShape) -> float:
    dw = math.log(w) - math.log(shape.width)
    dh = math.log(h) - math.log(shape.height)
    return math.hypot(dw, dh)


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    if lo == hi:
        return lo
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def build_head(spec: SynthSpec) -> HeadSpec:
    """Head geometry implied by the spec's anchors and image size.

    Strides double from 8 per layer index; feature maps are the image size
    divided by the stride, rounded up; channels are fixed at 256.
    """
    width, height = spec.image_size
    by_layer: dict[int, list[tuple[int, AnchorShape]]] = {}
    for layer, slot, shape in spec.anchors:
        by_layer.setdefault(layer, []).append((slot, shape))
    layers = []
    for layer_index in sorted(by_layer):
        stride = 8 * (2 ** layer_index)
        layers.append(
            LayerSpec(
                layer_index=layer_index,
                height=max(1, math.ceil(height / stride)),
                width=max(1, math.ceil(width / stride)),
                stride=stride,
                in_channels=256,
                anchors=tuple(sorted(by_layer[layer_index])),
            )
        )
    return HeadSpec(
        style=HeadStyle.PER_LAYER_CONV,
        num_classes=len(spec.classes),
        layers=tuple(layers),
    )


def generate(spec: SynthSpec) -> tuple[HeadSpec, GroundTruthSet, RawDetectionSet]:
    """Deterministic synthetic (head, ground truth, detection dump) triple."""
    head = build_head(spec)
    width, height = spec.image_size
    clone_of = {clone: src for src, clone in spec.duplicate_slots}
    real_anchors = [a for a in head.anchor_ids if a not in clone_of]
    shape_of = {AnchorId(layer, slot): shape for layer, slot, shape in spec.anchors}

    images = []
    annotations = []
    records = []
    next_annotation_id = 1
    for image_index in range(spec.num_images):
        image_id = image_index + 1
        images.append(ImageInfo(image_id, width, height))

        obj_rng = _rng(spec.seed, image_index, _STREAM_OBJECTS)
        lo, hi = spec.objects_per_image
        count = int(obj_rng.integers(lo, hi + 1))
        objects = []
        for _ in range(count):
            cls = spec.classes[int(obj_rng.integers(len(spec.classes)))]
            w = _log_uniform(obj_rng, *cls.width_range)
            h = _log_uniform(obj_rng, *cls.height_range)
            w = min(w, float(width))
            h = min(h, float(height))
            x = float(obj_rng.uniform(0.0, width - w))
            y = float(obj_rng.uniform(0.0, height - h))
            objects.append((cls, x, y, w, h))
            annotations.append(
                Annotation(
                    annotation_id=next_annotation_id,
                    image_id=image_id,
                    category_id=cls.category_id,
                    bbox=(x, y, w, h),
                    area=w * h,
                )
            )
            next_annotation_id += 1

        det_rng = _rng(spec.seed, image_index, _STREAM_DETECTIONS)
        fp_rng = _rng(spec.seed, image_index, _STREAM_FALSE_POSITIVES)
        per_anchor: dict[AnchorId, list[DetectionRecord]] = {a: [] for a in head.anchor_ids}
        for anchor in real_anchors:
            shape = shape_of[anchor]
            for cls, x, y, w, h in objects:
                distance = _log_shape_distance(w, h, shape)
                if distance > spec.responsiveness_radius:
                    continue
                if spec.localization_noise > 0:
                    jitter = det_rng.normal(0.0, spec.localization_noise, size=4)
                    bx = x + jitter[0] * w
                    by = y + jitter[1] * h
                    bw = max(w * (1.0 + jitter[2]), 1e-3)
                    bh = max(h * (1.0 + jitter[3]), 1e-3)
                else:
                    bx, by, bw, bh = x, y, w, h
                score = spec.score_model.base - spec.score_model.distance_penalty * distance
                if spec.score_model.noise > 0:
                    score += float(det_rng.normal(0.0, spec.score_model.noise))
                score = min(score, 1.0)
                if score < spec.score_floor:
                    continue
                per_anchor[anchor].append(
                    DetectionRecord(image_id, anchor, cls.category_id, score, (bx, by, bw, bh))
                )
            if spec.false_positive_rate > 0:
                shape = shape_of[anchor]
                for _ in range(int(fp_rng.poisson(spec.false_positive_rate))):
                    fw = min(shape.width * float(np.exp(fp_rng.normal(0.0, 0.2))), float(width))
                    fh = min(shape.height * float(np.exp(fp_rng.normal(0.0, 0.2))), float(height))
                    fx = float(fp_rng.uniform(0.0, width - fw))
                    fy = float(fp_rng.uniform(0.0, height - fh))
                    cls = spec.classes[int(fp_rng.integers(len(spec.classes)))]
                    span = max(spec.score_model.base * 0.5 - spec.score_floor, 0.0)
                    score = spec.score_floor + float(fp_rng.uniform(0.0, span))
                    per_anchor[anchor].append(
                        DetectionRecord(image_id, anchor, cls.category_id, score, (fx, fy, fw, fh))
                    )
        for clone, src in clone_of.items():
            per_anchor[clone] = [
                DetectionRecord(rec.image_id, clone, rec.category_id, rec.score, rec.bbox)
                for rec in per_anchor[src]
            ]
        for anchor in head.anchor_ids:
            records.extend(per_anchor[anchor])

    gt = GroundTruthSet(
        images=tuple(images),
        categories=tuple(Category(c.category_id, c.name) for c in spec.classes),
        annotations=tuple(annotations),
    )
    header = DumpHeader(DETS_FORMAT, head_digest(head), spec.score_floor)
    return head, gt, RawDetectionSet(header, tuple(records))


@dataclass(frozen=True)
class AnchorHistogram:
    anchor: AnchorId
    shape: AnchorShape | None
    counts: np.ndarray
    width_marginal: np.ndarray
    height_marginal: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ShapeDistribution:
    """Per-anchor 2-D histograms of predicted box shapes in log space."""

    log_width_edges: np.ndarray
    log_height_edges: np.ndarray
    anchors: tuple[AnchorHistogram, ...]

    def to_dict(self) -> dict:
        return {
            "log_width_edges": self.log_width_edges.tolist(),
            "log_height_edges": self.log_height_edges.tolist(),
            "anchors": [
                {
                    "layer": h.anchor.layer_index,
                    "slot": h.anchor.slot_index,
                    "scale": h.shape.scale if h.shape else None,
                    "ratio": h.shape.aspect_ratio if h.shape else None,
                    "counts": h.counts.tolist(),
                    "width_marginal": h.width_marginal.tolist(),
                    "height_marginal": h.height_marginal.tolist(),
                }
                for h in self.anchors
            ],
        }


def shape_distribution(
    dets: RawDetectionSet, head: HeadSpec, bins: int = 24
) -> ShapeDistribution:
    """Histogram the shapes of the boxes each anchor produced."""
    if dets.header.head_spec_digest != head_digest(head):
        raise ValidationError("detection dump is bound to a different head")
    by_anchor: dict[AnchorId, list[tuple[float, float]]] = {a: [] for a in head.anchor_ids}
    log_w, log_h = [], []
    for rec in dets.records:
        w = max(rec.bbox[2], 1e-6)
        h = max(rec.bbox[3], 1e-6)
        by_anchor[rec.anchor].append((math.log(w), math.log(h)))
        log_w.append(math.log(w))
        log_h.append(math.log(h))
    if log_w:
        w_lo, w_hi = min(log_w), max(log_w)
        h_lo, h_hi = min(log_h), max(log_h)
    else:
        w_lo = h_lo = 0.0
        w_hi = h_hi = 1.0
    pad = 1e-6
    w_edges = np.linspace(w_lo - pad, w_hi + pad, bins + 1)
    h_edges = np.linspace(h_lo - pad, h_hi + pad, bins + 1)
    histograms = []
    for anchor in head.anchor_ids:
        points = by_anchor[anchor]
        if points:
            ws, hs = zip(*points)
        else:
            ws, hs = (), ()
        counts, _, _ = np.histogram2d(ws, hs, bins=(w_edges, h_edges))
        counts = counts.astype(np.int64)
        histograms.append(
            AnchorHistogram(
                anchor=anchor,
                shape=head.shape_of(anchor),
                counts=counts,
                width_marginal=counts.sum(axis=1),
                height_marginal=counts.sum(axis=0),
            )
        )
    return ShapeDistribution(w_edges, h_edges, tuple(histograms))
