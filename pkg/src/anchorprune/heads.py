"""Detection-head descriptions, anchor configurations and exact resource models.

A head is a set of feature-map layers, each carrying anchor slots. A
configuration is the subset of slots kept after pruning; it is the unit the
search mutates. Two resource metrics are computed exactly from a
configuration: the number of predicted bounding boxes and the multiply-add
count of the head convolutions.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .errors import ValidationError


class HeadStyle(str, Enum):
    PER_LAYER_CONV = "per_layer_conv"
    SHARED_TOWER = "shared_tower"


class NeighborMode(str, Enum):
    PER_ANCHOR = "per_anchor"
    SHARED_SLOT_OR_LAYER = "shared_slot_or_layer"


@dataclass(frozen=True, order=True)
class AnchorShape:
    """Anchor box shape: scale is sqrt(area) in input pixels, ratio is w/h."""

    scale: float
    aspect_ratio: float

    def __post_init__(self):
        if not (self.scale > 0 and self.aspect_ratio > 0):
            raise ValidationError(
                f"anchor shape must be positive, got scale={self.scale} "
                f"ratio={self.aspect_ratio}"
            )

    @property
    def width(self) -> float:
        return self.scale * math.sqrt(self.aspect_ratio)

    @property
    def height(self) -> float:
        return self.scale / math.sqrt(self.aspect_ratio)


@dataclass(frozen=True, order=True)
class AnchorId:
    layer_index: int
    slot_index: int

    def __post_init__(self):
        if self.layer_index < 0 or self.slot_index < 0:
            raise ValidationError(f"anchor id must be non-negative, got {self}")


@dataclass(frozen=True)
class LayerSpec:
    """Geometry of one anchor-bearing feature map.

    `anchors` maps slot indices to shapes; slot order within the tuple is the
    canonical slot order for the layer.
    """

    layer_index: int
    height: int
    width: int
    stride: int
    in_channels: int
    anchors: tuple[tuple[int, AnchorShape], ...] = ()

    def __post_init__(self):
        for name in ("height", "width", "stride", "in_channels"):
            if getattr(self, name) < 1:
                raise ValidationError(
                    f"layer {self.layer_index}: {name} must be >= 1"
                )
        slots = [slot for slot, _ in self.anchors]
        if len(slots) != len(set(slots)):
            raise ValidationError(
                f"layer {self.layer_index}: duplicate slot indices {slots}"
            )
        if any(slot < 0 for slot in slots):
            raise ValidationError(f"layer {self.layer_index}: negative slot index")
        object.__setattr__(self, "anchors", tuple(sorted(self.anchors)))

    @property
    def cells(self) -> int:
        return self.height * self.width

    @property
    def slot_indices(self) -> tuple[int, ...]:
        return tuple(slot for slot, _ in self.anchors)


@dataclass(frozen=True)
class TowerSpec:
    """Shared prediction tower: `subnets` parallel stacks of `depth` convs."""

    depth: int
    width: int
    subnets: int

    def __post_init__(self):
        if self.depth < 1 or self.width < 1 or self.subnets < 1:
            raise ValidationError(f"invalid tower spec {self}")


@dataclass(frozen=True)
class HeadSpec:
    """Full description of a detection head.

    `num_classes` is the number of score outputs per anchor (background
    included when the detector uses one). Shared-tower heads require the same
    slot set on every layer because the prediction convolutions are reused
    across feature maps.
    """

    style: HeadStyle
    num_classes: int
    layers: tuple[LayerSpec, ...]
    box_outputs: int = 4
    kernel: int = 3
    tower: TowerSpec | None = None

    def __post_init__(self):
        if self.num_classes < 1 or self.box_outputs < 1 or self.kernel < 1:
            raise ValidationError("num_classes, box_outputs and kernel must be >= 1")
        indices = [layer.layer_index for layer in self.layers]
        if indices != sorted(indices) or len(indices) != len(set(indices)):
            raise ValidationError(f"layer indices must be unique and sorted, got {indices}")
        if self.style == HeadStyle.SHARED_TOWER:
            if self.tower is None:
                raise ValidationError("shared_tower style requires a tower spec")
            slot_sets = {layer.slot_indices for layer in self.layers}
            if len(slot_sets) > 1:
                raise ValidationError(
                    "shared_tower style requires identical slot sets on all layers"
                )
        elif self.tower is not None:
            raise ValidationError("tower spec is only valid for shared_tower style")

    def layer(self, layer_index: int) -> LayerSpec:
        for layer in self.layers:
            if layer.layer_index == layer_index:
                return layer
        raise KeyError(layer_index)

    @property
    def anchor_ids(self) -> tuple[AnchorId, ...]:
        """All anchor ids in canonical (layer, slot) order."""
        return tuple(
            AnchorId(layer.layer_index, slot)
            for layer in self.layers
            for slot in layer.slot_indices
        )

    @property
    def num_anchors(self) -> int:
        return sum(len(layer.anchors) for layer in self.layers)

    def shape_of(self, anchor: AnchorId) -> AnchorShape:
        for slot, shape in self.layer(anchor.layer_index).anchors:
            if slot == anchor.slot_index:
                return shape
        raise KeyError(anchor)


@dataclass(frozen=True)
class AnchorConfiguration:
    """A subset of a head's anchor slots.

    The canonical encoding is a bitmask over the head's anchors in
    (layer, slot) order, rendered as fixed-width hex; all deterministic
    orderings in the toolkit derive from it.
    """

    head: HeadSpec
    kept: frozenset[AnchorId]

    def __post_init__(self):
        object.__setattr__(self, "kept", frozenset(self.kept))
        universe = set(self.head.anchor_ids)
        stray = self.kept - universe
        if stray:
            raise ValidationError(f"anchors not in head: {sorted(stray)}")

    @classmethod
    def full(cls, head: HeadSpec) -> "AnchorConfiguration":
        return cls(head, frozenset(head.anchor_ids))

    @classmethod
    def empty(cls, head: HeadSpec) -> "AnchorConfiguration":
        return cls(head, frozenset())

    @classmethod
    def from_encoding(cls, head: HeadSpec, encoding: str) -> "AnchorConfiguration":
        ids = head.anchor_ids
        width = max(1, (len(ids) + 3) // 4)
        try:
            value = int(encoding, 16)
        except ValueError:
            raise ValidationError(f"not a hex bitmask: {encoding!r}") from None
        if len(encoding) != width or value >= (1 << len(ids)):
            raise ValidationError(
                f"encoding {encoding!r} does not fit a {len(ids)}-anchor head"
            )
        kept = {
            anchor
            for position, anchor in enumerate(ids)
            if value & (1 << (len(ids) - 1 - position))
        }
        return cls(head, frozenset(kept))

    @property
    def encoding(self) -> str:
        """Hex bitmask; the first canonical anchor is the most significant bit."""
        ids = self.head.anchor_ids
        value = 0
        for position, anchor in enumerate(ids):
            if anchor in self.kept:
                value |= 1 << (len(ids) - 1 - position)
        width = max(1, (len(ids) + 3) // 4)
        return format(value, f"0{width}x")

    @property
    def kept_sorted(self) -> tuple[AnchorId, ...]:
        return tuple(anchor for anchor in self.head.anchor_ids if anchor in self.kept)

    def kept_in_layer(self, layer_index: int) -> tuple[AnchorId, ...]:
        return tuple(a for a in self.kept_sorted if a.layer_index == layer_index)

    def remove(self, anchors: Iterable[AnchorId]) -> "AnchorConfiguration":
        return AnchorConfiguration(self.head, self.kept - frozenset(anchors))

    def __len__(self) -> int:
        return len(self.kept)


def bbox_count(config: AnchorConfiguration) -> int:
    """Number of bounding boxes the head predicts per image under `config`."""
    return sum(
        len(config.kept_in_layer(layer.layer_index)) * layer.cells
        for layer in config.head.layers
    )


def head_flops(config: AnchorConfiguration) -> int:
    """Multiply-adds of the head convolutions under `config`.

    Bias terms and activations are excluded; one multiply-accumulate counts
    as one FLOP (double the result to compare against 2*MAC conventions).
    Shared-tower layers with no kept anchors contribute nothing: the head is
    simply not applied to that feature map.
    """
    head = config.head
    k2 = head.kernel * head.kernel
    outputs_per_anchor = head.num_classes + head.box_outputs
    total = 0
    for layer in head.layers:
        kept = len(config.kept_in_layer(layer.layer_index))
        if kept == 0:
            continue
        if head.style == HeadStyle.PER_LAYER_CONV:
            total += layer.cells * k2 * layer.in_channels * kept * outputs_per_anchor
        else:
            tower = head.tower
            total += tower.subnets * tower.depth * layer.cells * k2 * tower.width ** 2
            total += layer.cells * k2 * tower.width * kept * outputs_per_anchor
    return total


def neighbors(
    config: AnchorConfiguration, mode: NeighborMode = NeighborMode.PER_ANCHOR
) -> list[AnchorConfiguration]:
    """Single-removal children of `config`, in canonical order, deduplicated.

    PER_ANCHOR removes one kept anchor per child. SHARED_SLOT_OR_LAYER first
    removes each present slot index from every layer, then removes each
    layer's kept anchors wholesale (the shared-head moves: drop an anchor
    shape everywhere, or stop applying the head to one feature map).
    """
    children: list[AnchorConfiguration] = []
    seen: set[frozenset[AnchorId]] = set()

    def emit(removed: Iterable[AnchorId]):
        child = config.remove(removed)
        if child.kept not in seen:
            seen.add(child.kept)
            children.append(child)

    if mode == NeighborMode.PER_ANCHOR:
        for anchor in config.kept_sorted:
            emit([anchor])
    else:
        slots = sorted({a.slot_index for a in config.kept})
        for slot in slots:
            emit([a for a in config.kept if a.slot_index == slot])
        layers = sorted({a.layer_index for a in config.kept})
        for layer_index in layers:
            emit([a for a in config.kept if a.layer_index == layer_index])
    return children


def generate_overanchorized(
    layers: Sequence[LayerSpec],
    scales_per_layer: Sequence[Sequence[float]],
    ratios: Sequence[float] | Sequence[Sequence[float]],
    *,
    num_classes: int,
    style: HeadStyle = HeadStyle.PER_LAYER_CONV,
    box_outputs: int = 4,
    kernel: int = 3,
    tower: TowerSpec | None = None,
) -> HeadSpec:
    """Head with a dense per-layer cross product of scales and aspect ratios.

    `ratios` is either one list applied to every layer or a per-layer list of
    lists. Slots are numbered sequentially in scale-major order.
    """
    if len(scales_per_layer) != len(layers):
        raise ValidationError(
            f"expected {len(layers)} scale lists, got {len(scales_per_layer)}"
        )
    if ratios and isinstance(ratios[0], (list, tuple)):
        ratios_per_layer = [list(r) for r in ratios]
        if len(ratios_per_layer) != len(layers):
            raise ValidationError(
                f"expected {len(layers)} ratio lists, got {len(ratios_per_layer)}"
            )
    else:
        ratios_per_layer = [list(ratios)] * len(layers)
    new_layers = []
    for layer, scales, layer_ratios in zip(layers, scales_per_layer, ratios_per_layer):
        if not scales or not layer_ratios:
            raise ValidationError(f"layer {layer.layer_index}: empty scales or ratios")
        anchors = tuple(
            (slot, AnchorShape(scale, ratio))
            for slot, (scale, ratio) in enumerate(
                (s, r) for s in scales for r in layer_ratios
            )
        )
        new_layers.append(
            LayerSpec(
                layer_index=layer.layer_index,
                height=layer.height,
                width=layer.width,
                stride=layer.stride,
                in_channels=layer.in_channels,
                anchors=anchors,
            )
        )
    return HeadSpec(
        style=style,
        num_classes=num_classes,
        layers=tuple(new_layers),
        box_outputs=box_outputs,
        kernel=kernel,
        tower=tower,
    )


# --- JSON serialization -----------------------------------------------------

_HEAD_KEYS = {"style", "num_classes", "box_outputs", "kernel", "layers", "tower"}
_LAYER_KEYS = {"index", "h", "w", "stride", "in_channels", "anchors"}
_ANCHOR_KEYS = {"slot", "scale", "ratio"}
_TOWER_KEYS = {"depth", "width", "subnets"}


def head_to_dict(head: HeadSpec) -> dict:
    doc = {
        "style": head.style.value,
        "num_classes": head.num_classes,
        "box_outputs": head.box_outputs,
        "kernel": head.kernel,
        "layers": [
            {
                "index": layer.layer_index,
                "h": layer.height,
                "w": layer.width,
                "stride": layer.stride,
                "in_channels": layer.in_channels,
                "anchors": [
                    {"slot": slot, "scale": shape.scale, "ratio": shape.aspect_ratio}
                    for slot, shape in layer.anchors
                ],
            }
            for layer in head.layers
        ],
    }
    if head.tower is not None:
        doc["tower"] = {
            "depth": head.tower.depth,
            "width": head.tower.width,
            "subnets": head.tower.subnets,
        }
    return doc


def _reject_unknown(doc: dict, allowed: set[str], locus: str):
    unknown = set(doc) - allowed
    if unknown:
        raise ValidationError(f"unknown fields {sorted(unknown)}", locus)


def head_from_dict(doc: dict) -> HeadSpec:
    if not isinstance(doc, dict):
        raise ValidationError("head spec must be a JSON object")
    _reject_unknown(doc, _HEAD_KEYS, "head")
    try:
        style = HeadStyle(doc["style"])
    except (KeyError, ValueError):
        raise ValidationError(
            f"style must be one of {[s.value for s in HeadStyle]}", "head"
        ) from None
    layers = []
    for i, layer_doc in enumerate(doc.get("layers", [])):
        locus = f"head.layers[{i}]"
        _reject_unknown(layer_doc, _LAYER_KEYS, locus)
        anchors = []
        for j, anchor_doc in enumerate(layer_doc.get("anchors", [])):
            _reject_unknown(anchor_doc, _ANCHOR_KEYS, f"{locus}.anchors[{j}]")
            try:
                anchors.append(
                    (anchor_doc["slot"], AnchorShape(anchor_doc["scale"], anchor_doc["ratio"]))
                )
            except KeyError as err:
                raise ValidationError(f"missing field {err}", f"{locus}.anchors[{j}]")
        try:
            layers.append(
                LayerSpec(
                    layer_index=layer_doc["index"],
                    height=layer_doc["h"],
                    width=layer_doc["w"],
                    stride=layer_doc["stride"],
                    in_channels=layer_doc["in_channels"],
                    anchors=tuple(anchors),
                )
            )
        except KeyError as err:
            raise ValidationError(f"missing field {err}", locus)
    tower = None
    if "tower" in doc and doc["tower"] is not None:
        _reject_unknown(doc["tower"], _TOWER_KEYS, "head.tower")
        try:
            tower = TowerSpec(**doc["tower"])
        except TypeError as err:
            raise ValidationError(str(err), "head.tower")
    try:
        return HeadSpec(
            style=style,
            num_classes=doc["num_classes"],
            layers=tuple(layers),
            box_outputs=doc.get("box_outputs", 4),
            kernel=doc.get("kernel", 3),
            tower=tower,
        )
    except KeyError as err:
        raise ValidationError(f"missing field {err}", "head")


def head_to_json(head: HeadSpec) -> str:
    return json.dumps(head_to_dict(head), indent=2, sort_keys=False) + "\n"


def head_from_json(data: bytes | str) -> HeadSpec:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as err:
        raise ValidationError(f"malformed JSON: {err}", "head") from None
    return head_from_dict(doc)


def head_digest(head: HeadSpec) -> str:
    """sha256 of the canonical (sorted-keys, compact) head JSON."""
    canonical = json.dumps(head_to_dict(head), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# --- Reference geometries ---------------------------------------------------

SSD300_FEATURE_MAPS = (38, 19, 10, 5, 3, 1)
SSD300_STRIDES = (8, 16, 32, 64, 100, 300)
SSD300_IN_CHANNELS = (512, 1024, 512, 256, 256, 256)
SSD300_SCALES = (30.0, 60.0, 111.0, 162.0, 213.0, 264.0, 315.0)


def _ssd_layer_anchors(layer: int, ratios: Sequence[float], extra_square: bool):
    scale = SSD300_SCALES[layer]
    shapes = [AnchorShape(scale, 1.0)]
    if extra_square:
        shapes.append(AnchorShape(math.sqrt(scale * SSD300_SCALES[layer + 1]), 1.0))
    shapes.extend(AnchorShape(scale, r) for r in ratios)
    return tuple(enumerate(shapes))


def ssd300_head(
    num_classes: int = 81, anchors_per_layer: Sequence[int] = (4, 6, 6, 6, 4, 4)
) -> HeadSpec:
    """SSD300 head geometry.

    `anchors_per_layer` of 4 keeps ratios {1, 1+, 2, 1/2}; 6 adds {3, 1/3};
    2 keeps the two square anchors {1, 1+}. Slot order within a layer is
    square, large square, then ratio pairs, matching the usual convention.
    """
    per_count_ratios = {2: (), 4: (2.0, 0.5), 6: (2.0, 0.5, 3.0, 1.0 / 3.0)}
    layers = []
    for i, count in enumerate(anchors_per_layer):
        if count not in per_count_ratios:
            raise ValidationError(f"unsupported per-layer anchor count {count}")
        layers.append(
            LayerSpec(
                layer_index=i,
                height=SSD300_FEATURE_MAPS[i],
                width=SSD300_FEATURE_MAPS[i],
                stride=SSD300_STRIDES[i],
                in_channels=SSD300_IN_CHANNELS[i],
                anchors=_ssd_layer_anchors(i, per_count_ratios[count], extra_square=True),
            )
        )
    return HeadSpec(style=HeadStyle.PER_LAYER_CONV, num_classes=num_classes, layers=tuple(layers))


def retinanet_head(
    num_classes: int = 80,
    feature_maps: Sequence[int] = (38, 19, 10, 5, 3),
    strides: Sequence[int] = (8, 16, 32, 64, 128),
    width: int = 256,
    depth: int = 4,
    subnets: int = 2,
) -> HeadSpec:
    """RetinaNet-style shared-tower head: 3 scales x 3 ratios on every level."""
    scale_factors = (1.0, 2 ** (1.0 / 3.0), 2 ** (2.0 / 3.0))
    ratios = (0.5, 1.0, 2.0)
    layers = []
    for i, (size, stride) in enumerate(zip(feature_maps, strides)):
        base = 4.0 * stride
        anchors = tuple(
            enumerate(
                AnchorShape(base * factor, ratio)
                for factor in scale_factors
                for ratio in ratios
            )
        )
        layers.append(
            LayerSpec(
                layer_index=i,
                height=size,
                width=size,
                stride=stride,
                in_channels=width,
                anchors=anchors,
            )
        )
    return HeadSpec(
        style=HeadStyle.SHARED_TOWER,
        num_classes=num_classes,
        layers=tuple(layers),
        tower=TowerSpec(depth=depth, width=width, subnets=subnets),
    )
