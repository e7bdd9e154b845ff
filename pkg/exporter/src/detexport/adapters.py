"""Torchvision detector adapters: raw head outputs with anchor attribution.

Both supported families expose the same forward pieces (transform, backbone,
head, anchor_generator, box_coder). The concatenated per-image head output
is laid out level by level in (H, W, A) order, so within a level the slot of
row i is simply i modulo the level's anchors-per-location; that recovers the
(layer, slot) tag for every prediction.

SSD-style heads score with a softmax that includes a background column 0;
RetinaNet-style heads score with per-class sigmoids whose column 0 is
conventionally unused. Column 0 is skipped in both cases and the column
index is exported as the category id.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np
import torch
import torch.nn.functional as F
from torchvision.models import detection as tv_detection
from torchvision.models.detection.transform import resize_boxes


class UnsupportedArchitectureError(ValueError):
    pass


_SSD_BUILDERS = {
    "ssd300": tv_detection.ssd300_vgg16,
    "ssdlite320": tv_detection.ssdlite320_mobilenet_v3_large,
}
_RETINANET_BUILDERS = {
    "retinanet": tv_detection.retinanet_resnet50_fpn,
}


def supported_models() -> list[str]:
    return sorted(_SSD_BUILDERS) + sorted(_RETINANET_BUILDERS)


def build_model(family: str, num_classes: int | None, checkpoint: str | None):
    builders = {**_SSD_BUILDERS, **_RETINANET_BUILDERS}
    if family not in builders:
        raise UnsupportedArchitectureError(
            f"unsupported model {family!r}; known: {', '.join(supported_models())}"
        )
    kwargs = {"weights": None, "weights_backbone": None}
    if num_classes is not None:
        kwargs["num_classes"] = num_classes
    model = builders[family](**kwargs)
    if checkpoint:
        state = torch.load(checkpoint, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model


def _is_ssd_style(family: str) -> bool:
    return family in _SSD_BUILDERS


@torch.no_grad()
def raw_forward(model, image: torch.Tensor):
    """(image_list, per-level features, head outputs, anchors) for one image."""
    image_list, _ = model.transform([image], None)
    features = model.backbone(image_list.tensors)
    if isinstance(features, torch.Tensor):
        features = OrderedDict([("0", features)])
    feats = list(features.values())
    head_outputs = model.head(feats)
    anchors = model.anchor_generator(image_list, feats)
    return image_list, feats, head_outputs, anchors


def level_layout(model, feats, anchors_one_image) -> dict:
    """Per-level geometry: (H, W), anchors per location, channels, cell shapes."""
    per_location = model.anchor_generator.num_anchors_per_location()
    if len(per_location) != len(feats):
        raise UnsupportedArchitectureError(
            "anchor generator levels do not match feature levels"
        )
    shapes = [(f.shape[-2], f.shape[-1]) for f in feats]
    channels = [int(f.shape[1]) for f in feats]
    cell_shapes = []
    offset = 0
    for (h, w), a in zip(shapes, per_location):
        cell = anchors_one_image[offset : offset + a]
        wh = [(float(x2 - x1), float(y2 - y1)) for x1, y1, x2, y2 in cell.tolist()]
        cell_shapes.append(wh)
        offset += h * w * a
    return {
        "shapes": shapes,
        "per_location": [int(a) for a in per_location],
        "channels": channels,
        "cell_shapes": cell_shapes,
    }


def head_doc(model, family: str, layout: dict, input_hw: tuple[int, int]) -> dict:
    """The head-spec JSON document implied by the model at this input size."""
    num_classes = _score_width(model, family)
    layers = []
    for index, ((h, w), a, ch, cells) in enumerate(
        zip(layout["shapes"], layout["per_location"], layout["channels"], layout["cell_shapes"])
    ):
        anchors = []
        for slot, (bw, bh) in enumerate(cells):
            bw = max(bw, 1e-3)
            bh = max(bh, 1e-3)
            anchors.append(
                {"slot": slot, "scale": float(math.sqrt(bw * bh)), "ratio": float(bw / bh)}
            )
        layers.append(
            {
                "index": index,
                "h": int(h),
                "w": int(w),
                "stride": max(1, round(input_hw[0] / h)),
                "in_channels": ch,
                "anchors": anchors,
            }
        )
    doc = {
        "style": "per_layer_conv" if _is_ssd_style(family) else "shared_tower",
        "num_classes": int(num_classes),
        "box_outputs": 4,
        "kernel": 3,
        "layers": layers,
    }
    if not _is_ssd_style(family):
        cls_head = model.head.classification_head
        first_conv = next(
            m for m in cls_head.conv.modules() if isinstance(m, torch.nn.Conv2d)
        )
        doc["tower"] = {
            "depth": len(cls_head.conv),
            "width": int(first_conv.out_channels),
            "subnets": 2,
        }
    return doc


def _score_width(model, family: str) -> int:
    head = model.head.classification_head
    if _is_ssd_style(family):
        return head.num_columns
    return head.num_classes


def image_scores_and_boxes(model, family: str, head_outputs, anchors, image_list, original_hw):
    """Decoded boxes in the original pixel frame plus the per-class scores.

    Boxes are clipped to the resized image like the framework's own
    postprocess, then rescaled to the annotation frame.
    """
    from torchvision.ops import boxes as box_ops

    regression = head_outputs["bbox_regression"][0]
    logits = head_outputs["cls_logits"][0]
    boxes = model.box_coder.decode_single(regression, anchors[0])
    boxes = box_ops.clip_boxes_to_image(boxes, image_list.image_sizes[0])
    boxes = resize_boxes(boxes, image_list.image_sizes[0], original_hw)
    if _is_ssd_style(family):
        scores = F.softmax(logits, dim=-1)
    else:
        scores = torch.sigmoid(logits)
    return boxes.numpy(), scores.numpy()


def attribute_rows(layout: dict) -> tuple[np.ndarray, np.ndarray]:
    """(layer, slot) arrays aligned with the concatenated head output rows."""
    layers = []
    slots = []
    for index, ((h, w), a) in enumerate(zip(layout["shapes"], layout["per_location"])):
        count = h * w * a
        layers.append(np.full(count, index, dtype=np.int64))
        slots.append(np.tile(np.arange(a, dtype=np.int64), h * w))
    return np.concatenate(layers), np.concatenate(slots)
