"""One-shot export: run a detector over a dataset once, write the head spec
and the pre-NMS per-anchor detection dump."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import adapters
from .formats import head_digest, read_ground_truth_images, write_detections, write_head


@dataclass(frozen=True)
class ExportConfig:
    model: str
    gt: str
    images: str
    out_head: str
    out_dets: str
    checkpoint: str | None = None
    num_classes: int | None = None
    score_floor: float = 0.05

    def __post_init__(self):
        if not (0.0 < self.score_floor < 1.0):
            raise ValueError(f"score_floor must lie in (0, 1), got {self.score_floor}")


def _load_image(images_dir: Path, entry: dict) -> torch.Tensor:
    candidates = []
    if entry["file_name"]:
        candidates.append(images_dir / entry["file_name"])
    candidates.extend(
        images_dir / f"{entry['id']}{suffix}" for suffix in (".png", ".jpg", ".jpeg")
    )
    for path in candidates:
        if path.exists():
            with Image.open(path) as img:
                array = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
            return torch.from_numpy(array).permute(2, 0, 1)
    raise FileNotFoundError(f"no image file for image id {entry['id']} under {images_dir}")


def export(config: ExportConfig) -> dict:
    """Returns a small report: record count, digest, output paths."""
    entries = read_ground_truth_images(Path(config.gt))
    model = adapters.build_model(config.model, config.num_classes, config.checkpoint)
    images_dir = Path(config.images)

    head_doc = None
    layout = None
    digest = None
    records = []
    for entry in entries:
        image = _load_image(images_dir, entry)
        image_list, feats, head_outputs, anchors = adapters.raw_forward(model, image)
        this_layout = adapters.level_layout(model, feats, anchors[0])
        if head_doc is None:
            layout = this_layout
            input_hw = tuple(image_list.tensors.shape[-2:])
            head_doc = adapters.head_doc(model, config.model, layout, input_hw)
            digest = head_digest(head_doc)
            layer_of, slot_of = adapters.attribute_rows(layout)
        elif this_layout["shapes"] != layout["shapes"]:
            raise adapters.UnsupportedArchitectureError(
                f"image {entry['id']}: feature-map geometry {this_layout['shapes']} "
                f"differs from {layout['shapes']}; resize inputs uniformly"
            )
        boxes, scores = adapters.image_scores_and_boxes(
            model, config.model, head_outputs, anchors, image_list,
            (entry["height"], entry["width"]),
        )
        rows, cols = np.nonzero(scores[:, 1:] >= config.score_floor)
        cols = cols + 1  # column 0 is background / unused
        for row, col in zip(rows.tolist(), cols.tolist()):
            x1, y1, x2, y2 = boxes[row]
            records.append(
                {
                    "image_id": entry["id"],
                    "layer": int(layer_of[row]),
                    "slot": int(slot_of[row]),
                    "category_id": int(col),
                    "score": min(float(scores[row, col]), 1.0),
                    "bbox": [float(x1), float(y1), float(x2 - x1), float(y2 - y1)],
                }
            )

    written_digest = write_head(head_doc, Path(config.out_head))
    if written_digest != digest:  # guards accidental mutation of the doc
        raise RuntimeError("head digest changed between inference and writing")
    count = write_detections(records, digest, config.score_floor, Path(config.out_dets))
    return {
        "records": count,
        "images": len(entries),
        "head_spec_digest": digest,
        "out_head": str(config.out_head),
        "out_dets": str(config.out_dets),
    }
