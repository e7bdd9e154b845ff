"""Writers for the anchorprune wire formats.

These mirror the published interface contract: the head spec JSON document
(field names exact), the line-delimited detection dump with its binding
header, and the digest recipe (SHA-256 over the canonical head document:
sorted keys, compact separators, UTF-8). The exporter deliberately does not
import the consumer package; the formats are the boundary.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

DETS_FORMAT = "anchor-dets/v1"


def head_digest(head_doc: dict) -> str:
    canonical = json.dumps(head_doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_head(head_doc: dict, path: Path) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(head_doc, indent=2) + "\n")
    return head_digest(head_doc)


def write_detections(records, digest: str, score_floor: float, path: Path) -> int:
    """Stream records to a dump file; returns the record count."""
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as out:
        header = {
            "format": DETS_FORMAT,
            "head_spec_digest": digest,
            "score_floor": score_floor,
        }
        out.write(json.dumps(header) + "\n")
        for rec in records:
            out.write(json.dumps(rec) + "\n")
            count += 1
    return count


def read_ground_truth_images(path: Path) -> list[dict]:
    """Image entries (id, width, height, optional file_name) from a COCO-style file."""
    doc = json.loads(Path(path).read_text())
    images = doc.get("images", [])
    if not images:
        raise ValueError(f"{path}: no images in ground truth")
    out = []
    for img in images:
        out.append(
            {
                "id": int(img["id"]),
                "width": int(img["width"]),
                "height": int(img["height"]),
                "file_name": img.get("file_name"),
            }
        )
    return out
