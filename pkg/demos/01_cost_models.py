"""Exact resource models for detection heads.

Walks through the two cost metrics on reference geometries: bounding-box
counts and head FLOPs for SSD300 anchor layouts, the shared-tower FLOPs of a
RetinaNet-style head, and dense "overanchorized" variants.
"""

import math

from anchorprune import (
    AnchorConfiguration,
    bbox_count,
    generate_overanchorized,
    head_flops,
    retinanet_head,
    ssd300_head,
)
from anchorprune.heads import SSD300_SCALES

# --- bounding boxes per anchor layout --------------------------------------
# N = sum over layers of anchors x H x W; the 38x38 first map dominates.

print("SSD300 bounding-box counts")
for counts in ((6, 6, 6, 6, 6, 6), (4, 6, 6, 6, 4, 4), (2, 6, 6, 6, 4, 4)):
    head = ssd300_head(anchors_per_layer=counts)
    n = bbox_count(AnchorConfiguration.full(head))
    print(f"  anchors per layer {counts}: N = {n}")

head4 = ssd300_head(anchors_per_layer=(4,) * 6)
full4 = AnchorConfiguration.full(head4)
layer1 = AnchorConfiguration(
    head4, frozenset(a for a in head4.anchor_ids if a.layer_index == 0)
)
print(f"  first-layer share with equal anchors: {bbox_count(layer1) / bbox_count(full4):.4f}")

# --- head FLOPs (multiply-adds) ---------------------------------------------

print("\nSSD300 head FLOPs")
for counts, label in (
    ((4, 6, 6, 6, 4, 4), "baseline {1,2,1/2,1+(,3,1/3)}"),
    ((4, 4, 4, 4, 4, 4), "{1,2,1/2,1+}"),
    ((2, 2, 2, 2, 2, 2), "{1,1+}"),
):
    head = ssd300_head(anchors_per_layer=counts)
    flops = head_flops(AnchorConfiguration.full(head))
    print(f"  {label}: {flops:,} ({flops // 10**6}M)")

print("\nRetinaNet-style shared tower at 300x300 (P3-P7, width 256, depth 4)")
rn = retinanet_head()
rn_flops = head_flops(AnchorConfiguration.full(rn))
print(f"  head FLOPs: {rn_flops:,} ({rn_flops / 1e9:.2f}B)")
no_p3 = AnchorConfiguration(
    rn, frozenset(a for a in rn.anchor_ids if a.layer_index != 0)
)
print(f"  without the first pyramid level: {head_flops(no_p3) / 1e9:.2f}B "
      f"(boxes {bbox_count(AnchorConfiguration.full(rn))} -> {bbox_count(no_p3)})")

# --- overanchorized heads ----------------------------------------------------
# Dense cross products of scales x ratios, as a pruning starting point.

print("\nOveranchorized SSD variants")
base = ssd300_head()
two_scales = [
    [SSD300_SCALES[i], math.sqrt(SSD300_SCALES[i] * SSD300_SCALES[i + 1])]
    for i in range(6)
]
cross = generate_overanchorized(base.layers, two_scales, [1.0, 2.0, 0.5, 3.0], num_classes=81)
print(f"  2 scales x 4 ratios everywhere: {cross.num_anchors} anchors, "
      f"{bbox_count(AnchorConfiguration.full(cross))} boxes")

narrow = [1.0, 2.0, 0.5]
wide = [1.0, 2.0, 0.5, 3.0, 1.0 / 3.0]
fig5 = generate_overanchorized(
    base.layers, two_scales, [narrow, wide, wide, wide, narrow, narrow], num_classes=81
)
fig5_full = AnchorConfiguration.full(fig5)
print(f"  2 scales, ratio sets {{3,5,5,5,3,3}}: {fig5.num_anchors} anchors, "
      f"{bbox_count(fig5_full)} boxes, {head_flops(fig5_full) // 10**6}M FLOPs")
