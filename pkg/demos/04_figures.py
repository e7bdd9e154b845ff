"""Static SVG figures: frontier staircase and per-anchor shape distributions.

Writes demos/output/frontier.svg (accuracy versus bbox count, with the
random-pruning trajectory as a grey point cloud) and demos/output/shapes.svg
(log-space histograms of the box shapes each anchor produced).
"""

from pathlib import Path

from anchorprune import (
    MetricSpec,
    ResourceMetric,
    SearchParams,
    anchor_pruning_search,
    frontier_svg,
    generate,
    random_prune_baseline,
    shape_distribution,
    shape_distribution_svg,
)

import sys
sys.path.insert(0, "tests")
from conftest import oracle_synth_spec

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

head, gt, dets = generate(oracle_synth_spec(1, num_images=25))
metric = MetricSpec.voc50()
params = SearchParams(
    resource_metric=ResourceMetric.BBOX_COUNT, metric_spec=metric, seed=1
)

frontier = anchor_pruning_search(dets, gt, head, params)
trajectory = random_prune_baseline(dets, gt, head, params)
svg = frontier_svg(
    frontier,
    title="Pruned anchor configurations",
    x_label="bounding boxes",
    baseline=trajectory,
)
(out_dir / "frontier.svg").write_text(svg)
print(f"frontier.svg: {len(frontier)} frontier entries, "
      f"{len(trajectory)} random-trajectory points")

dist = shape_distribution(dets, head)
(out_dir / "shapes.svg").write_text(shape_distribution_svg(dist))
occupied = sum(1 for h in dist.anchors if h.total)
print(f"shapes.svg: {occupied}/{len(dist.anchors)} anchors with detections")
