"""Offline anchor pruning for one-stage detection heads.

Exposes the head/cost models, dataset ingestion, the cached-detections
evaluator, the greedy Pareto search with its oracle and baselines, the
synthetic instance generator and SVG plotting.
"""

__version__ = "0.1.0"

from .errors import ValidationError
from .evaluation import (
    EvalResult,
    MetricSpec,
    PreparedEvaluation,
    Protocol,
    average_precision,
    evaluate,
    filter_by_config,
    iou,
    nms,
)
from .heads import (
    AnchorConfiguration,
    AnchorId,
    AnchorShape,
    HeadSpec,
    HeadStyle,
    LayerSpec,
    NeighborMode,
    TowerSpec,
    bbox_count,
    generate_overanchorized,
    head_digest,
    head_from_json,
    head_to_json,
    head_flops,
    neighbors,
    retinanet_head,
    ssd300_head,
)
from .ingest import (
    Annotation,
    Category,
    DetectionRecord,
    GroundTruthSet,
    ImageInfo,
    RawDetectionSet,
    dataset_summary,
    detections_to_jsonl,
    ground_truth_to_json,
    parse_detections,
    parse_ground_truth,
)
from .plots import frontier_svg, shape_distribution_svg
from .search import (
    Frontier,
    FrontierEntry,
    ResourceMetric,
    SearchParams,
    anchor_pruning_search,
    brute_force_frontier,
    dominates,
    export_frontier,
    frontier_from_entries,
    frontier_insert,
    hypervolume,
    import_frontier,
    layerwise_prune_baseline,
    random_prune_baseline,
)
from .synth import (
    ScoreModel,
    ShapeDistribution,
    SynthClass,
    SynthSpec,
    generate,
    shape_distribution,
    synth_spec_from_json,
    synth_spec_to_dict,
)
