import pytest

from anchorprune import (
    AnchorConfiguration,
    AnchorId,
    AnchorShape,
    DetectionRecord,
    GroundTruthSet,
    HeadSpec,
    HeadStyle,
    LayerSpec,
    MetricSpec,
    RawDetectionSet,
    ScoreModel,
    SynthClass,
    SynthSpec,
    head_digest,
)
from anchorprune.ingest import Annotation, Category, DumpHeader, DETS_FORMAT, ImageInfo


@pytest.fixture
def tiny_head() -> HeadSpec:
    """Two layers, 3 + 2 anchor slots."""
    return HeadSpec(
        style=HeadStyle.PER_LAYER_CONV,
        num_classes=3,
        layers=(
            LayerSpec(0, 4, 4, 8, 32, ((0, AnchorShape(24.0, 1.0)),
                                       (1, AnchorShape(24.0, 2.0)),
                                       (2, AnchorShape(24.0, 0.5)))),
            LayerSpec(1, 2, 2, 16, 64, ((0, AnchorShape(48.0, 1.0)),
                                        (1, AnchorShape(48.0, 2.0)))),
        ),
    )


def make_gt(images, annotations, categories=((1, "thing"),)) -> GroundTruthSet:
    return GroundTruthSet(
        images=tuple(ImageInfo(*img) for img in images),
        categories=tuple(Category(*cat) for cat in categories),
        annotations=tuple(
            Annotation(
                annotation_id=i + 1,
                image_id=ann[0],
                category_id=ann[1],
                bbox=tuple(float(v) for v in ann[2]),
                area=float(ann[3]) if len(ann) > 3 else float(ann[2][2] * ann[2][3]),
                iscrowd=bool(ann[4]) if len(ann) > 4 else False,
            )
            for i, ann in enumerate(annotations)
        ),
    )


def make_dump(head: HeadSpec, records, score_floor: float = 0.01) -> RawDetectionSet:
    return RawDetectionSet(
        header=DumpHeader(DETS_FORMAT, head_digest(head), score_floor),
        records=tuple(
            DetectionRecord(
                image_id=rec[0],
                anchor=AnchorId(*rec[1]),
                category_id=rec[2],
                score=rec[3],
                bbox=tuple(float(v) for v in rec[4]),
            )
            for rec in records
        ),
    )


def oracle_synth_spec(seed: int, num_images: int = 15) -> SynthSpec:
    """10-anchor instance small enough for the exhaustive oracle."""
    anchors = tuple(
        (0, slot, AnchorShape(scale, ratio))
        for slot, (scale, ratio) in enumerate(
            (s, r) for s in (24.0, 48.0) for r in (0.5, 1.0, 2.0, 4.0)
        )
    ) + tuple((1, slot, AnchorShape(96.0, r)) for slot, r in enumerate((0.5, 1.0)))
    return SynthSpec(
        seed=seed,
        num_images=num_images,
        anchors=anchors,
        objects_per_image=(2, 4),
        classes=(SynthClass(1, "object", (15.0, 140.0), (15.0, 140.0)),),
        responsiveness_radius=0.8,
        localization_noise=0.08,
        score_model=ScoreModel(base=0.9, distance_penalty=0.35, noise=0.05),
        false_positive_rate=0.3,
    )


def full_config(head: HeadSpec) -> AnchorConfiguration:
    return AnchorConfiguration.full(head)


def voc_metric() -> MetricSpec:
    return MetricSpec.voc50()
