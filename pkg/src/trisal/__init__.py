"""Three-stream RGB/depth/flow video salient-object detection."""

from .data import (
    AttributeRecord,
    DatasetStatistics,
    FixationField,
    FixtureConfig,
    FrameRecord,
    SplitManifest,
    dataset_statistics,
    fixations_to_saliency,
    load_sequence,
    load_split_manifest,
    make_fixtures,
)
from .encoder import EncoderConfig, EncoderStream, FeaturePyramid, build_streams
from .metrics import EvalReport, evaluate, f_measure_curve, mae, s_measure
from .model import (
    LossBreakdown,
    ModelConfig,
    SaliencyNet,
    TrainConfig,
    compute_loss,
    infer,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "AttributeRecord",
    "DatasetStatistics",
    "EncoderConfig",
    "EncoderStream",
    "EvalReport",
    "FeaturePyramid",
    "FixationField",
    "FixtureConfig",
    "FrameRecord",
    "LossBreakdown",
    "ModelConfig",
    "SaliencyNet",
    "SplitManifest",
    "TrainConfig",
    "build_streams",
    "compute_loss",
    "dataset_statistics",
    "evaluate",
    "f_measure_curve",
    "fixations_to_saliency",
    "infer",
    "load_checkpoint",
    "load_sequence",
    "load_split_manifest",
    "mae",
    "make_fixtures",
    "s_measure",
    "save_checkpoint",
    "train",
]

__version__ = "0.1.0"
