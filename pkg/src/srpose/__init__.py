"""Super-resolution-assisted human pose estimation evaluation toolkit.

Builds bicubicly downscaled COCO-style datasets, scores detections and
keypoints with OKS/IoU-based AP and AR, stratifies results into fixed
segmentation-area subgroups, and runs a threshold-routed top-down pose
pipeline over pluggable model backends.
"""

__version__ = "1.0.0"

from .coco import (
    Dataset,
    DataError,
    DetectionRecord,
    GeometryError,
    ImageRecord,
    KeypointRecord,
    ParseError,
    PersonAnnotation,
    ValidationError,
    parse_dataset,
    parse_results,
    scale_annotations,
    segmentation_area,
    write_dataset,
    write_results,
)
from .metrics import (
    EvalConfig,
    MetricReport,
    SENTINEL,
    average_precision,
    build_match_tables,
    detection_rate,
    iou,
    match,
    oks,
)
# The resample() function itself stays in srpose.resample: re-exporting it
# here would shadow the submodule attribute of the same name.
from .resample import RasterImage, ResampleSpec, build_lr_dataset, psnr
from .subgroups import PinnedLabels, SubgroupSpec, assign_subgroups, per_subgroup_metrics
from .heatmap import DecodedPeak, Heatmap, decode, encode, l2_loss
from .router import RouteDecision, RouterConfig, route, run_gtbox_eval, run_pipeline
from .backends import BackendError, BicubicUpscaler, SubprocessBackend

__all__ = [
    "__version__",
    "Dataset",
    "DataError",
    "DetectionRecord",
    "GeometryError",
    "ImageRecord",
    "KeypointRecord",
    "ParseError",
    "PersonAnnotation",
    "ValidationError",
    "parse_dataset",
    "parse_results",
    "scale_annotations",
    "segmentation_area",
    "write_dataset",
    "write_results",
    "EvalConfig",
    "MetricReport",
    "SENTINEL",
    "average_precision",
    "build_match_tables",
    "detection_rate",
    "iou",
    "match",
    "oks",
    "RasterImage",
    "ResampleSpec",
    "build_lr_dataset",
    "psnr",
    "PinnedLabels",
    "SubgroupSpec",
    "assign_subgroups",
    "per_subgroup_metrics",
    "DecodedPeak",
    "Heatmap",
    "decode",
    "encode",
    "l2_loss",
    "RouteDecision",
    "RouterConfig",
    "route",
    "run_gtbox_eval",
    "run_pipeline",
    "BackendError",
    "BicubicUpscaler",
    "SubprocessBackend",
]
