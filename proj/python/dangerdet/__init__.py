"""Python bindings for the DangerDet detector."""

# libtorch must be loaded before the extension that links against it.
import torch  # noqa: F401

from ._core import (
    CLASS_NAMES,
    IOU_THRESHOLDS,
    DangerDetError,
    Detector,
    assign_targets,
    center_ness,
    evaluate,
    generate_corpus,
    nms,
    parse_box_xml,
    parse_keypoint_json,
    render_heatmaps,
    render_scene,
    train,
)

__all__ = [
    "CLASS_NAMES",
    "IOU_THRESHOLDS",
    "DangerDetError",
    "Detector",
    "assign_targets",
    "center_ness",
    "evaluate",
    "generate_corpus",
    "nms",
    "parse_box_xml",
    "parse_keypoint_json",
    "render_heatmaps",
    "render_scene",
    "train",
]
