"""Gaze-fused chest X-ray lesion detection: boxes, fixations, metrics, training."""

from ._core import (
    Detector,
    NumericError,
    ValidationError,
    average_precision,
    average_recall,
    decode_box,
    detect_fixations,
    encode_box,
    evaluate,
    fixation_map,
    gradcheck,
    iobb,
    iou,
    load_image,
    nms,
    render_heatmap,
    synth,
    table_report,
    train,
)

__all__ = [
    "Detector",
    "NumericError",
    "ValidationError",
    "average_precision",
    "average_recall",
    "decode_box",
    "detect_fixations",
    "encode_box",
    "evaluate",
    "fixation_map",
    "gradcheck",
    "iobb",
    "iou",
    "load_image",
    "nms",
    "render_heatmap",
    "synth",
    "table_report",
    "train",
]
