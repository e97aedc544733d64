"""lumaforge: keyed object recordings in, annotated COCO datasets out.

Pipeline stages: `keying` separates foreground from a black or green
screen, `harvest` turns frame directories into crop libraries,
`compositor` pastes crops onto random backgrounds with ground-truth masks,
`cocoio` models the COCO output, and `evalkit` scores detections with
COCO-protocol AP/AR.
"""
from .cocoio import CocoDataset, RleMask, decode_rle, encode_rle, read_dataset, validate, write_dataset
from .compositor import BackgroundPool, ComposeResult, SceneSpec, compose_dataset
from .evalkit import DetectionResult, EvalReport, evaluate
from .harvest import CropRecord, HarvestConfig, harvest_directory, load_library, save_library
from .imgcore import AffineParams, BBox, BitMask, ImageRGB8
from .keying import KeySpec, SegmentationResult, segment_chroma, segment_luminance

__version__ = "0.1.0"

__all__ = [
    "AffineParams",
    "BBox",
    "BackgroundPool",
    "BitMask",
    "CocoDataset",
    "ComposeResult",
    "CropRecord",
    "DetectionResult",
    "EvalReport",
    "HarvestConfig",
    "ImageRGB8",
    "KeySpec",
    "RleMask",
    "SceneSpec",
    "SegmentationResult",
    "__version__",
    "compose_dataset",
    "decode_rle",
    "encode_rle",
    "evaluate",
    "harvest_directory",
    "load_library",
    "read_dataset",
    "save_library",
    "segment_chroma",
    "segment_luminance",
    "validate",
    "write_dataset",
]
