"""Segmentation-guided saliency refinement (SegX) and alignment-based
certainty scoring (SegU) for image classifiers."""

__version__ = "0.1.0"

from .masks import (  # noqa: F401
    BinaryMask,
    SaliencyMap,
    auitc,
    intersect,
    iou,
    normalize,
    resample,
    threshold_top_fraction,
    threshold_value,
)
from .segu import CertaintyScore, EvalRecord, GroupStats  # noqa: F401
