"""Saliency-map and binary-mask algebra.

All operations are pure: inputs are never mutated and every function
returns a freshly allocated value, so batch callers may parallelize
freely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, StateError, ValidationError


@dataclass(frozen=True)
class SaliencyMap:
    """Real-valued per-pixel saliency grid for one (image, label) pair."""

    values: np.ndarray  # (H, W) float64, row-major
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError(f"saliency grid must be 2-D, got {values.ndim}-D")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValidationError(f"saliency grid must be nonempty, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("saliency grid contains non-finite values")
        if self.normalized and (values.min() < 0.0 or values.max() > 1.0):
            raise ValidationError("normalized saliency grid has values outside [0, 1]")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """Boolean pixel set (segmentation masks, thresholded maps, SegX output)."""

    bits: np.ndarray  # (H, W) bool, row-major

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.dtype != np.bool_:
            raise ValidationError(f"mask bits must be boolean, got dtype {bits.dtype}")
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValidationError(f"mask must be a nonempty 2-D grid, got shape {bits.shape}")
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())


def _check_same_shape(a, b):
    if (a.height, a.width) != (b.height, b.width):
        raise ArgumentError(
            f"dimension mismatch: {a.height}x{a.width} vs {b.height}x{b.width}"
        )


def normalize(smap: SaliencyMap) -> SaliencyMap:
    """Min-max rescale to [0, 1]; a constant grid maps to all zeros."""
    v = smap.values
    lo = v.min()
    hi = v.max()
    if hi == lo:
        out = np.zeros_like(v)
    else:
        out = (v - lo) / (hi - lo)
    return SaliencyMap(out, normalized=True)


def threshold_top_fraction(smap: SaliencyMap, p: float) -> BinaryMask:
    """Select exactly ceil(p * W * H) pixels with the highest saliency.

    Ties are broken by ascending row-major index, so the result is
    deterministic for any input, including all-constant grids.
    """
    if not (0.0 < p <= 1.0):
        raise ArgumentError(f"top fraction p must lie in (0, 1], got {p}")
    n = smap.height * smap.width
    k = int(np.ceil(p * n))
    flat = smap.values.ravel()
    # Stable sort on negated values keeps equal values in row-major order.
    order = np.argsort(-flat, kind="stable")
    bits = np.zeros(n, dtype=bool)
    bits[order[:k]] = True
    return BinaryMask(bits.reshape(smap.values.shape))


def threshold_value(smap: SaliencyMap, tau: float) -> BinaryMask:
    """Select pixels with normalized saliency >= tau."""
    if not smap.normalized:
        raise StateError("threshold_value requires a min-max normalized map")
    if not (0.0 <= tau <= 1.0):
        raise ArgumentError(f"threshold tau must lie in [0, 1], got {tau}")
    return BinaryMask(smap.values >= tau)


def intersect(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    """Pixelwise AND of two masks (the SegX refinement step)."""
    _check_same_shape(a, b)
    return BinaryMask(a.bits & b.bits)


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union of two masks.

    Two empty masks agree vacuously and score 1.0; use ``iou_is_vacuous``
    to detect that case when aggregating.
    """
    _check_same_shape(a, b)
    inter = int((a.bits & b.bits).sum())
    union = int((a.bits | b.bits).sum())
    if union == 0:
        return 1.0
    return inter / union


def iou_is_vacuous(a: BinaryMask, b: BinaryMask) -> bool:
    """True iff iou(a, b) hit the empty/empty convention."""
    _check_same_shape(a, b)
    return a.popcount == 0 and b.popcount == 0


def auitc(
    smap: SaliencyMap,
    ref: BinaryMask,
    n_samples: int = 101,
    sweep: str = "value",
) -> float:
    """Area under the IoU-vs-threshold curve.

    Trapezoidal approximation of the integral of IoU(ref, mask(tau)) for
    tau in [0, 1] at ``n_samples`` uniformly spaced points including both
    endpoints.  ``sweep`` selects how tau is applied: "value" thresholds
    the normalized saliency values, "fraction" selects the top-tau pixel
    fraction instead (tau = 0 then yields an empty mask).
    """
    if not smap.normalized:
        raise StateError("auitc requires a min-max normalized map")
    _check_same_shape(smap, ref)
    if n_samples < 2:
        raise ArgumentError(f"n_samples must be >= 2, got {n_samples}")
    if sweep not in ("value", "fraction"):
        raise ArgumentError(f"unknown sweep mode {sweep!r}")

    taus = np.linspace(0.0, 1.0, n_samples)
    ref_bits = ref.bits
    ref_count = int(ref_bits.sum())
    n = smap.height * smap.width
    flat = smap.values.ravel()

    scores = np.empty(n_samples)
    if sweep == "value":
        for i, tau in enumerate(taus):
            sel = flat >= tau
            inter = int(np.count_nonzero(sel & ref_bits.ravel()))
            union = int(np.count_nonzero(sel | ref_bits.ravel()))
            scores[i] = 1.0 if union == 0 else inter / union
    else:
        order = np.argsort(-flat, kind="stable")
        ref_flat = ref_bits.ravel()
        for i, tau in enumerate(taus):
            k = int(np.ceil(tau * n))
            sel_idx = order[:k]
            inter = int(np.count_nonzero(ref_flat[sel_idx]))
            union = k + ref_count - inter
            scores[i] = 1.0 if union == 0 else inter / union
    return float(np.trapezoid(scores, taus))


def _bilinear_resample(values: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    src_h, src_w = values.shape

    def axis_coords(dst, src):
        if dst == 1:
            return np.zeros(1)
        # Corner-aligned mapping: endpoints land exactly on endpoints.
        return np.arange(dst) * ((src - 1) / (dst - 1))

    ys = axis_coords(target_h, src_h)
    xs = axis_coords(target_w, src_w)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, src_h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]

    tl = values[np.ix_(y0, x0)]
    tr = values[np.ix_(y0, x1)]
    bl = values[np.ix_(y1, x0)]
    br = values[np.ix_(y1, x1)]
    top = tl * (1.0 - fx) + tr * fx
    bot = bl * (1.0 - fx) + br * fx
    return top * (1.0 - fy) + bot * fy


def _nearest_indices(dst: int, src: int) -> np.ndarray:
    idx = np.floor((np.arange(dst) + 0.5) * (src / dst)).astype(np.int64)
    return np.clip(idx, 0, src - 1)


def resample(obj, target_w: int, target_h: int):
    """Resize a SaliencyMap (bilinear, corner-aligned) or BinaryMask (nearest).

    Resampling to the input's own size is the identity.
    """
    if target_w < 1 or target_h < 1:
        raise ArgumentError(f"target dimensions must be positive, got {target_w}x{target_h}")
    if isinstance(obj, SaliencyMap):
        if (target_h, target_w) == (obj.height, obj.width):
            return SaliencyMap(obj.values, normalized=obj.normalized)
        out = _bilinear_resample(obj.values, target_h, target_w)
        if obj.normalized:
            # Interpolation of in-range values stays in range up to rounding.
            out = np.clip(out, 0.0, 1.0)
        return SaliencyMap(out, normalized=obj.normalized)
    if isinstance(obj, BinaryMask):
        if (target_h, target_w) == (obj.height, obj.width):
            return BinaryMask(obj.bits)
        ys = _nearest_indices(target_h, obj.height)
        xs = _nearest_indices(target_w, obj.width)
        return BinaryMask(obj.bits[np.ix_(ys, xs)])
    raise ArgumentError(f"resample expects SaliencyMap or BinaryMask, got {type(obj).__name__}")
