"""Certainty scoring from saliency/segmentation alignment, grouping, and
table aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ArgumentError, ValidationError
from .masks import (
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


@dataclass
class EvalRecord:
    """One (image, label) evaluation unit tied to files on disk."""

    image_id: str
    label_id: int
    prob: float
    predicted: bool
    gt_positive: bool
    seg_mask_ref: str
    saliency_ref: Optional[str] = None
    gt_mask_ref: Optional[str] = None
    image_ref: Optional[str] = None
    split: Optional[str] = None

    def __post_init__(self):
        if not (0.0 <= self.prob <= 1.0):
            raise ValidationError(f"record {self.record_id}: prob {self.prob} outside [0, 1]")

    @property
    def record_id(self) -> str:
        return f"{self.image_id}:{self.label_id}"


@dataclass(frozen=True)
class CertaintyScore:
    record_id: str
    c_iou: float
    c_auitc: float

    def __post_init__(self):
        for name, v in (("c_iou", self.c_iou), ("c_auitc", self.c_auitc)):
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} = {v} outside [0, 1]")


@dataclass(frozen=True)
class GroupStats:
    group: str  # "correct" or "incorrect"
    n: int
    mean_c_iou: Optional[float]
    mean_c_auitc: Optional[float]
    std_c_iou: Optional[float]
    std_c_auitc: Optional[float]


class EmptySegMaskError(ArgumentError):
    """The clinical mask is empty; the record must be flagged, not scored."""


def _align(saliency: SaliencyMap, seg: BinaryMask) -> SaliencyMap:
    if (saliency.height, saliency.width) != (seg.height, seg.width):
        return resample(saliency, seg.width, seg.height)
    return saliency


def certainty_iou(saliency: SaliencyMap, seg: BinaryMask, p: float = 0.05) -> float:
    """IoU between the top-p saliency mask and the clinical mask."""
    if seg.popcount == 0:
        raise EmptySegMaskError("empty clinical mask: record excluded from certainty scoring")
    saliency = _align(saliency, seg)
    return iou(threshold_top_fraction(saliency, p), seg)


def certainty_auitc(saliency: SaliencyMap, seg: BinaryMask, n_samples: int = 101) -> float:
    """Area under the IoU-threshold curve between saliency and clinical mask."""
    if seg.popcount == 0:
        raise EmptySegMaskError("empty clinical mask: record excluded from certainty scoring")
    saliency = _align(saliency, seg)
    if not saliency.normalized:
        saliency = normalize(saliency)
    return auitc(saliency, seg, n_samples)


def partition_by_correctness(records: list[EvalRecord], mode: str):
    """Split records into (correct, incorrect) lists.

    multiclass: every record of an image goes with the image, which is
    correct iff its argmax-probability label (ties to the lowest label
    index) is the ground-truth label.  multilabel: each record with
    predicted=True is judged on its own gt_positive flag; unpredicted
    records are dropped since they carry no explanation map.
    """
    if mode not in ("multiclass", "multilabel"):
        raise ArgumentError(f"unknown mode {mode!r}")
    correct: list[EvalRecord] = []
    incorrect: list[EvalRecord] = []
    if mode == "multilabel":
        for rec in records:
            if not rec.predicted:
                continue
            (correct if rec.gt_positive else incorrect).append(rec)
        return correct, incorrect

    by_image: dict[str, list[EvalRecord]] = {}
    for rec in records:
        by_image.setdefault(rec.image_id, []).append(rec)
    for image_id, recs in by_image.items():
        n_pos = sum(r.gt_positive for r in recs)
        if n_pos != 1:
            raise ValidationError(
                f"multiclass image {image_id!r} has {n_pos} positive ground-truth labels, expected 1"
            )
        best = min(recs, key=lambda r: (-r.prob, r.label_id))
        target = (correct if best.gt_positive else incorrect)
        target.extend(recs)
    return correct, incorrect


def aggregate_group_stats(
    scores: list[CertaintyScore],
    correct_ids: set[str],
    incorrect_ids: set[str],
) -> list[GroupStats]:
    """Count / mean / population-std per group, correct first.

    Summation runs in ascending record_id order so parallel scoring and
    serial scoring aggregate bit-identically.
    """
    overlap = correct_ids & incorrect_ids
    if overlap:
        raise ArgumentError(f"records in both groups: {sorted(overlap)[:3]}")
    out: list[GroupStats] = []
    for name, ids in (("correct", correct_ids), ("incorrect", incorrect_ids)):
        members = sorted((s for s in scores if s.record_id in ids), key=lambda s: s.record_id)
        if not members:
            out.append(GroupStats(name, 0, None, None, None, None))
            continue
        ious = np.array([s.c_iou for s in members])
        auitcs = np.array([s.c_auitc for s in members])
        out.append(
            GroupStats(
                group=name,
                n=len(members),
                mean_c_iou=float(ious.mean()),
                mean_c_auitc=float(auitcs.mean()),
                std_c_iou=float(ious.std()),
                std_c_auitc=float(auitcs.std()),
            )
        )
    return out


@dataclass
class AlignmentRow:
    model: str
    xai: str
    n: int
    mean_iou_original: float
    mean_iou_segx: float
    mean_auitc_original: float
    mean_auitc_segx: float


@dataclass
class AlignmentTable:
    rows: list[AlignmentRow]
    skipped: int  # records missing a ground-truth mask


def _segx_auitc(saliency: SaliencyMap, seg: BinaryMask, gt: BinaryMask, n_samples: int) -> float:
    """AUITC of the SegX-refined sweep: each value-threshold mask is
    intersected with the clinical mask before scoring against gt."""
    smap = saliency if saliency.normalized else normalize(saliency)
    taus = np.linspace(0.0, 1.0, n_samples)
    scores = np.array([iou(intersect(threshold_value(smap, t), seg), gt) for t in taus])
    return float(np.trapezoid(scores, taus))


def alignment_table(
    entries: list[tuple[str, str, SaliencyMap, BinaryMask, Optional[BinaryMask]]],
    p: float = 0.05,
    n_samples: int = 101,
) -> AlignmentTable:
    """Original-vs-SegX alignment means per (model, xai) group.

    ``entries`` are (model_tag, xai_tag, saliency, seg_mask, gt_mask)
    tuples; entries without a gt mask are skipped and counted.
    """
    groups: dict[tuple[str, str], list[tuple[float, float, float, float]]] = {}
    skipped = 0
    for model, tag, saliency, seg, gt in entries:
        if gt is None or gt.popcount == 0:
            skipped += 1
            continue
        saliency = _align(saliency, seg)
        top = threshold_top_fraction(saliency, p)
        segx = intersect(top, seg)
        norm = saliency if saliency.normalized else normalize(saliency)
        vals = (
            iou(top, gt),
            iou(segx, gt),
            auitc(norm, gt, n_samples),
            _segx_auitc(norm, seg, gt, n_samples),
        )
        groups.setdefault((model, tag), []).append(vals)
    rows = []
    for (model, tag) in sorted(groups):
        arr = np.array(groups[(model, tag)])
        means = arr.mean(axis=0)
        rows.append(AlignmentRow(model, tag, len(arr), *map(float, means)))
    return AlignmentTable(rows=rows, skipped=skipped)
