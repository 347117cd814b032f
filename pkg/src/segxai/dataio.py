"""Bit-exact interchange formats: NPY saliency grids, PNG masks and
images, line-delimited manifests, overlay rendering, and report files.

All parsers reject rather than coerce; see docs/manifest_format.md for
the manifest schema.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import FormatError, ArgumentError, ManifestError
from .masks import BinaryMask, SaliencyMap
from .segu import EvalRecord

MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# NPY saliency grids (version 1.0, 2-D, little-endian float32, C order)

def write_saliency(smap: SaliencyMap, path) -> None:
    arr = np.ascontiguousarray(smap.values, dtype="<f4")
    with open(path, "wb") as f:
        np.lib.format.write_array(f, arr, version=(1, 0))


def read_saliency(path) -> SaliencyMap:
    with open(path, "rb") as f:
        try:
            version = np.lib.format.read_magic(f)
        except ValueError as e:
            raise FormatError(f"{path}: not an NPY file ({e})") from None
        if version != (1, 0):
            raise FormatError(f"{path}: NPY version {version}, expected (1, 0)")
        shape, fortran, dtype = np.lib.format.read_array_header_1_0(f)
        if len(shape) != 2:
            raise FormatError(f"{path}: header shape {shape} has rank {len(shape)}, expected 2")
        if fortran:
            raise FormatError(f"{path}: header fortran_order=True, expected C order")
        if dtype != np.dtype("<f4"):
            raise FormatError(f"{path}: header dtype {dtype.str!r}, expected '<f4'")
        payload = f.read()
    expected = shape[0] * shape[1] * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header shape {shape} needs {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4")
    return SaliencyMap(data.reshape(shape).astype(np.float64))


# ---------------------------------------------------------------------------
# PNG masks (8-bit single channel, strict 0/255) and images

def write_mask(mask: BinaryMask, path) -> None:
    arr = np.where(mask.bits, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def read_mask(path) -> BinaryMask:
    with Image.open(path) as img:
        if img.mode != "L":
            raise FormatError(f"{path}: PNG mode {img.mode!r}, expected 8-bit grayscale 'L'")
        arr = np.asarray(img)
    bad = np.setdiff1d(np.unique(arr), [0, 255])
    if bad.size:
        raise FormatError(
            f"{path}: mask contains values {bad.tolist()[:5]}, only 0 and 255 are allowed"
        )
    return BinaryMask(arr == 255)


def write_image(image: np.ndarray, path) -> None:
    """Save a float image in [0, 1] (H,W) or (H,W,3) as an 8-bit PNG."""
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path, format="PNG")


def read_image(path) -> np.ndarray:
    """Load a PNG as float64 (H, W, C) in [0, 1]."""
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            raise FormatError(f"{path}: image mode {img.mode!r}, expected 'L' or 'RGB'")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


# ---------------------------------------------------------------------------
# Manifests

@dataclass
class DatasetManifest:
    mode: str  # "multiclass" | "multilabel"
    class_names: list[str]
    thresholds: list[float]
    records: list[EvalRecord]
    model_tag: str = "tinynet"
    xai_tag: Optional[str] = None
    base_dir: Path = field(default_factory=Path)
    version: int = MANIFEST_VERSION

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def resolve(self, ref: str) -> Path:
        return self.base_dir / ref


def _require(cond: bool, line_no: int, msg: str) -> None:
    if not cond:
        raise ManifestError(f"line {line_no}: {msg}")


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse and validate a line-delimited manifest.

    The stored ``predicted`` flag, if present, must agree with
    prob > threshold; referenced files must exist (relative to the
    manifest's directory) unless ``check_files`` is disabled.
    """
    path = Path(path)
    base = path.parent
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines()]
    _require(len(lines) >= 1, 1, "manifest is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ManifestError(f"line 1: invalid JSON header ({e})") from None
    for key in ("version", "mode", "class_names", "thresholds"):
        _require(key in header, 1, f"header missing field {key!r}")
    _require(header["version"] == MANIFEST_VERSION, 1,
             f"unsupported manifest version {header['version']}")
    mode = header["mode"]
    _require(mode in ("multiclass", "multilabel"), 1, f"unknown mode {mode!r}")
    class_names = list(header["class_names"])
    thresholds = [float(t) for t in header["thresholds"]]
    _require(len(thresholds) == len(class_names), 1,
             f"{len(thresholds)} thresholds for {len(class_names)} classes")
    _require(all(0.0 <= t < 1.0 for t in thresholds), 1, "thresholds must lie in [0, 1)")

    records: list[EvalRecord] = []
    seen: set[str] = set()
    for line_no, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ManifestError(f"line {line_no}: invalid JSON record ({e})") from None
        for key in ("image_id", "label_id", "prob", "gt_positive", "seg_mask_path"):
            _require(key in obj, line_no, f"record missing field {key!r}")
        label_id = int(obj["label_id"])
        _require(0 <= label_id < len(class_names), line_no,
                 f"label_id {label_id} out of range")
        prob = float(obj["prob"])
        _require(0.0 <= prob <= 1.0, line_no, f"prob {prob} outside [0, 1]")
        predicted = prob > thresholds[label_id]
        if "predicted" in obj:
            _require(bool(obj["predicted"]) == predicted, line_no,
                     f"stored predicted={obj['predicted']} disagrees with "
                     f"prob {prob} vs threshold {thresholds[label_id]}")
        rec = EvalRecord(
            image_id=str(obj["image_id"]),
            label_id=label_id,
            prob=prob,
            predicted=predicted,
            gt_positive=bool(obj["gt_positive"]),
            seg_mask_ref=str(obj["seg_mask_path"]),
            saliency_ref=obj.get("saliency_path"),
            gt_mask_ref=obj.get("gt_mask_path"),
            image_ref=obj.get("image_path"),
            split=obj.get("split"),
        )
        _require(rec.record_id not in seen, line_no, f"duplicate record id {rec.record_id!r}")
        seen.add(rec.record_id)
        if check_files:
            for label, ref in (
                ("seg_mask_path", rec.seg_mask_ref),
                ("saliency_path", rec.saliency_ref),
                ("gt_mask_path", rec.gt_mask_ref),
                ("image_path", rec.image_ref),
            ):
                if ref is not None and not (base / ref).is_file():
                    raise ManifestError(f"line {line_no}: {label} {ref!r} does not exist")
        records.append(rec)
    return DatasetManifest(
        mode=mode,
        class_names=class_names,
        thresholds=thresholds,
        records=records,
        model_tag=header.get("model_tag", "tinynet"),
        xai_tag=header.get("xai_tag"),
        base_dir=base,
    )


def save_manifest(manifest: DatasetManifest, path) -> None:
    header = {
        "version": manifest.version,
        "mode": manifest.mode,
        "class_names": manifest.class_names,
        "thresholds": manifest.thresholds,
        "model_tag": manifest.model_tag,
    }
    if manifest.xai_tag is not None:
        header["xai_tag"] = manifest.xai_tag
    lines = [json.dumps(header, sort_keys=True)]
    for rec in manifest.records:
        obj = {
            "image_id": rec.image_id,
            "label_id": rec.label_id,
            "prob": rec.prob,
            "predicted": rec.predicted,
            "gt_positive": rec.gt_positive,
            "seg_mask_path": rec.seg_mask_ref,
        }
        if rec.saliency_ref is not None:
            obj["saliency_path"] = rec.saliency_ref
        if rec.gt_mask_ref is not None:
            obj["gt_mask_path"] = rec.gt_mask_ref
        if rec.image_ref is not None:
            obj["image_path"] = rec.image_ref
        if rec.split is not None:
            obj["split"] = rec.split
        lines.append(json.dumps(obj, sort_keys=True))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Overlay rendering

def render_overlay(image: np.ndarray, baseline_mask: BinaryMask, segx_mask: BinaryMask, path) -> None:
    """Tint baseline pixels white and SegX pixels red (50% integer blend).

    The SegX tint is computed from the original pixels and applied last,
    so red wins wherever the masks overlap.
    """
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    if img.shape[:2] != (baseline_mask.height, baseline_mask.width) or img.shape[:2] != (
        segx_mask.height,
        segx_mask.width,
    ):
        raise ArgumentError("overlay image and masks must share dimensions")
    out = img.astype(np.int64).copy()
    white = np.array([255, 255, 255])
    red = np.array([255, 0, 0])
    out[baseline_mask.bits] = (img[baseline_mask.bits] + white) // 2
    out[segx_mask.bits] = (img[segx_mask.bits] + red) // 2
    Image.fromarray(out.astype(np.uint8), mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# Reports

@dataclass
class ReportTable:
    name: str
    columns: list[str]
    rows: list[list]  # cells: str, int, or float
    footer: list[str] = field(default_factory=list)


def _format_cell(cell) -> str:
    if isinstance(cell, bool):
        return str(cell)
    if isinstance(cell, float):
        return f"{cell:.6f}"
    return str(cell)


def emit_report(tables: list[ReportTable], path_prefix) -> list[Path]:
    """Write each table as <prefix>_<name>.csv and an aligned .txt twin.

    Floats are rendered with 6 decimal places, so identical inputs give
    byte-identical files.
    """
    if not tables:
        raise ArgumentError("emit_report needs at least one table")
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for table in tables:
        rows = [[_format_cell(c) for c in row] for row in table.rows]
        csv_path = prefix.parent / f"{prefix.name}_{table.name}.csv"
        with open(csv_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(",".join(table.columns) + "\n")
            for row in rows:
                f.write(",".join(row) + "\n")
        txt_path = prefix.parent / f"{prefix.name}_{table.name}.txt"
        widths = [
            max(len(table.columns[i]), *(len(r[i]) for r in rows)) if rows else len(table.columns[i])
            for i in range(len(table.columns))
        ]
        with open(txt_path, "w", encoding="utf-8", newline="\n") as f:
            f.write("  ".join(c.ljust(w) for c, w in zip(table.columns, widths)).rstrip() + "\n")
            for row in rows:
                f.write("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() + "\n")
            for note in table.footer:
                f.write(f"# {note}\n")
        written.extend([csv_path, txt_path])
    return written
