"""Export job execution: emit saliency NPYs, mask PNGs, and a manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .models import load_model

MANIFEST_VERSION = 1
XAI_METHODS = ("gradcam", "shap")


class ExportError(RuntimeError):
    """The job is invalid or an emitted artifact failed the self-check."""


@dataclass
class ExportJob:
    """One export run: which model, which images, where the files go."""

    model_ref: str
    data_dir: Path
    out_dir: Path
    xai: str = "gradcam"
    seg_ref: str = "stub"
    thresholds: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.data_dir = Path(self.data_dir)
        self.out_dir = Path(self.out_dir)
        if self.xai not in XAI_METHODS:
            raise ExportError(f"unknown xai method {self.xai!r}; choose from {XAI_METHODS}")


def _load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def _write_saliency(values: np.ndarray, path: Path) -> None:
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float64), dtype="<f4")
    with open(path, "wb") as f:
        np.lib.format.write_array(f, arr, version=(1, 0))


def _write_mask(soft: np.ndarray, path: Path) -> np.ndarray:
    """Binarize a soft mask at 0.5 and write a strict 0/255 grayscale PNG."""
    bits = np.asarray(soft, dtype=np.float64) >= 0.5
    Image.fromarray(np.where(bits, 255, 0).astype(np.uint8), mode="L").save(path)
    return bits


def _self_check(out_dir: Path, manifest_path: Path) -> None:
    """Re-parse every emitted artifact with the strict byte-level rules."""
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ExportError("self-check: manifest is empty")
    header = json.loads(lines[0])
    for key in ("version", "mode", "class_names", "thresholds"):
        if key not in header:
            raise ExportError(f"self-check: manifest header missing {key!r}")
    thresholds = header["thresholds"]
    for line_no, raw in enumerate(lines[1:], start=2):
        rec = json.loads(raw)
        if rec["predicted"] != (rec["prob"] > thresholds[rec["label_id"]]):
            raise ExportError(f"self-check: line {line_no} predicted flag is inconsistent")
        for key in ("seg_mask_path", "saliency_path"):
            ref = out_dir / rec[key]
            if not ref.is_file():
                raise ExportError(f"self-check: line {line_no} {key} {rec[key]!r} missing")
        with open(out_dir / rec["saliency_path"], "rb") as f:
            version = np.lib.format.read_magic(f)
            if version != (1, 0):
                raise ExportError(f"self-check: {rec['saliency_path']} is NPY {version}, need (1, 0)")
            shape, fortran, dtype = np.lib.format.read_array_header_1_0(f)
            if len(shape) != 2 or fortran or dtype != np.dtype("<f4"):
                raise ExportError(f"self-check: {rec['saliency_path']} violates the 2-D <f4 C-order contract")
        with Image.open(out_dir / rec["seg_mask_path"]) as img:
            if img.mode != "L":
                raise ExportError(f"self-check: {rec['seg_mask_path']} is mode {img.mode}, need L")
            levels = set(np.asarray(img).ravel().tolist())
            if not levels <= {0, 255}:
                raise ExportError(f"self-check: {rec['seg_mask_path']} holds gray values {sorted(levels - {0, 255})[:3]}")


def export(job: ExportJob) -> Path:
    """Run the job and return the path of the validated manifest."""
    model = load_model(job.model_ref)
    seg_model = model if job.seg_ref == job.model_ref else load_model(job.seg_ref)
    thresholds = job.thresholds or [0.5] * model.n_classes
    if len(thresholds) != model.n_classes:
        raise ExportError(f"{len(thresholds)} thresholds for {model.n_classes} classes")
    images = sorted(job.data_dir.glob("*.png"))
    if not images:
        raise ExportError(f"no PNG images found under {job.data_dir}")

    out = job.out_dir
    (out / "saliency").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    header = {
        "version": MANIFEST_VERSION,
        "mode": "multilabel",
        "class_names": [f"class{j}" for j in range(model.n_classes)],
        "thresholds": thresholds,
        "model_tag": job.model_ref,
        "xai_tag": job.xai,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for path in images:
        image = _load_image(path)
        image_id = path.stem
        probs = model.predict(image)
        mask_name = f"masks/{image_id}_seg.png"
        _write_mask(seg_model.segmentation(image), out / mask_name)
        for j in range(model.n_classes):
            prob = float(probs[j])
            predicted = prob > thresholds[j]
            if not predicted:
                continue
            sal_name = f"saliency/{image_id}_c{j}.npy"
            _write_saliency(model.saliency(image, j, job.xai), out / sal_name)
            lines.append(json.dumps({
                "image_id": image_id,
                "label_id": j,
                "prob": prob,
                "predicted": True,
                "gt_positive": True,
                "seg_mask_path": mask_name,
                "saliency_path": sal_name,
            }, sort_keys=True))

    manifest_path = out / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    _self_check(out, manifest_path)
    return manifest_path
