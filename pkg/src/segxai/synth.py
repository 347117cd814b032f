"""Synthetic lesion dataset for desk-scale end-to-end runs.

Each image carries one elliptical lesion whose mean intensity encodes the
class, plus small distractor blobs whose intensities are drawn from the
same range regardless of class (so they carry no class signal but give
saliency methods something irrelevant to latch onto).  The ground-truth
clinical mask is exactly the lesion ellipse.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio
from .errors import ConfigError
from .masks import BinaryMask
from .segu import EvalRecord

BACKGROUND = 0.15


@dataclass(frozen=True)
class SynthConfig:
    n_images: int
    width: int = 64
    height: int = 64
    n_classes: int = 2
    radius_range: tuple[int, int] = (7, 12)
    noise_amplitude: float = 0.05
    n_distractors: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 1:
            raise ConfigError("n_images must be positive")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if not (0.0 <= self.noise_amplitude <= 1.0):
            raise ConfigError("noise_amplitude must lie in [0, 1]")
        lo, hi = self.radius_range
        if lo < 2 or hi < lo:
            raise ConfigError(f"bad radius range {self.radius_range}")
        if 2 * hi + 2 >= min(self.width, self.height):
            raise ConfigError(
                f"lesion radius {hi} cannot fit inside a {self.width}x{self.height} image"
            )


@dataclass
class SynthDataset:
    images: np.ndarray  # (n, H, W) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    gt_masks: np.ndarray  # (n, H, W) bool
    config: SynthConfig


def _ellipse_mask(h: int, w: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    return ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0


def _disk_mask(h: int, w: int, cy: int, cx: int, r: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    return (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r


def _class_intensity(label: int, n_classes: int, rng: np.random.Generator) -> float:
    # Class means spread over [0.45, 0.85]; the jitter creates a small
    # overlap between neighbouring classes so the toy task is not trivial.
    base = 0.45 + 0.40 * (label / (n_classes - 1))
    return float(np.clip(base + rng.normal(0.0, 0.06), 0.30, 1.0))


def generate(config: SynthConfig) -> SynthDataset:
    """Generate images, integer labels, and exact lesion masks, fully seeded."""
    h, w = config.height, config.width
    rmin, rmax = config.radius_range
    images = np.empty((config.n_images, h, w))
    labels = np.empty(config.n_images, dtype=np.int64)
    gt_masks = np.empty((config.n_images, h, w), dtype=bool)

    seeds = np.random.SeedSequence(config.seed).spawn(config.n_images)
    for i, ss in enumerate(seeds):
        rng = np.random.Generator(np.random.PCG64(ss))
        label = int(rng.integers(config.n_classes))
        ry = float(rng.uniform(rmin, rmax))
        rx = float(rng.uniform(rmin, rmax))
        cy = float(rng.uniform(ry + 1, h - ry - 1))
        cx = float(rng.uniform(rx + 1, w - rx - 1))
        lesion = _ellipse_mask(h, w, cy, cx, ry, rx)

        img = np.full((h, w), BACKGROUND)
        img[lesion] = _class_intensity(label, config.n_classes, rng)

        placed = 0
        attempts = 0
        while placed < config.n_distractors and attempts < 200:
            attempts += 1
            r = int(rng.integers(2, 4))
            dy = int(rng.integers(r + 1, h - r - 1))
            dx = int(rng.integers(r + 1, w - r - 1))
            blob = _disk_mask(h, w, dy, dx, r)
            if (blob & lesion).any():
                continue
            # Intensity spans the full class range: no class signal.
            img[blob] = float(rng.uniform(0.35, 0.9))
            placed += 1

        if config.noise_amplitude > 0.0:
            img = img + rng.uniform(-config.noise_amplitude, config.noise_amplitude, size=(h, w))
        images[i] = np.clip(img, 0.0, 1.0)
        labels[i] = label
        gt_masks[i] = lesion
    return SynthDataset(images=images, labels=labels, gt_masks=gt_masks, config=config)


def split(n: int, ratios: tuple[float, float, float] = (0.7, 0.1, 0.2), seed: int = 0):
    """Seeded shuffle then contiguous train/val/test slices.

    Sizes are floor(train), floor(val), remainder to test.
    """
    if n < 3:
        raise ConfigError(f"dataset of size {n} cannot be split three ways")
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be positive and sum to 1, got {ratios}")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(n)
    n_train = int(np.floor(ratios[0] * n))
    n_val = int(np.floor(ratios[1] * n))
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


def write_dataset(dataset: SynthDataset, out_dir, seed: int = 0) -> Path:
    """Write images/masks/manifest under ``out_dir``; returns the manifest path.

    The manifest has one record per image with the ground-truth label,
    prob = 1.0 placeholder (replaced by the explain stage), and the
    lesion mask doubling as both clinical and ground-truth mask.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    n = len(dataset.images)
    train_idx, val_idx, test_idx = split(n, seed=seed)
    split_of = {}
    for name, idx in (("train", train_idx), ("val", val_idx), ("test", test_idx)):
        for i in idx:
            split_of[int(i)] = name

    records = []
    for i in range(n):
        image_id = f"img{i:05d}"
        img_ref = f"images/{image_id}.png"
        mask_ref = f"masks/{image_id}_gt.png"
        dataio.write_image(dataset.images[i], out_dir / img_ref)
        dataio.write_mask(BinaryMask(dataset.gt_masks[i]), out_dir / mask_ref)
        records.append(
            EvalRecord(
                image_id=image_id,
                label_id=int(dataset.labels[i]),
                prob=1.0,
                predicted=True,
                gt_positive=True,
                seg_mask_ref=mask_ref,
                gt_mask_ref=mask_ref,
                image_ref=img_ref,
                split=split_of[i],
            )
        )
    n_classes = dataset.config.n_classes
    manifest = dataio.DatasetManifest(
        mode="multiclass",
        class_names=[f"class{c}" for c in range(n_classes)],
        thresholds=[0.5] * n_classes,
        records=records,
        base_dir=out_dir,
    )
    manifest_path = out_dir / "manifest.jsonl"
    dataio.save_manifest(manifest, manifest_path)
    return manifest_path
