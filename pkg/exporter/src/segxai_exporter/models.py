"""Model backends: everything framework-specific lives on this side of the boundary."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ModelError(RuntimeError):
    """A model reference could not be resolved or executed."""


@dataclass
class StubModel:
    """Deterministic stand-in for a real classifier/XAI/segmentation stack.

    Emits constant class probabilities, a checkerboard saliency map, and a
    soft (anti-aliased) disk segmentation mask for every image.
    """

    probabilities: list[float] = field(default_factory=lambda: [0.2, 0.9])
    checker_period: int = 4
    disk_radius_fraction: float = 0.35

    @property
    def n_classes(self) -> int:
        return len(self.probabilities)

    def predict(self, image: np.ndarray) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=np.float64)

    def saliency(self, image: np.ndarray, label_id: int, method: str) -> np.ndarray:
        h, w = image.shape[:2]
        ys, xs = np.indices((h, w))
        board = ((ys // self.checker_period + xs // self.checker_period) % 2).astype(np.float64)
        if method == "shap":
            board = 1.0 - board
        # Shift the label's phase slightly so maps differ per class.
        return (board + 0.1 * label_id) / (1.0 + 0.1 * max(self.n_classes - 1, 1))

    def segmentation(self, image: np.ndarray) -> np.ndarray:
        """Soft mask in [0, 1] with anti-aliased edges (a disk here)."""
        h, w = image.shape[:2]
        ys, xs = np.indices((h, w))
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        r = self.disk_radius_fraction * min(h, w)
        dist = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
        return np.clip(r + 0.5 - dist, 0.0, 1.0)


def load_model(ref: str):
    """Resolve a model reference string to a backend instance.

    Supported: "stub" and "stub:<json-kwargs>" (e.g.
    'stub:{"probabilities": [0.3, 0.7]}'). References for real deep-learning
    frameworks would be registered here; none are bundled.
    """
    if ref == "stub":
        return StubModel()
    if ref.startswith("stub:"):
        try:
            kwargs = json.loads(ref[len("stub:"):])
        except json.JSONDecodeError as e:
            raise ModelError(f"bad stub configuration: {e}") from None
        return StubModel(**kwargs)
    raise ModelError(f"unknown model reference {ref!r}; only stub models are bundled")
