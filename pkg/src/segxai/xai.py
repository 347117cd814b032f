"""Saliency-map generators over a model-adapter boundary.

Grad-CAM needs the white-box hooks (feature maps + activation gradients);
KernelSHAP and the exact-enumeration Shapley oracle only need black-box
forward access.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import tinynet
from .errors import ArgumentError, CapabilityError
from .masks import SaliencyMap, normalize, resample


@dataclass
class ModelAdapter:
    """Uniform model interface: forward always, white-box hooks optionally.

    ``forward(image) -> probs`` must be deterministic.  White-box models
    additionally provide ``trace(image)`` returning an object with an
    ``a2`` feature-map stack, and ``grad_activations(trace, class_j)``.
    """

    n_classes: int
    forward: Callable[[np.ndarray], np.ndarray]
    trace: Optional[Callable] = None
    grad_activations: Optional[Callable] = None

    @property
    def has_whitebox_hooks(self) -> bool:
        return self.trace is not None and self.grad_activations is not None


def tinynet_adapter(net: tinynet.TinyNet) -> ModelAdapter:
    return ModelAdapter(
        n_classes=net.n_classes,
        forward=lambda image: tinynet.forward(net, image).probs,
        trace=lambda image: tinynet.forward(net, image),
        grad_activations=lambda trace, j: tinynet.grad_activations(net, trace, j),
    )


@dataclass(frozen=True)
class SuperpixelGrid:
    """Regular rows x cols partition of an image into attribution regions."""

    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.rows * self.cols < 2:
            raise ArgumentError(
                f"superpixel grid needs at least 2 regions, got {self.rows}x{self.cols}"
            )

    @property
    def n_regions(self) -> int:
        return self.rows * self.cols

    def region_map(self, height: int, width: int) -> np.ndarray:
        """Per-pixel region index, shape (height, width)."""
        ys = np.arange(height) * self.rows // height
        xs = np.arange(width) * self.cols // width
        return ys[:, None] * self.cols + xs[None, :]


def grad_cam(adapter: ModelAdapter, image: np.ndarray, class_j: int) -> SaliencyMap:
    """Gradient-weighted activation map, upsampled and min-max normalized."""
    if not adapter.has_whitebox_hooks:
        raise CapabilityError("grad_cam requires an adapter with white-box hooks")
    if not (0 <= class_j < adapter.n_classes):
        raise ArgumentError(f"class index {class_j} out of range")
    trace = adapter.trace(image)
    acts = trace.a2  # (K, h, w)
    grads = adapter.grad_activations(trace, class_j)
    alphas = grads.mean(axis=(1, 2))
    raw = np.maximum(np.tensordot(alphas, acts, axes=1), 0.0)
    h, w = np.asarray(image).shape[:2]
    upsampled = resample(SaliencyMap(raw), w, h)
    return normalize(upsampled)


def _masked_image(image: np.ndarray, baseline: np.ndarray, region_map: np.ndarray, coalition: np.ndarray) -> np.ndarray:
    keep = coalition[region_map]  # (H, W) bool
    return np.where(keep[:, :, None], image, baseline)


def _shapley_kernel_weight(m: int, s: int) -> float:
    return (m - 1) / (math.comb(m, s) * s * (m - s))


def kernel_shap_attributions(
    adapter: ModelAdapter,
    image: np.ndarray,
    grid: SuperpixelGrid,
    class_j: int,
    n_coalitions: int = 2048,
    seed: int = 0,
    baseline: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-region Shapley attributions via kernel-weighted least squares.

    All 2^M coalitions are enumerated when M <= 12; otherwise
    ``n_coalitions`` coalitions are sampled (seeded), always including
    the empty and full ones.  The empty/full values enter as hard
    constraints, which enforces the efficiency axiom exactly.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    m = grid.n_regions
    region_map = grid.region_map(image.shape[0], image.shape[1])
    if baseline is None:
        baseline = image.mean(axis=(0, 1))[None, None, :] * np.ones_like(image)
    else:
        baseline = np.broadcast_to(np.asarray(baseline, dtype=np.float64), image.shape)

    if m <= 12:
        coalitions = np.array(
            [[(c >> i) & 1 for i in range(m)] for c in range(2**m)], dtype=bool
        )
    else:
        rng = np.random.Generator(np.random.PCG64(seed))
        sampled = rng.integers(0, 2, size=(max(n_coalitions - 2, 0), m)).astype(bool)
        coalitions = np.vstack([np.zeros((1, m), bool), np.ones((1, m), bool), sampled])

    values = np.array(
        [adapter.forward(_masked_image(image, baseline, region_map, z))[class_j] for z in coalitions]
    )
    sizes = coalitions.sum(axis=1)
    v_empty = float(values[sizes == 0][0])
    v_full = float(values[sizes == m][0])
    delta = v_full - v_empty

    interior = (sizes > 0) & (sizes < m)
    z = coalitions[interior].astype(np.float64)
    v = values[interior]
    if z.shape[0] == 0:
        # Only the constraints are available (M == 1 cannot happen; degenerate sampling).
        return np.full(m, delta / m)
    w = np.sqrt(np.array([_shapley_kernel_weight(m, int(s)) for s in sizes[interior]]))
    # Eliminate the last attribution through the efficiency constraint.
    a = (z[:, : m - 1] - z[:, [m - 1]]) * w[:, None]
    b = (v - v_empty - z[:, m - 1] * delta) * w
    phi_head, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < m - 1:
        warnings.warn("kernel_shap regression is rank-deficient; using least-norm solution")
    phi = np.empty(m)
    phi[: m - 1] = phi_head
    phi[m - 1] = delta - phi_head.sum()
    return phi


def kernel_shap(
    adapter: ModelAdapter,
    image: np.ndarray,
    grid: SuperpixelGrid,
    class_j: int,
    n_coalitions: int = 2048,
    seed: int = 0,
    baseline: Optional[np.ndarray] = None,
    polarity: str = "positive",
) -> SaliencyMap:
    """KernelSHAP saliency map: region attributions broadcast to pixels.

    ``polarity`` controls how signed attributions become saliency:
    "positive" keeps only evidence-for attributions (negatives become 0),
    "absolute" takes magnitudes.
    """
    if polarity not in ("positive", "absolute"):
        raise ArgumentError(f"unknown polarity {polarity!r}")
    phi = kernel_shap_attributions(
        adapter, image, grid, class_j, n_coalitions=n_coalitions, seed=seed, baseline=baseline
    )
    phi = np.abs(phi) if polarity == "absolute" else np.maximum(phi, 0.0)
    region_map = grid.region_map(np.asarray(image).shape[0], np.asarray(image).shape[1])
    return normalize(SaliencyMap(phi[region_map]))


def exact_shapley(
    adapter: ModelAdapter,
    image: np.ndarray,
    grid: SuperpixelGrid,
    class_j: int,
    baseline: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Exact Shapley attributions by full subset enumeration (M <= 12 only)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    m = grid.n_regions
    if m > 12:
        raise ArgumentError(f"exact enumeration refused for M = {m} > 12 regions")
    region_map = grid.region_map(image.shape[0], image.shape[1])
    if baseline is None:
        baseline = image.mean(axis=(0, 1))[None, None, :] * np.ones_like(image)
    else:
        baseline = np.broadcast_to(np.asarray(baseline, dtype=np.float64), image.shape)

    values = np.empty(2**m)
    for code in range(2**m):
        coalition = np.array([(code >> i) & 1 for i in range(m)], dtype=bool)
        values[code] = adapter.forward(_masked_image(image, baseline, region_map, coalition))[class_j]

    fact = [math.factorial(k) for k in range(m + 1)]
    phi = np.zeros(m)
    for i in range(m):
        for code in range(2**m):
            if (code >> i) & 1:
                continue
            s = bin(code).count("1")
            weight = fact[s] * fact[m - s - 1] / fact[m]
            phi[i] += weight * (values[code | (1 << i)] - values[code])
    return phi
