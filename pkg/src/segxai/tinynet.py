"""Minimal differentiable CNN with manual backprop and Grad-CAM hooks.

Fixed architecture: conv3x3(C->8, pad 1) -> ReLU -> maxpool2 ->
conv3x3(8->16, pad 1) -> ReLU -> maxpool2 -> GAP -> dense(16->N) ->
softmax or per-label sigmoid.  Everything runs in float64 so analytic
gradients can be verified against central finite differences.

The feature maps exposed for Grad-CAM are the 16 post-ReLU maps of the
second convolution (half the input resolution).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ArgumentError, FormatError, NumericalError, StateError, ValidationError

MAGIC = b"TNET1"
_HEADS = ("softmax", "sigmoid")


@dataclass
class TinyNet:
    conv1_w: np.ndarray  # (8, C, 3, 3)
    conv1_b: np.ndarray  # (8,)
    conv2_w: np.ndarray  # (16, 8, 3, 3)
    conv2_b: np.ndarray  # (16,)
    head_w: np.ndarray  # (N, 16)
    head_b: np.ndarray  # (N,)
    head: str
    version: int = 0  # bumped on every parameter update

    @property
    def in_channels(self) -> int:
        return self.conv1_w.shape[1]

    @property
    def n_classes(self) -> int:
        return self.head_w.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b, self.head_w, self.head_b]

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat_params(self, theta: np.ndarray) -> None:
        off = 0
        for p in self.params():
            p[...] = theta[off : off + p.size].reshape(p.shape)
            off += p.size
        self.version += 1


@dataclass
class ForwardTrace:
    image: np.ndarray  # (C, H, W)
    z1: np.ndarray
    a1: np.ndarray
    p1: np.ndarray
    idx1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray  # Grad-CAM feature maps A_k, (16, H/2, W/2)
    p2: np.ndarray
    idx2: np.ndarray
    gap: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    net_version: int
    net_id: int


def init(seed: int, in_channels: int, n_classes: int, head: str = "softmax") -> TinyNet:
    """Create a network with uniform(-s, s) weights, s = sqrt(6 / fan_in).

    The PRNG is numpy's PCG64; identical seeds give bit-identical nets.
    """
    if in_channels < 1 or n_classes < 1:
        raise ArgumentError("in_channels and n_classes must be positive")
    if head not in _HEADS:
        raise ArgumentError(f"head must be one of {_HEADS}, got {head!r}")
    rng = np.random.Generator(np.random.PCG64(seed))

    def uniform(shape, fan_in):
        s = np.sqrt(6.0 / fan_in)
        return rng.uniform(-s, s, size=shape)

    return TinyNet(
        conv1_w=uniform((8, in_channels, 3, 3), in_channels * 9),
        conv1_b=np.zeros(8),
        conv2_w=uniform((16, 8, 3, 3), 8 * 9),
        conv2_b=np.zeros(16),
        head_w=uniform((n_classes, 16), 16),
        head_b=np.zeros(n_classes),
        head=head,
    )


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def forward(net: TinyNet, image: np.ndarray) -> ForwardTrace:
    """Run the network on one image of shape (H, W, C), values in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[2] != net.in_channels:
        raise ArgumentError(
            f"expected (H, W, {net.in_channels}) image, got shape {image.shape}"
        )
    if image.shape[0] < 8 or image.shape[1] < 8:
        raise ArgumentError(f"image must be at least 8x8, got {image.shape[:2]}")
    if not np.all(np.isfinite(image)):
        raise ValidationError("image contains non-finite values")
    x = np.ascontiguousarray(image.transpose(2, 0, 1))

    z1 = kernels.conv3x3(x, net.conv1_w, net.conv1_b)
    a1 = np.maximum(z1, 0.0)
    p1, idx1 = kernels.maxpool2(a1)
    z2 = kernels.conv3x3(p1, net.conv2_w, net.conv2_b)
    a2 = np.maximum(z2, 0.0)
    p2, idx2 = kernels.maxpool2(a2)
    gap = p2.mean(axis=(1, 2))
    logits = net.head_w @ gap + net.head_b
    if net.head == "softmax":
        probs = _softmax(logits)
    else:
        probs = 1.0 / (1.0 + np.exp(-logits))
    return ForwardTrace(
        image=x, z1=z1, a1=a1, p1=p1, idx1=idx1, z2=z2, a2=a2, p2=p2, idx2=idx2,
        gap=gap, logits=logits, probs=probs,
        net_version=net.version, net_id=id(net),
    )


def _check_trace(net: TinyNet, trace: ForwardTrace) -> None:
    if trace.net_id != id(net) or trace.net_version != net.version:
        raise StateError("trace is stale: produced by a different net or parameter version")


def grad_activations(net: TinyNet, trace: ForwardTrace, class_j: int) -> np.ndarray:
    """Analytic gradient of the class-j logit w.r.t. the Grad-CAM feature maps."""
    _check_trace(net, trace)
    if not (0 <= class_j < net.n_classes):
        raise ArgumentError(f"class index {class_j} out of range [0, {net.n_classes})")
    c, h2, w2 = trace.p2.shape
    dgap = net.head_w[class_j]  # (16,)
    dp2 = np.repeat(dgap / (h2 * w2), h2 * w2).reshape(c, h2, w2)
    return kernels.maxpool2_backward(dp2, trace.idx2, trace.a2.shape[1], trace.a2.shape[2])


def loss(net: TinyNet, trace: ForwardTrace, target) -> float:
    """Cross-entropy (softmax head, integer target) or mean BCE (sigmoid head)."""
    if net.head == "softmax":
        p = np.clip(trace.probs[int(target)], 1e-300, None)
        return float(-np.log(p))
    y = np.asarray(target, dtype=np.float64)
    p = np.clip(trace.probs, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def loss_param_grads(net: TinyNet, trace: ForwardTrace, target) -> list[np.ndarray]:
    """Gradients of the per-example loss w.r.t. every parameter tensor."""
    _check_trace(net, trace)
    if net.head == "softmax":
        dlogits = trace.probs.copy()
        dlogits[int(target)] -= 1.0
    else:
        y = np.asarray(target, dtype=np.float64)
        dlogits = (trace.probs - y) / net.n_classes

    d_head_w = np.outer(dlogits, trace.gap)
    d_head_b = dlogits
    dgap = net.head_w.T @ dlogits
    c, h2, w2 = trace.p2.shape
    dp2 = np.repeat(dgap / (h2 * w2), h2 * w2).reshape(c, h2, w2)
    da2 = kernels.maxpool2_backward(dp2, trace.idx2, trace.a2.shape[1], trace.a2.shape[2])
    dz2 = da2 * (trace.z2 > 0.0)
    dp1, d_conv2_w, d_conv2_b = kernels.conv3x3_backward(trace.p1, net.conv2_w, dz2)
    da1 = kernels.maxpool2_backward(dp1, trace.idx1, trace.a1.shape[1], trace.a1.shape[2])
    dz1 = da1 * (trace.z1 > 0.0)
    _, d_conv1_w, d_conv1_b = kernels.conv3x3_backward(trace.image, net.conv1_w, dz1)
    return [d_conv1_w, d_conv1_b, d_conv2_w, d_conv2_b, d_head_w, d_head_b]


def train(
    net: TinyNet,
    images: np.ndarray,
    targets: np.ndarray,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 16,
) -> list[float]:
    """Plain minibatch SGD; mutates ``net`` in place and returns per-epoch mean loss.

    The shuffle order is fixed by ``seed``, so training is deterministic.
    """
    if len(images) == 0:
        raise ArgumentError("training set is empty")
    if lr < 0.0:
        raise ArgumentError(f"learning rate must be >= 0, got {lr}")
    rng = np.random.Generator(np.random.PCG64(seed))
    history: list[float] = []
    n = len(images)
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            grads = None
            for i in batch:
                trace = forward(net, images[i])
                epoch_loss += loss(net, trace, targets[i])
                g = loss_param_grads(net, trace, targets[i])
                if grads is None:
                    grads = g
                else:
                    for acc, gi in zip(grads, g):
                        acc += gi
            scale = lr / len(batch)
            for p, g in zip(net.params(), grads):
                p -= scale * g
            net.version += 1
        epoch_loss /= n
        if not np.isfinite(epoch_loss):
            raise NumericalError(f"training diverged: epoch loss = {epoch_loss}")
        history.append(epoch_loss)
    return history


def predict(net: TinyNet, image: np.ndarray, thresholds: np.ndarray):
    """Threshold per-class probabilities into a label set.

    Returns (probs, label_set, argmax) where argmax is the highest-probability
    class (reported for softmax single-label use; ties go to the lowest index).
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.shape != (net.n_classes,):
        raise ArgumentError(
            f"expected {net.n_classes} thresholds, got shape {thresholds.shape}"
        )
    if np.any(thresholds < 0.0) or np.any(thresholds >= 1.0):
        raise ArgumentError("thresholds must lie in [0, 1)")
    probs = forward(net, image).probs
    label_set = {int(j) for j in range(net.n_classes) if probs[j] > thresholds[j]}
    return probs, label_set, int(np.argmax(probs))


def evaluate_accuracy(net: TinyNet, images: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of images whose argmax prediction matches the integer label."""
    hits = sum(int(np.argmax(forward(net, img).probs)) == int(lab) for img, lab in zip(images, labels))
    return hits / len(images)


def save_checkpoint(net: TinyNet, path) -> None:
    """Write the versioned binary checkpoint (magic "TNET1", dims, <f8 params)."""
    head_code = _HEADS.index(net.head)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", net.in_channels, net.n_classes, head_code))
        for p in net.params():
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> TinyNet:
    with open(path, "rb") as f:
        data = f.read()
    if data[:5] != MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:5]!r}, expected {MAGIC!r}")
    in_channels, n_classes, head_code = struct.unpack("<III", data[5:17])
    if head_code >= len(_HEADS):
        raise FormatError(f"unknown head code {head_code}")
    net = init(0, in_channels, n_classes, _HEADS[head_code])
    theta = np.frombuffer(data[17:], dtype="<f8")
    expected = net.flat_params().size
    if theta.size != expected:
        raise FormatError(f"checkpoint has {theta.size} parameters, expected {expected}")
    net.set_flat_params(theta.astype(np.float64))
    net.version = 0
    return net
