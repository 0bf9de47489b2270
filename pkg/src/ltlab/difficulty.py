"""Difficulty networks: map per-class accuracies (or per-sample losses) to
difficulty scores in (0, 1) that weight the classifier's loss.

The class-level net is an MLP with two hidden layers of width H, where H is
the smallest power of two strictly above the class count: 2^(n-1) <= C < 2^n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nnet import MLP, AccuracyVector, forward, init_mlp
from .rng import consumer_rng


def hidden_width_for(class_count: int) -> int:
    """Smallest 2^n with class_count < 2^n (so 100 -> 128, 1000 -> 1024)."""
    if class_count < 1:
        raise ValueError("class_count must be positive")
    return 1 << int(class_count).bit_length()


@dataclass
class DifficultyNet:
    """Accuracy vector in, difficulty vector out, sigmoid output head."""

    net: MLP
    class_count: int


@dataclass
class AbsDifficultyNet:
    """Scalar accuracy in, scalar difficulty out, applied per class. Shares
    the width rule with the class-level net so capacity stays comparable."""

    net: MLP
    class_count: int


@dataclass
class SampleDifficultyNet:
    """Per-sample losses in, per-sample difficulties out, fixed input width."""

    net: MLP
    batch_width: int


def dnet_init(class_count: int, seed: int) -> DifficultyNet:
    h = hidden_width_for(class_count)
    rng = consumer_rng(seed, "init", "dnet")
    return DifficultyNet(init_mlp([class_count, h, h, class_count], "sigmoid", rng), class_count)


def abs_dnet_init(class_count: int, seed: int) -> AbsDifficultyNet:
    h = hidden_width_for(class_count)
    rng = consumer_rng(seed, "init", "dnet")
    return AbsDifficultyNet(init_mlp([1, h, h, 1], "sigmoid", rng), class_count)


def sample_dnet_init(batch_width: int, seed: int) -> SampleDifficultyNet:
    if batch_width < 1:
        raise ValueError("batch_width must be positive")
    h = hidden_width_for(batch_width)
    rng = consumer_rng(seed, "init", "dnet")
    return SampleDifficultyNet(init_mlp([batch_width, h, h, batch_width], "sigmoid", rng), batch_width)


def _acc_array(acc) -> np.ndarray:
    a = acc.per_class if isinstance(acc, AccuracyVector) else np.asarray(acc, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError("accuracy must be a vector")
    return a


def dnet_forward(dnet: DifficultyNet, acc) -> np.ndarray:
    """Difficulty vector d in (0,1)^C for one accuracy vector."""
    a = _acc_array(acc)
    if a.size != dnet.class_count:
        raise ValueError(f"expected {dnet.class_count} accuracies, got {a.size}")
    return forward(dnet.net, a[None, :])[0]


def abs_dnet_forward(adnet: AbsDifficultyNet, acc) -> np.ndarray | float:
    """Same contract as dnet_forward but each class is mapped independently,
    so the map is permutation-equivariant by construction. Scalars pass
    through as scalars."""
    scalar = np.ndim(acc) == 0
    a = np.atleast_1d(np.asarray(acc, dtype=np.float64))
    out = forward(adnet.net, a.reshape(-1, 1))[:, 0]
    return float(out[0]) if scalar else out


def sample_dnet_forward(sdnet: SampleDifficultyNet, losses) -> np.ndarray:
    """Difficulties for up to batch_width per-sample losses. Short batches are
    padded with their own mean; outputs for the padding are dropped."""
    l = np.asarray(losses, dtype=np.float64)
    if l.ndim != 1 or l.size == 0:
        raise ValueError("losses must be a non-empty vector")
    if l.size > sdnet.batch_width:
        raise ValueError(f"batch of {l.size} exceeds width {sdnet.batch_width}")
    padded = pad_losses(sdnet.batch_width, l)
    return forward(sdnet.net, padded[None, :])[0, : l.size]


def pad_losses(width: int, losses: np.ndarray) -> np.ndarray:
    out = np.full(width, losses.mean())
    out[: losses.size] = losses
    return out


def normalized_accuracy(acc) -> np.ndarray:
    """a_c / sum_k a_k; the all-zero vector maps to the uniform 1/C."""
    a = _acc_array(acc)
    total = a.sum()
    if total == 0.0:
        return np.full(a.size, 1.0 / a.size)
    return a / total


def weights_from_difficulty(d: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample loss weights: w_i = d[y_i]."""
    d = np.asarray(d, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= d.size:
        raise ValueError("labels outside [0, C)")
    return d[labels]


def target_fit_loss(d: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared pull of d toward target, with its cotangent wrt d.

    value = (1/C) * sum_c (target_c - d_c)^2
    dvalue/dd_c = -(2/C) * (target_c - d_c)
    """
    d = np.asarray(d, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if d.shape != target.shape or d.ndim != 1:
        raise ValueError("d and target must be matching vectors")
    diff = target - d
    return float((diff**2).mean()), -(2.0 / d.size) * diff


def driver_loss(d: np.ndarray, acc) -> tuple[float, np.ndarray]:
    """Anchor difficulties at 1 - normalized accuracy. Returns (value, dL/dd)."""
    target = 1.0 - normalized_accuracy(acc)
    return target_fit_loss(d, target)


def sample_driver_targets(losses: np.ndarray) -> np.ndarray:
    """Sample-level analogue of the driver target: treat exp(-loss), the
    softmax probability of the true class, as a per-sample accuracy and
    return 1 minus its normalized value. Monotone increasing in the loss."""
    l = np.asarray(losses, dtype=np.float64)
    p = np.exp(-l)
    return 1.0 - p / p.sum()


def difficulty_entropy(d: np.ndarray) -> float:
    """E(d) = -(1/C) * sum_c log(C * d_c / sum_k d_k).

    Zero exactly on uniform vectors, positive otherwise (Jensen); the log
    argument is clamped at 1e-12.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise ValueError("d must be a non-empty vector")
    if d.min() <= 0.0:
        raise ValueError("difficulties must be positive")
    ratio = d.size * d / d.sum()
    value = float(-np.log(np.maximum(ratio, 1e-12)).mean())
    # the mean of logs can round to ~-1e-16 on uniform inputs; the true
    # quantity is a KL divergence and never negative
    return max(0.0, value)
