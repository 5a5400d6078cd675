"""Labeled sample stores and the synthetic Gaussian-mixture generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix plus integer class labels in ``0..num_classes-1``."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ValueError(
                f"label count {labels.shape} does not match feature rows {features.shape[0]}"
            )
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    def __len__(self):
        return self.size

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian mixture with one isotropic blob per class.

    Class means are drawn uniformly on a sphere of radius ``class_separation``;
    samples add ``noise_sigma``-scaled standard normal noise.
    """

    classes: int = 10
    per_class_count: int = 1000
    feature_dim: int = 32
    class_separation: float = 3.0
    noise_sigma: float = 1.0
    seed: int = 0
    test_per_class: int = 200

    def validate(self):
        if self.classes < 1 or self.per_class_count < 1 or self.feature_dim < 1:
            raise ValueError("classes, per_class_count and feature_dim must be positive")
        if self.noise_sigma < 0 or self.class_separation < 0:
            raise ValueError("noise_sigma and class_separation must be non-negative")
        if self.test_per_class < 0:
            raise ValueError("test_per_class must be non-negative")


def class_means(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    raw = rng.standard_normal((spec.classes, spec.feature_dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return spec.class_separation * raw


def _sample(spec: SyntheticSpec, means, per_class, stream):
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, stream]))
    labels = np.repeat(np.arange(spec.classes, dtype=np.int64), per_class)
    noise = rng.standard_normal((labels.size, spec.feature_dim))
    features = means[labels] + spec.noise_sigma * noise
    # interleave classes so that index order carries no label information
    order = rng.permutation(labels.size)
    return LabeledDataset(features[order], labels[order], spec.classes)


def make_gaussian_mixture(spec: SyntheticSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Return ``(train, test)`` drawn from the same mixture with independent noise."""
    spec.validate()
    means = class_means(spec)
    train = _sample(spec, means, spec.per_class_count, 1)
    test = _sample(spec, means, spec.test_per_class, 2)
    return train, test
