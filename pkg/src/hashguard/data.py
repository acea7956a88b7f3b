"""Synthetic image dataset with separable classes.

Each class owns a distinct spatial-frequency/color template; samples are the
template plus per-pixel Gaussian noise, clipped to [0,1].  Templates are far
enough apart that a nearest-template classifier is essentially perfect, so a
small network can reach high retrieval quality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError

SPLIT_FRACTIONS = {"db": 0.6, "query": 0.1, "calibration": 0.1, "heldout": 0.1, "train": 0.1}

# a ladder from low to high spatial frequency; the top entries sit near
# Nyquist and lose almost all contrast under a 3x3 mean blur, which spreads
# the benign response to denoising across classes
_FREQ_TABLE = [
    (1, 0), (0, 1), (1, 1), (2, 1), (1, 2), (2, 2), (3, 1), (2, 3),
    (5, 5), (4, 5), (2, 0), (0, 2), (3, 0), (0, 3), (4, 1), (1, 3),
]

_COLOR_TABLE = [
    (1.0, 0.3, 0.3), (0.3, 1.0, 0.3), (0.3, 0.3, 1.0), (1.0, 1.0, 0.3),
    (1.0, 0.3, 1.0), (0.3, 1.0, 1.0), (1.0, 0.7, 0.3), (0.3, 0.7, 1.0),
]


@dataclass
class SyntheticDataset:
    images: np.ndarray  # (N, H, W, 3) in [0,1]
    labels: np.ndarray  # (N,) class indices
    templates: np.ndarray  # (C, H, W, 3)
    splits: dict  # split name -> index array
    seed: int
    noise_sigma: float

    @property
    def num_classes(self) -> int:
        return self.templates.shape[0]

    @property
    def image_shape(self) -> tuple:
        return self.images.shape[1:]

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.image_shape))

    def flat(self, split: str | None = None):
        """(X, y) with images flattened to vectors, optionally one split."""
        if split is None:
            idx = np.arange(len(self.images))
        elif split in self.splits:
            idx = self.splits[split]
        else:
            raise UsageError(f"unknown split {split!r}; have {sorted(self.splits)}")
        return self.images[idx].reshape(len(idx), -1), self.labels[idx]

    def split_ids(self, split: str) -> np.ndarray:
        return self.splits[split]

    def save(self, path) -> None:
        np.savez_compressed(
            str(path),
            images=self.images.astype(np.float32),
            labels=self.labels,
            templates=self.templates.astype(np.float32),
            seed=self.seed,
            noise_sigma=self.noise_sigma,
            **{f"split_{name}": idx for name, idx in self.splits.items()},
        )

    @classmethod
    def load(cls, path) -> "SyntheticDataset":
        with np.load(str(path)) as data:
            splits = {
                key[len("split_"):]: data[key]
                for key in data.files if key.startswith("split_")
            }
            return cls(
                images=data["images"].astype(np.float64),
                labels=data["labels"],
                templates=data["templates"].astype(np.float64),
                splits=splits,
                seed=int(data["seed"]),
                noise_sigma=float(data["noise_sigma"]),
            )


def class_template(cls_index: int, image_size: int, amplitude: float = 0.15) -> np.ndarray:
    """Deterministic per-class template: a sine grating tinted by a color.

    The amplitude keeps inter-class distances a modest multiple of the
    attack budgets, comparable to natural image datasets, while staying
    well above the per-sample noise.
    """
    fx, fy = _FREQ_TABLE[cls_index % len(_FREQ_TABLE)]
    color = np.array(_COLOR_TABLE[cls_index % len(_COLOR_TABLE)])
    phase = 2.0 * np.pi * (cls_index // len(_FREQ_TABLE)) / 4.0
    ii, jj = np.meshgrid(np.arange(image_size), np.arange(image_size), indexing="ij")
    wave = np.sin(2.0 * np.pi * (fx * ii + fy * jj) / image_size + phase)
    return 0.5 + amplitude * wave[:, :, None] * color[None, None, :]


def generate_dataset(num_classes: int, num_samples: int, seed: int,
                     image_size: int = 16, noise_sigma: float = 0.04,
                     split_fractions: dict | None = None) -> SyntheticDataset:
    """Deterministic class-conditional generator with disjoint stratified splits."""
    if num_classes < 2:
        raise ConfigError("need at least 2 classes")
    if num_samples < 50 * num_classes:
        raise ConfigError(
            f"need at least {50 * num_classes} samples for {num_classes} classes"
        )
    if num_classes > len(_FREQ_TABLE) * 4:
        raise ConfigError(f"at most {len(_FREQ_TABLE) * 4} distinct class templates")
    fractions = dict(SPLIT_FRACTIONS if split_fractions is None else split_fractions)
    if abs(sum(fractions.values()) - 1.0) > 1e-9:
        raise ConfigError("split fractions must sum to 1")

    rng = np.random.default_rng(seed)
    templates = np.stack([class_template(c, image_size) for c in range(num_classes)])
    labels = np.arange(num_samples) % num_classes
    noise = rng.normal(0.0, noise_sigma, size=(num_samples, image_size, image_size, 3))
    images = np.clip(templates[labels] + noise, 0.0, 1.0)

    # stratified assignment so every split covers every class
    split_names = sorted(fractions)
    splits = {name: [] for name in split_names}
    for c in range(num_classes):
        members = rng.permutation(np.flatnonzero(labels == c))
        start = 0
        for i, name in enumerate(split_names):
            count = (
                len(members) - start
                if i == len(split_names) - 1
                else int(round(fractions[name] * len(members)))
            )
            splits[name].append(members[start : start + count])
            start += count
    splits = {name: np.sort(np.concatenate(parts)) for name, parts in splits.items()}
    return SyntheticDataset(images, labels, templates, splits, seed, noise_sigma)


def nearest_template_accuracy(ds: SyntheticDataset) -> float:
    """Accuracy of classifying each sample by its closest class template."""
    flat = ds.images.reshape(len(ds.images), -1)
    temps = ds.templates.reshape(ds.num_classes, -1)
    d2 = ((flat[:, None, :] - temps[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d2, axis=1) == ds.labels))
