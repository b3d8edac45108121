"""Class-conditional toy datasets, generated on the fly.

Labels are assigned round-robin (sample i gets class i mod K) so class
balance is deterministic; coordinates come from one seeded substream drawn
in sample-major blocks, making any prefix of a dataset independent of its
total size.
"""

from __future__ import annotations

import numpy as np

from .rng import DATA, substream

DATASETS = ("gaussians8", "checkerboard", "two-moons", "toy-image")

GAUSSIANS8_RADIUS = 2.0
GAUSSIANS8_STD = 0.15


def dataset_num_classes(name: str) -> int:
    return {
        "gaussians8": 8,
        "checkerboard": 2,
        "two-moons": 2,
        "toy-image": 4,
    }[_canon(name)]


def dataset_kind(name: str) -> str:
    return "image" if _canon(name) == "toy-image" else "points2d"


def _canon(name: str) -> str:
    key = name.replace("_", "-").lower()
    if key not in DATASETS:
        raise ValueError(f"unknown dataset {name!r}; have {DATASETS}")
    return key


def gaussians8_center(label: int) -> np.ndarray:
    angle = 2.0 * np.pi * label / 8.0
    return GAUSSIANS8_RADIUS * np.array([np.cos(angle), np.sin(angle)])


def make_dataset(name: str, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Labeled samples: (coords, labels). coords is (n, 2) or (n, 8, 8)."""
    key = _canon(name)
    rng = substream(seed, DATA)
    labels = np.arange(n, dtype=np.int64) % dataset_num_classes(key)
    if key == "gaussians8":
        centers = np.stack([gaussians8_center(k) for k in range(8)])
        noise = rng.normal(0.0, GAUSSIANS8_STD, size=(n, 2))
        return centers[labels] + noise, labels
    if key == "checkerboard":
        return _checkerboard(n, labels, rng), labels
    if key == "two-moons":
        return _two_moons(n, labels, rng), labels
    return _toy_image(n, labels, rng), labels


def _checkerboard(n: int, labels: np.ndarray, rng) -> np.ndarray:
    # 4x4 unit cells over [-2,2]^2; class = cell color
    cells = np.array(
        [(cx, cy) for cx in range(4) for cy in range(4)], dtype=np.float64
    )
    parity = (cells.sum(axis=1) % 2).astype(int)
    by_color = [cells[parity == c] for c in (0, 1)]
    choice = rng.integers(0, 8, size=n)
    offsets = rng.random((n, 2))
    out = np.empty((n, 2))
    for i in range(n):
        cell = by_color[labels[i]][choice[i]]
        out[i] = cell + offsets[i] - 2.0
    return out


def _two_moons(n: int, labels: np.ndarray, rng) -> np.ndarray:
    theta = rng.random(n) * np.pi
    noise = rng.normal(0.0, 0.1, size=(n, 2))
    upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    lower = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
    pts = np.where(labels[:, None] == 0, upper, lower)
    return 1.5 * pts + noise


def _toy_image(n: int, labels: np.ndarray, rng) -> np.ndarray:
    g = 8
    ramp = np.linspace(-1.0, 1.0, g)
    patterns = np.stack(
        [
            np.tile(ramp, (g, 1)),  # horizontal gradient
            np.tile(ramp[:, None], (1, g)),  # vertical gradient
            np.indices((g, g)).sum(axis=0) % 2 * 2.0 - 1.0,  # checker
            np.exp(
                -((np.indices((g, g)) - (g - 1) / 2.0) ** 2).sum(axis=0) / 6.0
            )
            * 2.0
            - 1.0,  # center blob
        ]
    )
    noise = rng.normal(0.0, 0.1, size=(n, g, g))
    return patterns[labels] + noise
