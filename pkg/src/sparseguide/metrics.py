"""Sample-quality metrics in raw data space.

Gaussian-fit Fréchet distance plays the role perceptual-feature FID plays at
scale, and a seeded mean-pairwise-distance statistic quantifies sample
diversity. Both operate directly on coordinates; toy distributions need no
feature network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError

_PSD_TOL = -1e-9


@dataclass(frozen=True)
class GaussianSummary:
    """Sample mean, unbiased covariance, and the count behind them."""

    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        if self.count < 2:
            raise ValueError(f"need at least 2 samples, got {self.count}")
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionError(
                f"covariance shape {cov.shape} does not match mean {mean.shape}"
            )
        if not np.allclose(cov, cov.T, atol=1e-9):
            raise NumericError("covariance is not symmetric within 1e-9")
        eigvals = np.linalg.eigvalsh(0.5 * (cov + cov.T))
        if eigvals.min() < _PSD_TOL:
            raise NumericError(
                f"covariance has eigenvalue {eigvals.min()} below tolerance"
            )


def gaussian_fit(samples: np.ndarray) -> GaussianSummary:
    """Sample mean and unbiased (n-1) covariance of a set of d-vectors."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need an (n>=2, d) sample array, got shape {x.shape}")
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return GaussianSummary(mean=mean, covariance=cov, count=x.shape[0])


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in [-1e-9, 0) are clipped to zero; anything lower is a
    genuine non-PSD input and raises.
    """
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min() < _PSD_TOL:
        raise NumericError(
            f"matrix eigenvalue {eigvals.min()} below PSD tolerance {_PSD_TOL}"
        )
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross term uses the symmetrized product A^{1/2} B A^{1/2}, whose
    square-root trace equals Tr((S_a S_b)^{1/2}) and stays in real symmetric
    territory.
    """
    if a.mean.shape != b.mean.shape:
        raise DimensionError(
            f"summaries have different dimension: {a.mean.shape} vs {b.mean.shape}"
        )
    diff = a.mean - b.mean
    root_a = _sqrt_psd(a.covariance)
    cross = _sqrt_psd(root_a @ b.covariance @ root_a)
    value = float(
        diff @ diff
        + np.trace(a.covariance)
        + np.trace(b.covariance)
        - 2.0 * np.trace(cross)
    )
    # tiny negative values are eigensolver noise around zero
    return max(value, 0.0) if value > -1e-9 else _raise_negative(value)


def _raise_negative(value: float) -> float:
    raise NumericError(f"Fréchet distance computed as {value} < -1e-9")


DEFAULT_PAIR_BUDGET = 50_000


def pairwise_diversity(
    samples: np.ndarray, seed: int = 0, num_pairs: int = DEFAULT_PAIR_BUDGET
) -> float:
    """Mean Euclidean distance over a fixed-size random pairing.

    Small sets (all-pairs count within budget) are enumerated exactly;
    larger sets use num_pairs seeded random pairs, drawn uniformly over
    off-diagonal index pairs.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need an (n>=2, d) sample array, got shape {x.shape}")
    n = x.shape[0]
    total_pairs = n * (n - 1) // 2
    if total_pairs <= num_pairs and n <= 2048:
        diffs = x[:, None, :] - x[None, :, :]
        dists = np.sqrt((diffs**2).sum(axis=-1))
        iu = np.triu_indices(n, k=1)
        return float(dists[iu].mean())
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=num_pairs)
    j = (i + 1 + rng.integers(0, n - 1, size=num_pairs)) % n
    return float(np.sqrt(((x[i] - x[j]) ** 2).sum(axis=1)).mean())
