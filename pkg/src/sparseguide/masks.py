"""Binary keep/drop masks over token positions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMaskError, DomainError


@dataclass(frozen=True)
class SparsityMask:
    """Keep flags over T tokens plus the drop rate that produced them.

    keep[k] is True when token k stays in computation; the complement marks
    the dropped (masked / routed-away) tokens.
    """

    keep: np.ndarray
    gamma: float

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        object.__setattr__(self, "keep", keep)
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError(f"gamma must be in [0,1), got {self.gamma}")

    @property
    def dropped(self) -> np.ndarray:
        return ~self.keep

    @property
    def num_tokens(self) -> int:
        return self.keep.shape[-1]

    @property
    def num_kept(self) -> int:
        return int(self.keep.sum())


def sample_mask(num_tokens: int, gamma: float, rng: np.random.Generator) -> SparsityMask:
    """Bernoulli mask: each token kept independently with probability 1 - gamma."""
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"gamma must be in [0,1), got {gamma}")
    keep = rng.random(num_tokens) >= gamma
    return SparsityMask(keep=keep, gamma=gamma)


def fixed_keep_count(num_tokens: int, gamma: float) -> int:
    return int(round((1.0 - gamma) * num_tokens))


def sample_mask_fixed_count(
    num_tokens: int, gamma: float, rng: np.random.Generator
) -> SparsityMask:
    """Random subset of exactly round((1-gamma)*T) kept tokens.

    Deterministic kept count keeps training batches rectangular and makes
    realized compute match the expected-count accounting.
    """
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"gamma must be in [0,1), got {gamma}")
    k = fixed_keep_count(num_tokens, gamma)
    if k < 1:
        raise DegenerateMaskError(
            f"fixed-count mask keeps {k} of {num_tokens} tokens at gamma={gamma}"
        )
    order = np.argsort(rng.random(num_tokens), kind="stable")
    keep = np.zeros(num_tokens, dtype=bool)
    keep[order[:k]] = True
    return SparsityMask(keep=keep, gamma=gamma)


def keep_from_uniforms(u: np.ndarray, gamma: float, fixed_count: bool) -> np.ndarray:
    """Vectorized keep flags from pre-drawn uniforms, one row per sample.

    Bernoulli: keep where u >= gamma (probability 1-gamma). Fixed-count: the
    round((1-gamma)*T) smallest uniforms per row are kept, a uniform random
    subset of deterministic size.
    """
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"gamma must be in [0,1), got {gamma}")
    if not fixed_count:
        return u >= gamma
    num_tokens = u.shape[-1]
    k = fixed_keep_count(num_tokens, gamma)
    if k < 1:
        raise DegenerateMaskError(
            f"fixed-count mask keeps {k} of {num_tokens} tokens at gamma={gamma}"
        )
    order = np.argsort(u, axis=-1, kind="stable")
    keep = np.zeros(u.shape, dtype=bool)
    np.put_along_axis(keep, order[..., :k], True, axis=-1)
    return keep
