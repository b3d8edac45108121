"""Flow-matching interpolant, oracle velocity, and training losses.

The straight interpolation path is x_t = (1-t) z + t x with constant oracle
velocity x - z. Losses operate on token-major arrays (..., T, out_dim): the
flow-matching term averages per-token squared error over visible tokens, and
the masked auxiliary term weights the squared prediction norm on hidden
tokens by (1-t)^2. Both forms of the auxiliary term (velocity and
reconstruction) are exposed so their equivalence is executable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import (
    ConfigurationError,
    DegenerateMaskError,
    DimensionError,
    DomainError,
)
from .masks import SparsityMask, keep_from_uniforms


@dataclass(frozen=True)
class InterpolantSample:
    """One (prior, data, time) triple with its interpolated state."""

    z: np.ndarray
    x: np.ndarray
    t: float
    x_t: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.x_t is None:
            object.__setattr__(self, "x_t", interpolate(self.z, self.x, self.t))
        else:
            expected = interpolate(self.z, self.x, self.t)
            if not np.allclose(self.x_t, expected, atol=1e-12, rtol=0.0):
                raise ValueError("x_t does not lie on the interpolation path")


@dataclass(frozen=True)
class LossConfig:
    """Weights and rates for the combined training objective."""

    lam: float = 0.1
    train_gamma: float = 0.5
    time_sampling: str = "uniform"

    def __post_init__(self):
        if self.lam < 0.0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.train_gamma < 1.0:
            raise ConfigurationError(
                f"train_gamma must be in [0,1), got {self.train_gamma}"
            )
        if self.time_sampling != "uniform":
            raise ConfigurationError(
                f"unsupported time_sampling {self.time_sampling!r}"
            )


def _broadcast_time(t, ndim: int) -> np.ndarray:
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise DomainError(f"t must lie in [0,1], got {t}")
    while t_arr.ndim < ndim:
        t_arr = t_arr[..., None]
    return t_arr


def interpolate(z: np.ndarray, x: np.ndarray, t) -> np.ndarray:
    """Point on the straight path: (1-t) z + t x. t may be per-sample."""
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if z.shape != x.shape:
        raise DimensionError(f"interpolate: shapes differ {z.shape} vs {x.shape}")
    t_arr = _broadcast_time(t, x.ndim)
    return (1.0 - t_arr) * z + t_arr * x


def oracle_velocity(z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Ground-truth velocity of the straight path: x - z, constant in t."""
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if z.shape != x.shape:
        raise DimensionError(f"oracle_velocity: shapes differ {z.shape} vs {x.shape}")
    return x - z


def reconstruct_from_velocity(x_t: np.ndarray, t, v: np.ndarray) -> np.ndarray:
    """Implied clean-sample estimate: x_t + (1-t) v."""
    x_t = np.asarray(x_t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if x_t.shape != v.shape:
        raise DimensionError(
            f"reconstruct_from_velocity: shapes differ {x_t.shape} vs {v.shape}"
        )
    t_arr = _broadcast_time(t, v.ndim)
    return x_t + (1.0 - t_arr) * v


def _keep_flags(mask, invert: bool) -> np.ndarray:
    if isinstance(mask, SparsityMask):
        flags = mask.dropped if invert else mask.keep
    else:
        flags = np.asarray(mask, dtype=bool)
    return flags


def _token_weights(flags: np.ndarray, token_shape: tuple[int, ...], allow_empty: bool):
    """Per-token averaging weights: 1/(batch * per-sample selected count).

    flags has the token shape (tokens,) or (batch, tokens). Samples with an
    empty selection raise unless allow_empty, in which case they contribute
    zero (the vacuous-term convention).
    """
    if flags.shape != token_shape:
        raise DimensionError(
            f"mask shape {flags.shape} does not match token shape {token_shape}"
        )
    flat = flags.reshape(-1, flags.shape[-1])
    counts = flat.sum(axis=1)
    if np.any(counts == 0):
        if not allow_empty:
            raise DegenerateMaskError("a sample has no tokens in the selected set")
        counts = np.where(counts == 0, 1, counts)
    w = flat / counts[:, None] / flat.shape[0]
    return w.reshape(flags.shape)


def _weighted_sq_sum(v, weights: np.ndarray):
    """sum(weights_token * ||v_token||^2); v may be a Tensor or ndarray."""
    if isinstance(v, ad.Tensor):
        w_full = np.broadcast_to(weights[..., None], v.shape).copy()
        return ad.sum_all(ad.mul(ad.mul(v, v), ad.constant(w_full)))
    v = np.asarray(v, dtype=np.float64)
    return float(np.sum(v * v * weights[..., None]))


def fm_loss(v_pred, v_star, visible_mask=None):
    """Flow-matching error: mean over visible tokens of per-token ||err||^2.

    v_pred and v_star are token-major (..., T, out_dim); v_pred may be a
    Tensor (training) or an ndarray. visible_mask is a SparsityMask or a
    boolean keep array over the token axes; None grades every token.
    """
    star = np.asarray(v_star, dtype=np.float64)
    pred_shape = v_pred.shape
    if pred_shape != star.shape:
        raise DimensionError(f"fm_loss: shapes differ {pred_shape} vs {star.shape}")
    token_shape = pred_shape[:-1]
    if visible_mask is None:
        flags = np.ones(token_shape, dtype=bool)
    else:
        flags = _keep_flags(visible_mask, invert=False)
    weights = _token_weights(flags, token_shape, allow_empty=False)
    if isinstance(v_pred, ad.Tensor):
        err = ad.add(v_pred, ad.constant(-star))
    else:
        err = np.asarray(v_pred, dtype=np.float64) - star
    return _weighted_sq_sum(err, weights)


def mae_aux_loss(v_pred_on_masked_input, t, mask):
    """Masked auxiliary term: (1-t)^2 * mean over hidden tokens of ||v||^2.

    mask marks the hidden tokens (SparsityMask's dropped side, or a boolean
    array that is True where hidden). t may be scalar or per-sample. A sample
    with no hidden tokens contributes zero.
    """
    token_shape = v_pred_on_masked_input.shape[:-1]
    flags = _keep_flags(mask, invert=True)
    weights = _token_weights(flags, token_shape, allow_empty=True)
    t_arr = _broadcast_time(t, len(token_shape))
    weights = weights * np.broadcast_to((1.0 - t_arr) ** 2, token_shape)
    return _weighted_sq_sum(v_pred_on_masked_input, weights)


def mae_loss_reconstruction_form(x_t: np.ndarray, t, v: np.ndarray, mask) -> float:
    """Auxiliary term evaluated through the clean-sample estimate.

    Computes mean over hidden tokens of ||D - x_t||^2 with
    D = reconstruct_from_velocity(x_t, t, v): the reconstruction-residual
    reading of the same quantity as mae_aux_loss, equal to it exactly.
    """
    d = reconstruct_from_velocity(x_t, t, v)
    token_shape = v.shape[:-1]
    flags = _keep_flags(mask, invert=True)
    weights = _token_weights(flags, token_shape, allow_empty=True)
    resid = d - np.asarray(x_t, dtype=np.float64)
    return float(np.sum(resid * resid * weights[..., None]))


def combined_loss(model, batch, cfg: LossConfig, rng: np.random.Generator):
    """Training objective on one batch: visible flow-matching error plus the
    lambda-weighted masked auxiliary term (masking mode only).

    batch is (x, labels) with x of shape (B, data_dim) or (B, H, W) depending
    on the model's data kind. Routing models must run with lam == 0; they use
    the plain flow-matching objective over all tokens. Returns a scalar
    Tensor wired to the model parameters.
    """
    x, labels = batch
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("combined_loss: empty batch")
    mode = model.config.sparsity_mode
    if mode == "route" and cfg.lam > 0.0:
        raise ConfigurationError(
            "routing uses the plain flow-matching objective; set lambda to 0"
        )

    batch_size = x.shape[0]
    t = rng.random(batch_size)
    z = rng.normal(size=x.shape)
    x_t = interpolate(z, x, t)
    v_star = oracle_velocity(z, x)

    if mode == "dense":
        keep = None
    else:
        # fixed-count subsets keep training batches rectangular
        u = rng.random((batch_size, model.config.tokens))
        keep = keep_from_uniforms(u, cfg.train_gamma, fixed_count=True)

    v_tok = model.forward_data(x_t, t, labels, keep)
    star_tok = model.token_targets(v_star)

    if mode == "mask":
        loss = fm_loss(v_tok, star_tok, visible_mask=keep)
        if cfg.lam > 0.0:
            aux = mae_aux_loss(v_tok, t, mask=~keep)
            loss = ad.add(loss, ad.scale(aux, cfg.lam))
        return loss
    return fm_loss(v_tok, star_tok, None)
