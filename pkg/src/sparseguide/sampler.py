"""Deterministic Euler sampler with guided steps.

Each step: resolve the two branches, draw fresh per-sample masks for each
branch, run both sparse forwards, combine, integrate. All randomness comes
from two pre-drawn blocks (priors and mask uniforms) laid out sample-major,
so (seed, config, checkpoint) fully determine the output and batch chunking
cannot perturb per-sample draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import Condition, Denoiser
from .errors import ConfigurationError, DivergenceError, DomainError
from .guidance import GuidanceConfig, resolve_branches, sg_combine
from .masks import keep_from_uniforms, sample_mask, sample_mask_fixed_count
from .rng import SAMPLE_MASKS, SAMPLE_PRIOR, substream

__all__ = [
    "SamplerConfig",
    "sample_mask",
    "sample_mask_fixed_count",
    "euler_step",
    "guided_velocity",
    "generate",
]


@dataclass(frozen=True)
class SamplerConfig:
    num_steps: int = 40
    seed: int = 0
    batch_size: int = 1024
    mask_sampling: str = "bernoulli"  # "bernoulli" | "fixed_count"

    def __post_init__(self):
        if self.num_steps < 1:
            raise ConfigurationError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.mask_sampling not in ("bernoulli", "fixed_count"):
            raise ConfigurationError(
                f"unknown mask_sampling {self.mask_sampling!r}"
            )

    @property
    def t_grid(self) -> np.ndarray:
        """Uniform knots 0 = t_0 < ... < t_N = 1."""
        return np.linspace(0.0, 1.0, self.num_steps + 1)

    def step_fraction(self, step: int) -> float:
        if self.num_steps == 1:
            return 0.0
        return step / (self.num_steps - 1)


def euler_step(x: np.ndarray, v: np.ndarray, dt: float) -> np.ndarray:
    """One explicit Euler update x + dt * v."""
    if dt <= 0.0:
        raise DomainError(f"dt must be positive, got {dt}")
    return np.asarray(x, dtype=np.float64) + dt * np.asarray(v, dtype=np.float64)


def _branch_model(models: dict[str, Denoiser], name: str) -> Denoiser:
    if name not in models or models[name] is None:
        raise ConfigurationError(f"guidance needs a {name!r} model")
    return models[name]


def _branch_keep(model: Denoiser, gamma: float, u: np.ndarray, fixed_count: bool):
    if gamma == 0.0:
        return None
    if model.config.sparsity_mode == "dense":
        raise ConfigurationError(
            "gamma > 0 requires a mask- or route-mode model; this checkpoint "
            "was trained dense"
        )
    return keep_from_uniforms(u, gamma, fixed_count)


def guided_velocity(
    models: dict[str, Denoiser],
    x_t: np.ndarray,
    t: float,
    cond: Condition,
    gcfg: GuidanceConfig,
    step_fraction: float,
    rng,
    mask_sampling: str = "bernoulli",
) -> np.ndarray:
    """Combined velocity for one guided step on a batch of states.

    rng is either a Generator (uniforms drawn on the spot) or a pre-drawn
    uniform block of shape (batch, 2, T) — slot 0 feeds the strong branch,
    slot 1 the weak one (ignored under shared_mask).
    """
    main = _branch_model(models, "main")
    batch = np.asarray(x_t).shape[0]
    if gcfg.mode == "none":
        return main.predict_velocity(x_t, t, cond, keep=None)

    if gcfg.omega == 1.0:
        # the combine rule returns the strong branch bitwise; skip the weak
        strong, _ = resolve_branches(gcfg, step_fraction)
        u = _uniforms(rng, batch, main.config.tokens)
        model_s = _branch_model(models, strong.model)
        keep_s = _branch_keep(
            model_s, strong.gamma, u[:, 0, :], mask_sampling == "fixed_count"
        )
        cond_s = cond if strong.condition == "cond" else Condition("null")
        return model_s.predict_velocity(x_t, t, cond_s, keep=keep_s)

    strong, weak = resolve_branches(gcfg, step_fraction)
    u = _uniforms(rng, batch, main.config.tokens)
    fixed = mask_sampling == "fixed_count"

    model_s = _branch_model(models, strong.model)
    model_w = _branch_model(models, weak.model)
    u_strong = u[:, 0, :]
    u_weak = u_strong if gcfg.shared_mask else u[:, 1, :]
    keep_s = _branch_keep(model_s, strong.gamma, u_strong, fixed)
    keep_w = _branch_keep(model_w, weak.gamma, u_weak, fixed)
    cond_s = cond if strong.condition == "cond" else Condition("null")
    cond_w = cond if weak.condition == "cond" else Condition("null")

    v_strong = model_s.predict_velocity(x_t, t, cond_s, keep=keep_s)
    v_weak = model_w.predict_velocity(x_t, t, cond_w, keep=keep_w)
    return sg_combine(v_strong, v_weak, gcfg.omega)


def _uniforms(rng, batch: int, tokens: int) -> np.ndarray:
    if isinstance(rng, np.random.Generator):
        return rng.random((batch, 2, tokens))
    u = np.asarray(rng)
    if u.shape != (batch, 2, tokens):
        raise DomainError(
            f"mask uniform block has shape {u.shape}, expected {(batch, 2, tokens)}"
        )
    return u


def generate(
    models: dict[str, Denoiser],
    n: int,
    cond: Condition,
    gcfg: GuidanceConfig,
    scfg: SamplerConfig,
    sample_offset: int = 0,
) -> np.ndarray:
    """Integrate n samples from the prior to t=1 under guidance.

    sample_offset shifts the absolute sample ids (and so the per-sample
    randomness), letting callers assemble class-stratified sets whose draws
    do not depend on how the work is batched.
    """
    main = _branch_model(models, "main")
    cfg = main.config
    data_shape = (2,) if cfg.data_kind == "points2d" else (cfg.grid_size, cfg.grid_size)
    if n == 0:
        return np.zeros((0,) + data_shape)

    steps = scfg.num_steps
    tokens = cfg.tokens
    total = sample_offset + n
    # sample-major pre-draw: row i is sample i's randomness regardless of n
    z_all = substream(scfg.seed, SAMPLE_PRIOR).normal(
        size=(total,) + data_shape
    )
    u_all = substream(scfg.seed, SAMPLE_MASKS).random((total, steps, 2, tokens))
    z = z_all[sample_offset:]
    u = u_all[sample_offset:]

    grid = scfg.t_grid
    out = np.empty((n,) + data_shape)
    for lo in range(0, n, scfg.batch_size):
        hi = min(lo + scfg.batch_size, n)
        x = z[lo:hi].copy()
        for k in range(steps):
            v = guided_velocity(
                models,
                x,
                float(grid[k]),
                cond,
                gcfg,
                scfg.step_fraction(k),
                u[lo:hi, k],
                mask_sampling=scfg.mask_sampling,
            )
            x = euler_step(x, v, float(grid[k + 1] - grid[k]))
            if not np.all(np.isfinite(x)):
                raise DivergenceError(
                    f"non-finite state at step {k} (t={grid[k]:.4f})", step=k
                )
        out[lo:hi] = x
    return out
