"""Analytic FLOP accounting for sparse forwards and guided sampling.

Two conventions live here deliberately:

* ``layer_flops`` counts each multiply-add as 2 FLOPs and includes the
  attention score/value matmuls — the plain arithmetic reading.
* ``forward_flops`` / ``guidance_flops`` report in the profiler convention
  most published GFLOPs tables use: one multiply-add counts once, the
  per-block modulation projection is included, and the attention score
  matmuls are excluded unless ``include_attention_scores`` is set. Reports
  print the active convention so numbers are comparable at a glance.

Sparsity accounting uses expected token counts ((1-gamma) * T), so reports
are deterministic; Bernoulli realization noise belongs to the sampler, not
the ledger.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserConfig, RouteSpec
from .errors import ConfigurationError, DomainError
from .guidance import GuidanceConfig
from .sampler import SamplerConfig

CONVENTION = (
    "multiply-add counted once; attention score/value matmuls excluded "
    "(profiler convention)"
)
CONVENTION_WITH_SCORES = "multiply-add counted once; attention score/value matmuls included"


@dataclass(frozen=True)
class ArchSpec:
    """Transformer shape parameters the cost model needs."""

    name: str
    num_layers: int
    model_dim: int
    num_heads: int
    mlp_ratio: float
    tokens: int
    in_dim: int
    out_dim: int
    freq_dim: int
    route: RouteSpec
    sparsity_mode: str = "route"

    @classmethod
    def from_denoiser_config(cls, cfg: DenoiserConfig, name: str = "custom") -> "ArchSpec":
        return cls(
            name=name,
            num_layers=cfg.num_layers,
            model_dim=cfg.model_dim,
            num_heads=cfg.num_heads,
            mlp_ratio=cfg.mlp_ratio,
            tokens=cfg.tokens,
            in_dim=cfg.token_in_dim,
            out_dim=cfg.token_out_dim,
            freq_dim=cfg.model_dim,
            route=cfg.route,
            sparsity_mode=cfg.sparsity_mode,
        )


# SiT-XL/2 on 256x256: 32x32 latent with 4 channels, patch 2 -> 256 tokens
XL2 = ArchSpec(
    name="xl2",
    num_layers=28,
    model_dim=1152,
    num_heads=16,
    mlp_ratio=4,
    tokens=256,
    in_dim=16,
    out_dim=16,
    freq_dim=256,
    route=RouteSpec(2, 24),
    sparsity_mode="route",
)

DESK = ArchSpec(
    name="desk",
    num_layers=6,
    model_dim=64,
    num_heads=4,
    mlp_ratio=4,
    tokens=4,
    in_dim=2,
    out_dim=2,
    freq_dim=64,
    route=RouteSpec(1, 5),
    sparsity_mode="route",
)

ARCH_PRESETS = {"xl2": XL2, "desk": DESK}


@dataclass(frozen=True)
class CostReport:
    """Per-forward, per-step, and per-sample FLOPs with baseline deltas."""

    mode: str
    flops_strong: float
    flops_weak: float
    flops_per_step: float
    flops_per_sample: float
    delta_vs_unguided: float
    delta_vs_cfg: float
    num_steps: int
    convention: str = CONVENTION

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "flops_strong": self.flops_strong,
            "flops_weak": self.flops_weak,
            "flops_per_step": self.flops_per_step,
            "flops_per_sample": self.flops_per_sample,
            "delta_vs_unguided": self.delta_vs_unguided,
            "delta_vs_cfg": self.delta_vs_cfg,
            "num_steps": self.num_steps,
            "convention": self.convention,
        }


def layer_flops(d: int, heads: int, t_active: float, mlp_ratio: float) -> float:
    """One transformer layer in raw FLOPs (multiply-add = 2).

    Attention: QKVO projections plus score/value matmuls; feed-forward: two
    projections at the given expansion ratio. heads does not change the
    total (score work is T^2 * d regardless of the split).
    """
    if t_active < 0:
        raise DomainError(f"t_active must be >= 0, got {t_active}")
    if t_active == 0:
        return 0.0
    attn = 2.0 * (4.0 * d * d * t_active + 2.0 * d * t_active * t_active)
    ff = 2.0 * (2.0 * mlp_ratio * d * d * t_active)
    return attn + ff


def _layer_macs(
    d: int, t_active: float, mlp_ratio: float, include_attention_scores: bool
) -> float:
    if t_active == 0:
        return 0.0
    macs = (4.0 + 2.0 * mlp_ratio) * d * d * t_active
    if include_attention_scores:
        macs += 2.0 * d * t_active * t_active
    macs += 6.0 * d * d  # per-block modulation projection
    return macs


def _extras_macs(arch: ArchSpec) -> float:
    d = arch.model_dim
    t = arch.tokens
    embed = t * arch.in_dim * d
    head = t * d * arch.out_dim
    t_mlp = arch.freq_dim * d + d * d
    final_mod = 2.0 * d * d
    return embed + head + t_mlp + final_mod


def forward_flops(
    arch: ArchSpec,
    gamma: float,
    route: RouteSpec | None = None,
    *,
    mode: str | None = None,
    include_attention_scores: bool = False,
    drop_mode: bool = False,
) -> float:
    """One forward pass in reported GFLOP units (see module docstring).

    Routing thins the layers inside the span to the expected kept count;
    masking substitutes tokens without shrinking the sequence, so it costs
    the dense forward unless drop_mode models encoder-style dropping.
    """
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"gamma must be in [0,1), got {gamma}")
    mode = mode if mode is not None else arch.sparsity_mode
    route = route if route is not None else arch.route
    d = arch.model_dim
    t_full = float(arch.tokens)
    t_kept = (1.0 - gamma) * t_full

    total = _extras_macs(arch)
    if mode == "route" and gamma > 0.0:
        route.validate(arch.num_layers)
        span = range(route.start_layer, route.end_layer)
        for layer in range(arch.num_layers):
            t_act = t_kept if layer in span else t_full
            total += _layer_macs(d, t_act, arch.mlp_ratio, include_attention_scores)
    else:
        if mode == "mask" and drop_mode:
            t_act = t_kept
        else:
            t_act = t_full  # dense, or masking: substitution keeps full T
        total += arch.num_layers * _layer_macs(
            d, t_act, arch.mlp_ratio, include_attention_scores
        )
    return total


def guidance_flops(
    arch: ArchSpec,
    gcfg: GuidanceConfig,
    scfg: SamplerConfig,
    *,
    include_attention_scores: bool = False,
    drop_mode: bool = False,
) -> CostReport:
    """Schedule-averaged cost of guided sampling under the given configs."""
    kwargs = dict(
        include_attention_scores=include_attention_scores, drop_mode=drop_mode
    )
    dense = forward_flops(arch, 0.0, **kwargs)
    steps = scfg.num_steps
    convention = CONVENTION_WITH_SCORES if include_attention_scores else CONVENTION

    if gcfg.mode == "none":
        per_step = dense
        strong = dense
        weak = 0.0
    else:
        fractions = [scfg.step_fraction(k) for k in range(steps)]
        sched_s = gcfg.strong_schedule()
        sched_w = gcfg.weak_schedule()
        strong = float(
            np.mean([forward_flops(arch, sched_s(f), **kwargs) for f in fractions])
        )
        weak = float(
            np.mean([forward_flops(arch, sched_w(f), **kwargs) for f in fractions])
        )
        per_step = strong + weak

    return CostReport(
        mode=gcfg.mode,
        flops_strong=strong,
        flops_weak=weak,
        flops_per_step=per_step,
        flops_per_sample=per_step * steps,
        delta_vs_unguided=per_step - dense,
        delta_vs_cfg=per_step - 2.0 * dense,
        num_steps=steps,
        convention=convention,
    )


def comparison_rows(
    arch: ArchSpec, scfg: SamplerConfig, gcfgs: dict[str, GuidanceConfig]
) -> list[dict]:
    """Baseline row plus one row per named guidance config, in GFLOPs."""
    rows = []
    base = guidance_flops(arch, GuidanceConfig(mode="none"), scfg)
    rows.append({"name": "baseline", **base.as_dict()})
    for name, gcfg in gcfgs.items():
        rep = guidance_flops(arch, gcfg, scfg)
        rows.append({"name": name, **rep.as_dict()})
    return rows


def arch_preset(name: str) -> ArchSpec:
    try:
        return ARCH_PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown arch preset {name!r}; have {sorted(ARCH_PRESETS)}"
        ) from None
