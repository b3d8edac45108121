"""Guidance combination rules, branch resolution, and named presets.

All two-branch modes share one linear rule, omega * strong + (1 - omega) *
weak; they differ only in what the weak branch is:

    cfg     same model, null condition, both dense
    sg      same model, same condition, higher sparsity rate
    cfg_sg  sg whose weak branch also gets the null condition
    ag      auxiliary (earlier) checkpoint, conditional, both dense
    ag_sg   auxiliary checkpoint plus per-branch sparsity schedules

omega == 1.0 short-circuits to the strong prediction unchanged: the literal
formula adds 0.0 * weak, which can flip signed zeros, and the reduction
identities are bitwise contracts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, DomainError, GammaOrderingError

MODES = ("none", "cfg", "sg", "cfg_sg", "ag", "ag_sg")

# modes whose weak branch is the same model and same condition: those need a
# strict sparsity gap to have any signal at all
STRICT_GAMMA_MODES = ("sg",)
# modes evaluating two branches per step
TWO_BRANCH_MODES = ("cfg", "sg", "cfg_sg", "ag", "ag_sg")
AUX_MODES = ("ag", "ag_sg")


@dataclass(frozen=True)
class GammaSchedule:
    """Per-step sparsity rate: constant, or cosine from start to end."""

    kind: str = "constant"
    start_value: float = 0.0
    end_value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        for v in (self.start_value, self.end_value):
            if not 0.0 <= v < 1.0:
                raise ConfigurationError(f"schedule value {v} outside [0,1)")

    def __call__(self, step_fraction: float) -> float:
        return gamma_schedule(self, step_fraction)


def gamma_schedule(sched: GammaSchedule, step_fraction: float) -> float:
    """Evaluate a schedule at a fraction of the trajectory."""
    if not 0.0 <= step_fraction <= 1.0:
        raise DomainError(f"step_fraction must be in [0,1], got {step_fraction}")
    if sched.kind == "constant":
        return sched.start_value
    half = (1.0 + math.cos(math.pi * step_fraction)) / 2.0
    return sched.end_value + (sched.start_value - sched.end_value) * half


@dataclass(frozen=True)
class BranchSpec:
    """One branch of a guided step.

    condition is "cond" (the sampling condition) or "null"; model is "main"
    or "aux" (the auxiliary checkpoint configured on the GuidanceConfig).
    """

    model: str
    condition: str
    gamma: float
    aux_checkpoint: object = None

    def __post_init__(self):
        if self.model not in ("main", "aux"):
            raise ConfigurationError(f"unknown branch model {self.model!r}")
        if self.condition not in ("cond", "null"):
            raise ConfigurationError(f"unknown branch condition {self.condition!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"branch gamma {self.gamma} outside [0,1)")


@dataclass(frozen=True)
class GuidanceConfig:
    mode: str = "none"
    omega: float = 1.0
    gamma_strong: float = 0.0
    gamma_weak: float = 0.0
    schedule_strong: GammaSchedule | None = None
    schedule_weak: GammaSchedule | None = None
    shared_mask: bool = False
    aux_checkpoint: object = None  # id resolved by the harness

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown guidance mode {self.mode!r}")
        if self.omega < 0.0:
            raise ConfigurationError(f"omega must be >= 0, got {self.omega}")
        for g in (self.gamma_strong, self.gamma_weak):
            if not 0.0 <= g < 1.0:
                raise ConfigurationError(f"gamma {g} outside [0,1)")
        if self.mode in AUX_MODES and self.aux_checkpoint is None:
            raise ConfigurationError(f"mode {self.mode} requires aux_checkpoint")
        if self.mode in STRICT_GAMMA_MODES:
            for frac in (0.0, 1.0):
                gs = self.strong_schedule()(frac)
                gw = self.weak_schedule()(frac)
                if not gs < gw:
                    raise GammaOrderingError(
                        f"mode sg needs gamma_strong < gamma_weak at every "
                        f"schedule point; got {gs} >= {gw} at fraction {frac}"
                    )
        if self.mode == "cfg_sg":
            for frac in (0.0, 1.0):
                gs = self.strong_schedule()(frac)
                gw = self.weak_schedule()(frac)
                if gs > gw:
                    raise GammaOrderingError(
                        f"cfg_sg needs gamma_strong <= gamma_weak; got "
                        f"{gs} > {gw} at fraction {frac}"
                    )

    def strong_schedule(self) -> GammaSchedule:
        if self.schedule_strong is not None:
            return self.schedule_strong
        return GammaSchedule("constant", self.gamma_strong, self.gamma_strong)

    def weak_schedule(self) -> GammaSchedule:
        if self.schedule_weak is not None:
            return self.schedule_weak
        return GammaSchedule("constant", self.gamma_weak, self.gamma_weak)


def cfg_combine(v_cond: np.ndarray, v_uncond: np.ndarray, omega: float) -> np.ndarray:
    """omega * conditional + (1 - omega) * unconditional."""
    v_cond = np.asarray(v_cond, dtype=np.float64)
    v_uncond = np.asarray(v_uncond, dtype=np.float64)
    if v_cond.shape != v_uncond.shape:
        raise DimensionError(
            f"cfg_combine: shapes differ {v_cond.shape} vs {v_uncond.shape}"
        )
    if omega == 1.0:
        return v_cond
    return omega * v_cond + (1.0 - omega) * v_uncond


def sg_combine(v_strong: np.ndarray, v_weak: np.ndarray, omega: float) -> np.ndarray:
    """omega * strong + (1 - omega) * weak; the weak branch supplies the
    direction strong - weak scaled by omega - 1."""
    v_strong = np.asarray(v_strong, dtype=np.float64)
    v_weak = np.asarray(v_weak, dtype=np.float64)
    if v_strong.shape != v_weak.shape:
        raise DimensionError(
            f"sg_combine: shapes differ {v_strong.shape} vs {v_weak.shape}"
        )
    if omega == 1.0:
        return v_strong
    return omega * v_strong + (1.0 - omega) * v_weak


def resolve_branches(
    cfg: GuidanceConfig, step_fraction: float
) -> tuple[BranchSpec, BranchSpec]:
    """Strong and weak branch specs at a point along the trajectory."""
    if cfg.mode == "none":
        raise ConfigurationError("mode 'none' has no branches to resolve")
    gs = cfg.strong_schedule()(step_fraction)
    gw = cfg.weak_schedule()(step_fraction)
    if cfg.mode in STRICT_GAMMA_MODES and not gs < gw:
        raise GammaOrderingError(
            f"gamma_strong {gs} >= gamma_weak {gw} at fraction {step_fraction}"
        )
    if cfg.mode == "cfg_sg" and gs > gw:
        raise GammaOrderingError(
            f"gamma_strong {gs} > gamma_weak {gw} at fraction {step_fraction}"
        )
    if cfg.mode == "cfg":
        return (
            BranchSpec("main", "cond", 0.0),
            BranchSpec("main", "null", 0.0),
        )
    if cfg.mode == "sg":
        return (
            BranchSpec("main", "cond", gs),
            BranchSpec("main", "cond", gw),
        )
    if cfg.mode == "cfg_sg":
        return (
            BranchSpec("main", "cond", gs),
            BranchSpec("main", "null", gw),
        )
    # ag / ag_sg: the weak branch is the auxiliary checkpoint, conditional
    aux = cfg.aux_checkpoint
    if cfg.mode == "ag":
        return (
            BranchSpec("main", "cond", 0.0),
            BranchSpec("aux", "cond", 0.0, aux_checkpoint=aux),
        )
    return (
        BranchSpec("main", "cond", gs),
        BranchSpec("aux", "cond", gw, aux_checkpoint=aux),
    )


def preset(name: str, omega: float = 1.5, aux_checkpoint=None) -> GuidanceConfig:
    """Named guidance configurations loadable from the CLI."""
    key = name.replace("_", "-").lower()
    if key == "cfg":
        return GuidanceConfig(mode="cfg", omega=omega)
    if key == "sg":
        return GuidanceConfig(mode="sg", omega=omega, gamma_strong=0.0, gamma_weak=0.5)
    if key == "cfg-sg":
        return GuidanceConfig(
            mode="cfg_sg", omega=omega, gamma_strong=0.2, gamma_weak=0.7
        )
    if key == "ag":
        return GuidanceConfig(mode="ag", omega=omega, aux_checkpoint=aux_checkpoint)
    if key == "sg-flops":
        return GuidanceConfig(
            mode="sg", omega=omega, gamma_strong=0.5, gamma_weak=0.9
        )
    if key == "sg-fid":
        return GuidanceConfig(
            mode="ag_sg",
            omega=omega,
            schedule_strong=GammaSchedule("cosine", 0.0, 0.6),
            schedule_weak=GammaSchedule("cosine", 0.6, 0.0),
            aux_checkpoint=aux_checkpoint,
        )
    raise ConfigurationError(f"unknown guidance preset {name!r}")


PRESET_NAMES = ("cfg", "sg", "cfg-sg", "ag", "sg-flops", "sg-fid")
