"""Grid sweeps over (gamma_strong, gamma_weak, omega).

Every sweep evaluates one unguided baseline row, recorded as
(0, 0, 1.0), then each admissible grid cell. All cells share the sampler
seed, so generations are paired across cells (common random numbers) and
the baseline row is bitwise the unguided run. Divergent cells are recorded
with a flag instead of aborting the sweep.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .costs import ArchSpec, guidance_flops
from .denoiser import Condition, Denoiser
from .errors import ConfigurationError, DegenerateMaskError, DivergenceError
from .guidance import GuidanceConfig
from .metrics import GaussianSummary, frechet_distance, gaussian_fit, pairwise_diversity
from .sampler import SamplerConfig, generate

SWEEP_COLUMNS = (
    "gamma_strong",
    "gamma_weak",
    "omega",
    "fd",
    "diversity",
    "flops_per_step",
    "diverged",
    "seed",
)


@dataclass(frozen=True)
class SweepGrid:
    gamma_strong: tuple[float, ...]
    gamma_weak: tuple[float, ...]
    omega: tuple[float, ...]
    samples_per_cell: int = 512
    fid_subset_size: int | None = None
    eval_metric: str = "fd"

    def __post_init__(self):
        if not (self.gamma_strong and self.gamma_weak and self.omega):
            raise ConfigurationError("sweep grids must be nonempty")
        if self.samples_per_cell < 2:
            raise ConfigurationError("samples_per_cell must be >= 2")
        if self.eval_metric != "fd":
            raise ConfigurationError(f"unknown eval metric {self.eval_metric!r}")

    @property
    def subset(self) -> int:
        return self.fid_subset_size or self.samples_per_cell


@dataclass(frozen=True)
class SweepRow:
    gamma_strong: float
    gamma_weak: float
    omega: float
    fd: float
    diversity: float
    flops_per_step: float
    diverged: bool
    seed: int

    def as_csv(self) -> dict:
        return {
            "gamma_strong": repr(self.gamma_strong),
            "gamma_weak": repr(self.gamma_weak),
            "omega": repr(self.omega),
            "fd": repr(self.fd),
            "diversity": repr(self.diversity),
            "flops_per_step": repr(self.flops_per_step),
            "diverged": int(self.diverged),
            "seed": self.seed,
        }


def admissible(mode: str, gamma_strong: float, gamma_weak: float) -> bool:
    """Cell admissibility under the branch-ordering constraint."""
    if mode == "sg":
        return gamma_strong < gamma_weak
    if mode == "cfg_sg":
        return gamma_strong <= gamma_weak
    return True


def _stratified_generate(
    models: dict[str, Denoiser],
    n: int,
    gcfg: GuidanceConfig,
    scfg: SamplerConfig,
) -> np.ndarray:
    """Class-balanced generation with absolute per-sample ids."""
    num_classes = models["main"].config.num_classes
    if n == 0:
        return generate(models, 0, Condition("null"), gcfg, scfg)
    parts = []
    offset = 0
    for label in range(num_classes):
        count = n // num_classes + (1 if label < n % num_classes else 0)
        if count == 0:
            continue
        parts.append(
            generate(
                models,
                count,
                Condition("class", label),
                gcfg,
                scfg,
                sample_offset=offset,
            )
        )
        offset += count
    return np.concatenate(parts, axis=0)


def _evaluate_cell(
    models: dict[str, Denoiser],
    gcfg: GuidanceConfig,
    scfg: SamplerConfig,
    grid: SweepGrid,
    reference: GaussianSummary,
    arch: ArchSpec,
    recorded: tuple[float, float, float],
) -> SweepRow:
    gs, gw, omega = recorded
    flops = guidance_flops(arch, gcfg, scfg).flops_per_step
    try:
        samples = _stratified_generate(models, grid.samples_per_cell, gcfg, scfg)
        subset = samples[: grid.subset].reshape(grid.subset, -1)
        fd = frechet_distance(gaussian_fit(subset), reference)
        diversity = pairwise_diversity(subset, seed=scfg.seed)
        return SweepRow(gs, gw, omega, fd, diversity, flops, False, scfg.seed)
    except (DivergenceError, DegenerateMaskError):
        return SweepRow(
            gs, gw, omega, float("nan"), float("nan"), flops, True, scfg.seed
        )


def sweep(
    models: dict[str, Denoiser],
    grid: SweepGrid,
    gcfg_base: GuidanceConfig,
    scfg: SamplerConfig,
    reference_samples: np.ndarray,
    workers: int = 1,
) -> list[SweepRow]:
    """Evaluate the baseline plus every admissible cell; rows in grid order."""
    if gcfg_base.mode not in ("sg", "cfg_sg", "ag_sg"):
        raise ConfigurationError(
            "sweeps vary sparsity rates; base mode must be sg, cfg_sg, or ag_sg"
        )
    ref = gaussian_fit(np.asarray(reference_samples).reshape(len(reference_samples), -1))
    arch = ArchSpec.from_denoiser_config(models["main"].config)

    jobs: list[tuple[GuidanceConfig, tuple[float, float, float]]] = []
    jobs.append((GuidanceConfig(mode="none"), (0.0, 0.0, 1.0)))
    skipped = 0
    for omega in grid.omega:
        for gs in grid.gamma_strong:
            for gw in grid.gamma_weak:
                if not admissible(gcfg_base.mode, gs, gw):
                    skipped += 1
                    continue
                gcfg = replace(
                    gcfg_base,
                    omega=omega,
                    gamma_strong=gs,
                    gamma_weak=gw,
                    schedule_strong=None,
                    schedule_weak=None,
                )
                jobs.append((gcfg, (gs, gw, omega)))

    def run(job):
        gcfg, recorded = job
        return _evaluate_cell(models, gcfg, scfg, grid, ref, arch, recorded)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(job) for job in jobs]
    return rows


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_csv())


def read_sweep_csv(path) -> list[SweepRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                SweepRow(
                    gamma_strong=float(rec["gamma_strong"]),
                    gamma_weak=float(rec["gamma_weak"]),
                    omega=float(rec["omega"]),
                    fd=float(rec["fd"]),
                    diversity=float(rec["diversity"]),
                    flops_per_step=float(rec["flops_per_step"]),
                    diverged=bool(int(rec["diverged"])),
                    seed=int(rec["seed"]),
                )
            )
    return rows
