"""Training loop: AdamW on the combined flow-matching objective.

Checkpoints are captured at configured fractions of the run (floor(fraction
* iterations), deduplicated) so undertrained auxiliaries for
checkpoint-based guidance fall out of a single run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .checkpoint import Checkpoint
from .costs import ArchSpec, forward_flops
from .denoiser import Denoiser, DenoiserConfig
from .errors import ConfigurationError, DivergenceError
from .flow import LossConfig, combined_loss
from .datasets import dataset_kind, dataset_num_classes, make_dataset
from .rng import TRAIN, substream


@dataclass(frozen=True)
class OptimizerConfig:
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    iterations: int = 2000
    batch_size: int = 128

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigurationError("betas must lie in [0,1)")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "gaussians8"
    train_size: int = 4096
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    ckpt_fractions: tuple[float, ...] = (1.0,)
    cond_dropout: float = 0.1

    def __post_init__(self):
        for f in self.ckpt_fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigurationError(
                    f"checkpoint fractions must be in (0,1], got {f}"
                )
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ConfigurationError("cond_dropout must be in [0,1)")
        if self.denoiser.num_classes != dataset_num_classes(self.dataset):
            raise ConfigurationError(
                f"denoiser num_classes {self.denoiser.num_classes} != "
                f"{self.dataset} classes {dataset_num_classes(self.dataset)}"
            )
        if self.denoiser.data_kind != dataset_kind(self.dataset):
            raise ConfigurationError(
                f"denoiser data_kind {self.denoiser.data_kind} does not match "
                f"dataset {self.dataset}"
            )
        if self.denoiser.sparsity_mode == "route" and self.loss.lam != 0.0:
            raise ConfigurationError("routing training requires lambda = 0")


class AdamW:
    """Decoupled weight decay Adam over a parameter dict."""

    def __init__(self, params: dict, cfg: OptimizerConfig):
        self.params = params
        self.cfg = cfg
        self.step_count = 0
        self._m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self._v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self) -> None:
        self.step_count += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1**self.step_count
        bc2 = 1.0 - c.beta2**self.step_count
        for name, tensor in self.params.items():
            if tensor.grad is None:
                continue
            kernels.adam_step(
                tensor.data.reshape(-1),
                np.ascontiguousarray(tensor.grad).reshape(-1),
                self._m[name].reshape(-1),
                self._v[name].reshape(-1),
                c.step_size,
                c.beta1,
                c.beta2,
                1e-8,
                c.weight_decay,
                bc1,
                bc2,
            )


def checkpoint_iterations(fractions, total: int) -> list[int]:
    """floor(fraction * total), deduplicated and increasing."""
    return sorted({math.floor(f * total) for f in fractions})


@dataclass
class TrainResult:
    checkpoints: list[Checkpoint]
    losses: list[float]
    train_flops_per_iteration: float

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]


def train(
    cfg: ExperimentConfig,
    init: Checkpoint | None = None,
    log=None,
) -> TrainResult:
    """Optimize the combined loss; emit checkpoints at the cadence fractions.

    init warm-starts from an existing checkpoint (reduced-step finetuning);
    its config must match. Loss is logged every ~5% of the run through
    log(iteration, loss) when given. Non-finite loss aborts with the
    iteration index.
    """
    x_all, labels_all = make_dataset(cfg.dataset, cfg.train_size, cfg.seed)
    if init is not None:
        if init.config != cfg.denoiser:
            raise ConfigurationError("init checkpoint config differs from experiment")
        model = init.to_model()
    else:
        model = Denoiser(cfg.denoiser, seed=cfg.seed)
    rng = substream(cfg.seed, TRAIN)
    opt = AdamW(model.params, cfg.optimizer)

    total = cfg.optimizer.iterations
    marks = checkpoint_iterations(cfg.ckpt_fractions, total)
    if total == 0:
        marks = [0]
    null_label = cfg.denoiser.null_label

    gamma_train = (
        cfg.loss.train_gamma if cfg.denoiser.sparsity_mode != "dense" else 0.0
    )
    arch = ArchSpec.from_denoiser_config(cfg.denoiser)
    flops_per_iter = (
        forward_flops(arch, gamma_train) * cfg.optimizer.batch_size
    )

    checkpoints: list[Checkpoint] = []
    losses: list[float] = []
    log_every = max(1, total // 20)

    def capture(iteration: int) -> None:
        checkpoints.append(
            Checkpoint.from_model(
                model, iteration, rng_state=rng.bit_generator.state
            )
        )

    if 0 in marks:
        capture(0)
    for it in range(total):
        idx = rng.integers(0, cfg.train_size, size=cfg.optimizer.batch_size)
        xb = x_all[idx]
        lb = labels_all[idx].copy()
        if cfg.cond_dropout > 0.0:
            drop = rng.random(cfg.optimizer.batch_size) < cfg.cond_dropout
            lb[drop] = null_label
        loss = combined_loss(model, (xb, lb), cfg.loss, rng)
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss at iteration {it}", step=it)
        losses.append(value)
        model.zero_grads()
        loss.backward()
        opt.step()
        if log is not None and (it % log_every == 0 or it == total - 1):
            log(it, value)
        if (it + 1) in marks:
            capture(it + 1)

    if not checkpoints:
        capture(total)
    return TrainResult(
        checkpoints=checkpoints,
        losses=losses,
        train_flops_per_iteration=flops_per_iter,
    )
