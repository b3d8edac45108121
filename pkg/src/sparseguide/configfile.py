"""Flat key = value configuration files.

One assignment per line, sections spelled with dots (denoiser.num_layers =
6), '#' comments. The same format round-trips through run manifests so a
finished run's config.txt is directly rerunnable.
"""

from __future__ import annotations

from pathlib import Path

from .denoiser import DenoiserConfig, RouteSpec
from .flow import LossConfig
from .guidance import GammaSchedule, GuidanceConfig, preset
from .sampler import SamplerConfig
from .sweep import SweepGrid
from .training import ExperimentConfig, OptimizerConfig


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno} is not a key = value pair: {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_config(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def format_config(flat: dict[str, str]) -> str:
    return "\n".join(f"{k} = {v}" for k, v in sorted(flat.items())) + "\n"


def apply_overrides(flat: dict[str, str], overrides: list[str]) -> dict[str, str]:
    out = dict(flat)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        out[key.strip()] = value.strip()
    return out


def _get(flat, key, default):
    return flat.get(key, default)


def _get_float_list(flat, key, default):
    raw = flat.get(key)
    if raw is None:
        return default
    return tuple(float(tok) for tok in raw.split(",") if tok.strip())


def denoiser_from_flat(flat: dict[str, str]) -> DenoiserConfig:
    d = DenoiserConfig()
    return DenoiserConfig(
        num_layers=int(_get(flat, "denoiser.num_layers", d.num_layers)),
        model_dim=int(_get(flat, "denoiser.model_dim", d.model_dim)),
        num_heads=int(_get(flat, "denoiser.num_heads", d.num_heads)),
        mlp_ratio=int(_get(flat, "denoiser.mlp_ratio", d.mlp_ratio)),
        data_kind=_get(flat, "denoiser.data_kind", d.data_kind),
        token_count=int(_get(flat, "denoiser.token_count", d.token_count)),
        grid_size=int(_get(flat, "denoiser.grid_size", d.grid_size)),
        patch_size=int(_get(flat, "denoiser.patch_size", d.patch_size)),
        num_classes=int(_get(flat, "denoiser.num_classes", d.num_classes)),
        sparsity_mode=_get(flat, "denoiser.sparsity_mode", d.sparsity_mode),
        route=RouteSpec(
            int(_get(flat, "denoiser.route_start", d.route.start_layer)),
            int(_get(flat, "denoiser.route_end", d.route.end_layer)),
        ),
        rope_theta=float(_get(flat, "denoiser.rope_theta", d.rope_theta)),
    )


def experiment_from_flat(flat: dict[str, str]) -> ExperimentConfig:
    e = ExperimentConfig()
    o = OptimizerConfig()
    ls = LossConfig()
    fractions = _get_float_list(flat, "checkpoint_fractions", e.ckpt_fractions)
    return ExperimentConfig(
        dataset=_get(flat, "dataset", e.dataset),
        train_size=int(_get(flat, "train_size", e.train_size)),
        denoiser=denoiser_from_flat(flat),
        loss=LossConfig(
            lam=float(_get(flat, "loss.lambda", ls.lam)),
            train_gamma=float(_get(flat, "loss.train_gamma", ls.train_gamma)),
        ),
        optimizer=OptimizerConfig(
            step_size=float(_get(flat, "optimizer.step_size", o.step_size)),
            beta1=float(_get(flat, "optimizer.beta1", o.beta1)),
            beta2=float(_get(flat, "optimizer.beta2", o.beta2)),
            weight_decay=float(_get(flat, "optimizer.weight_decay", o.weight_decay)),
            iterations=int(_get(flat, "optimizer.iterations", o.iterations)),
            batch_size=int(_get(flat, "optimizer.batch_size", o.batch_size)),
        ),
        seed=int(_get(flat, "seed", e.seed)),
        ckpt_fractions=tuple(fractions),
        cond_dropout=float(_get(flat, "cond_dropout", e.cond_dropout)),
    )


def experiment_to_flat(cfg: ExperimentConfig) -> dict[str, str]:
    flat = {
        "dataset": cfg.dataset,
        "train_size": str(cfg.train_size),
        "seed": str(cfg.seed),
        "cond_dropout": repr(cfg.cond_dropout),
        "checkpoint_fractions": ",".join(repr(f) for f in cfg.ckpt_fractions),
        "loss.lambda": repr(cfg.loss.lam),
        "loss.train_gamma": repr(cfg.loss.train_gamma),
        "optimizer.step_size": repr(cfg.optimizer.step_size),
        "optimizer.beta1": repr(cfg.optimizer.beta1),
        "optimizer.beta2": repr(cfg.optimizer.beta2),
        "optimizer.weight_decay": repr(cfg.optimizer.weight_decay),
        "optimizer.iterations": str(cfg.optimizer.iterations),
        "optimizer.batch_size": str(cfg.optimizer.batch_size),
    }
    for key, value in cfg.denoiser.to_flat().items():
        flat[f"denoiser.{key}"] = value
    return flat


def sampler_from_flat(flat: dict[str, str]) -> SamplerConfig:
    s = SamplerConfig()
    return SamplerConfig(
        num_steps=int(_get(flat, "sampler.num_steps", s.num_steps)),
        seed=int(_get(flat, "sampler.seed", _get(flat, "seed", s.seed))),
        batch_size=int(_get(flat, "sampler.batch_size", s.batch_size)),
        mask_sampling=_get(flat, "sampler.mask_sampling", s.mask_sampling),
    )


def guidance_from_flat(flat: dict[str, str]) -> GuidanceConfig:
    kwargs = {}
    if "guidance.gamma_strong" in flat:
        kwargs["gamma_strong"] = float(flat["guidance.gamma_strong"])
        kwargs["schedule_strong"] = None
    if "guidance.gamma_weak" in flat:
        kwargs["gamma_weak"] = float(flat["guidance.gamma_weak"])
        kwargs["schedule_weak"] = None
    if "guidance.shared_mask" in flat:
        kwargs["shared_mask"] = flat["guidance.shared_mask"].lower() in ("1", "true")
    for side in ("strong", "weak"):
        key = f"guidance.schedule_{side}"
        if key in flat:
            kind, start, end = flat[key].split(",")
            kwargs[f"schedule_{side}"] = GammaSchedule(
                kind.strip(), float(start), float(end)
            )

    name = flat.get("guidance.preset")
    omega = float(_get(flat, "guidance.omega", 1.5))
    aux = flat.get("guidance.aux_checkpoint")
    if name:
        base = preset(name, omega=omega, aux_checkpoint=aux)
        if kwargs:
            from dataclasses import replace

            base = replace(base, **kwargs)
        return base
    # assemble in one construction so mode invariants see the final rates
    return GuidanceConfig(
        mode=_get(flat, "guidance.mode", "none"),
        omega=omega,
        aux_checkpoint=aux,
        **kwargs,
    )


def sweep_from_flat(flat: dict[str, str]) -> SweepGrid:
    g = SweepGrid(
        gamma_strong=_get_float_list(flat, "sweep.gamma_strong", (0.0, 0.25)),
        gamma_weak=_get_float_list(flat, "sweep.gamma_weak", (0.5, 0.75)),
        omega=_get_float_list(flat, "sweep.omega", (1.3, 1.5, 1.7, 1.9)),
        samples_per_cell=int(_get(flat, "sweep.samples_per_cell", 512)),
        fid_subset_size=(
            int(flat["sweep.fid_subset_size"])
            if "sweep.fid_subset_size" in flat
            else None
        ),
    )
    return g
