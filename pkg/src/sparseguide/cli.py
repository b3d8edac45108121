"""Command-line surface: train, sample, sweep, flops, eval, inspect."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .configfile import (
    apply_overrides,
    experiment_from_flat,
    experiment_to_flat,
    guidance_from_flat,
    load_config,
    sampler_from_flat,
    sweep_from_flat,
)
from .costs import arch_preset, comparison_rows
from .datasets import make_dataset
from .denoiser import Condition
from .guidance import GuidanceConfig, preset
from .metrics import frechet_distance, gaussian_fit, pairwise_diversity
from .rundir import (
    read_samples_csv,
    write_manifest,
    write_samples_csv,
    write_samples_raw,
)
from .sampler import SamplerConfig, generate
from .sweep import sweep as run_sweep
from .sweep import write_sweep_csv
from .training import train


def _flat_from_args(args) -> dict[str, str]:
    flat = load_config(args.config) if args.config else {}
    return apply_overrides(flat, args.set or [])


def _load_models(args) -> dict:
    models = {"main": load_checkpoint(args.ckpt).to_model()}
    if getattr(args, "aux_ckpt", None):
        models["aux"] = load_checkpoint(args.aux_ckpt).to_model()
    return models


def cmd_train(args) -> int:
    flat = _flat_from_args(args)
    cfg = experiment_from_flat(flat)
    out = Path(args.out)
    write_manifest(out, "train", experiment_to_flat(cfg))
    init = load_checkpoint(args.init) if args.init else None
    log_lines: list[str] = []

    def log(it, value):
        line = f"iter {it:6d}  loss {value:.6f}"
        log_lines.append(line)
        print(line)

    result = train(cfg, init=init, log=log)
    ckpt_dir = out / "checkpoints"
    for ck in result.checkpoints:
        save_checkpoint(ckpt_dir / f"iter_{ck.iteration:07d}.sglb", ck)
    (out / "train_log.txt").write_text("\n".join(log_lines) + "\n")
    print(
        f"wrote {len(result.checkpoints)} checkpoint(s) to {ckpt_dir}; "
        f"analytic train cost {result.train_flops_per_iteration / 1e6:.2f} MFLOPs/iter"
    )
    return 0


def cmd_sample(args) -> int:
    flat = _flat_from_args(args)
    models = _load_models(args)
    cfg = models["main"].config
    if args.preset:
        gcfg = preset(
            args.preset,
            omega=args.omega,
            aux_checkpoint=args.aux_ckpt,
        )
    elif args.mode:
        flat = dict(flat)
        flat["guidance.mode"] = args.mode
        flat.setdefault("guidance.omega", repr(args.omega))
        gcfg = guidance_from_flat(flat)
    else:
        gcfg = guidance_from_flat(flat)
    scfg = sampler_from_flat(flat)
    if args.steps:
        scfg = SamplerConfig(
            num_steps=args.steps,
            seed=scfg.seed,
            batch_size=scfg.batch_size,
            mask_sampling=scfg.mask_sampling,
        )
    out = Path(args.out)
    write_manifest(out, "sample", flat)

    if args.label is None:
        from .sweep import _stratified_generate

        samples = _stratified_generate(models, args.n, gcfg, scfg)
    else:
        cond = (
            Condition("null")
            if args.label == "null"
            else Condition("class", int(args.label))
        )
        samples = generate(models, args.n, cond, gcfg, scfg)
    if cfg.data_kind == "points2d":
        path = out / "samples" / "samples.csv"
        write_samples_csv(path, samples)
    else:
        path = out / "samples" / f"samples_{samples.shape[0]}x{cfg.grid_size}x{cfg.grid_size}.f64"
        write_samples_raw(path, samples)
    print(f"wrote {samples.shape[0]} samples to {path}")
    return 0


def cmd_sweep(args) -> int:
    flat = _flat_from_args(args)
    models = _load_models(args)
    grid = sweep_from_flat(flat)
    gcfg = guidance_from_flat(flat)
    scfg = sampler_from_flat(flat)
    out = Path(args.out)
    write_manifest(out, "sweep", flat)

    ref_n = int(flat.get("sweep.reference_size", "4096"))
    ref_seed = int(flat.get("sweep.reference_seed", str(scfg.seed + 1)))
    dataset = flat.get("dataset", "gaussians8")
    reference, _ = make_dataset(dataset, ref_n, ref_seed)
    write_samples_csv(out / "reference.csv", reference)

    rows = run_sweep(models, grid, gcfg, scfg, reference, workers=args.workers)
    write_sweep_csv(rows, out / "sweep.csv")

    if args.dump_samples:
        from .sweep import SweepRow, _stratified_generate
        from dataclasses import replace as dc_replace

        for row in rows:
            if row.diverged:
                continue
            if row.omega == 1.0 and row.gamma_strong == row.gamma_weak == 0.0:
                cell_cfg = GuidanceConfig(mode="none")
            else:
                cell_cfg = dc_replace(
                    gcfg,
                    omega=row.omega,
                    gamma_strong=row.gamma_strong,
                    gamma_weak=row.gamma_weak,
                    schedule_strong=None,
                    schedule_weak=None,
                )
            samples = _stratified_generate(
                models, grid.samples_per_cell, cell_cfg, scfg
            )[: grid.subset]
            name = f"cell_{row.gamma_strong}_{row.gamma_weak}_{row.omega}.csv"
            write_samples_csv(out / "samples" / name, samples)

    diverged = sum(r.diverged for r in rows)
    print(f"sweep complete: {len(rows)} rows ({diverged} diverged) -> {out/'sweep.csv'}")
    return 0


def cmd_flops(args) -> int:
    arch = arch_preset(args.arch)
    scfg = SamplerConfig(num_steps=args.steps, seed=0)
    named = {}
    for name in args.preset:
        named[name] = preset(name, omega=1.5, aux_checkpoint="aux")
    rows = comparison_rows(arch, scfg, named)
    print(f"# arch={arch.name}  steps={scfg.num_steps}")
    print(f"# convention: {rows[0]['convention']}")
    header = f"{'name':12s} {'GFLOPs/fwd-strong':>18s} {'GFLOPs/fwd-weak':>16s} {'GFLOPs/step':>12s} {'dVs-unguided':>13s} {'dVs-CFG':>9s}"
    print(header)
    for row in rows:
        print(
            f"{row['name']:12s} {row['flops_strong'] / 1e9:18.2f} "
            f"{row['flops_weak'] / 1e9:16.2f} {row['flops_per_step'] / 1e9:12.2f} "
            f"{row['delta_vs_unguided'] / 1e9:13.2f} {row['delta_vs_cfg'] / 1e9:9.2f}"
        )
    if args.csv:
        import csv as csvmod

        path = Path(args.csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = [
            "name",
            "flops_strong",
            "flops_weak",
            "flops_per_step",
            "flops_per_sample",
            "delta_vs_unguided",
            "delta_vs_cfg",
            "num_steps",
            "convention",
        ]
        with open(path, "w", newline="") as fh:
            writer = csvmod.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: row[k] for k in cols})
        print(f"wrote {path}")
    return 0


def cmd_eval(args) -> int:
    reference = read_samples_csv(args.reference)
    generated = read_samples_csv(args.generated)
    fd = frechet_distance(gaussian_fit(generated), gaussian_fit(reference))
    diversity = pairwise_diversity(generated, seed=args.seed)
    print(f"fd = {fd!r}")
    print(f"diversity = {diversity!r}")
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    print(f"checkpoint: {args.ckpt}")
    print(f"iteration:  {ckpt.iteration}")
    total = sum(arr.size for arr in ckpt.params.values())
    print(f"parameters: {len(ckpt.params)} tensors, {total} values")
    print("config:")
    for key, value in sorted(ckpt.config.to_flat().items()):
        print(f"  {key} = {value}")
    if args.params:
        for name, arr in ckpt.params.items():
            print(f"  {name}: shape={arr.shape}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparseguide",
        description="Sparsity-guided flow-matching lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a config entry (repeatable)",
        )

    p_train = sub.add_parser("train", help="train a model, emit checkpoints")
    add_common(p_train)
    p_train.add_argument("--out", required=True, help="run directory")
    p_train.add_argument("--init", help="warm-start checkpoint (finetuning)")
    p_train.set_defaults(func=cmd_train)

    p_sample = sub.add_parser("sample", help="generate samples from a checkpoint")
    add_common(p_sample)
    p_sample.add_argument("--ckpt", required=True)
    p_sample.add_argument("--aux-ckpt", help="auxiliary checkpoint for ag modes")
    p_sample.add_argument("--out", required=True)
    p_sample.add_argument("--n", type=int, required=True)
    p_sample.add_argument("--mode", choices=["none", "cfg", "sg", "cfg_sg", "ag", "ag_sg"])
    p_sample.add_argument("--preset", help="guidance preset name")
    p_sample.add_argument("--omega", type=float, default=1.5)
    p_sample.add_argument("--steps", type=int)
    p_sample.add_argument("--label", help="class id, 'null', or omit for stratified")
    p_sample.set_defaults(func=cmd_sample)

    p_sweep = sub.add_parser("sweep", help="grid sweep over (gs, gw, omega)")
    add_common(p_sweep)
    p_sweep.add_argument("--ckpt", required=True)
    p_sweep.add_argument("--aux-ckpt")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument(
        "--dump-samples", action="store_true", help="write per-cell sample CSVs"
    )
    p_sweep.set_defaults(func=cmd_sweep)

    p_flops = sub.add_parser("flops", help="analytic cost table")
    p_flops.add_argument("--arch", default="xl2", help="arch preset (xl2, desk)")
    p_flops.add_argument(
        "--preset",
        action="append",
        default=None,
        help="guidance preset(s) to tabulate (repeatable)",
    )
    p_flops.add_argument("--steps", type=int, default=40)
    p_flops.add_argument("--csv", help="also write rows to this CSV path")
    p_flops.set_defaults(func=cmd_flops)

    p_eval = sub.add_parser("eval", help="FD + diversity between two sample CSVs")
    p_eval.add_argument("--reference", required=True)
    p_eval.add_argument("--generated", required=True)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_eval)

    p_inspect = sub.add_parser("inspect", help="print checkpoint metadata")
    p_inspect.add_argument("--ckpt", required=True)
    p_inspect.add_argument("--params", action="store_true")
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "flops" and not args.preset:
        args.preset = ["cfg", "sg-flops", "sg-fid"]
    try:
        return args.func(args)
    except Exception as exc:  # surface a clean one-liner, exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
