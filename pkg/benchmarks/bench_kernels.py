"""Benchmark the numba kernels against their pure-numpy twins.

Shapes mirror real workloads: the elementwise kernels see training-batch
MLP activations, attention rows, and optimizer-sized flats; the end-to-end
section times one training step and one sampling step of the desk model
under the active backend.

Run:

    python benchmarks/bench_kernels.py
    SPARSEGUIDE_BACKEND=numpy python benchmarks/bench_kernels.py
"""

import statistics
import time

import numpy as np

import sparseguide.kernels as K
from sparseguide.backend import HAVE_NUMBA, active_backend


def time_call(fn, *args, repeats=30, warmup=2):
    for _ in range(warmup):
        fn(*args)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return statistics.mean(times) * 1e3, statistics.pstdev(times) * 1e3


def kernel_section():
    rng = np.random.default_rng(0)
    mlp = np.ascontiguousarray(rng.normal(size=96 * 8 * 128))
    grad = np.ascontiguousarray(rng.normal(size=mlp.size))
    rows = np.ascontiguousarray(rng.normal(size=(96 * 4 * 8, 8)))
    feats = np.ascontiguousarray(rng.normal(size=(96 * 8, 64)))
    gain = rng.uniform(0.5, 1.5, size=64)
    heads = np.ascontiguousarray(rng.normal(size=(96 * 4, 8, 16)))
    angles = rng.uniform(0, 2, size=(8, 8))
    cos, sin = np.cos(angles), np.sin(angles)
    flat_p = rng.normal(size=200_000)
    flat_g = rng.normal(size=200_000)
    m = np.zeros_like(flat_p)
    v = np.zeros_like(flat_p)

    _, th = K.NUMPY_KERNELS["gelu_fwd"](mlp)
    y_rows = K.NUMPY_KERNELS["softmax_fwd"](rows)
    _, inv = K.NUMPY_KERNELS["rmsnorm_fwd"](feats, gain, 1e-12)

    cases = [
        ("gelu_fwd", (mlp,)),
        ("gelu_bwd", (mlp, th, grad)),
        ("softmax_fwd", (rows,)),
        ("softmax_bwd", (y_rows, rows)),
        ("rmsnorm_fwd", (feats, gain, 1e-12)),
        ("rmsnorm_bwd", (feats, gain, inv, np.ascontiguousarray(rng.normal(size=feats.shape)))),
        ("rope_fwd", (heads, cos, sin)),
        ("rope_bwd", (heads, cos, sin)),
        ("adam_step", (flat_p, flat_g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.0, 0.5, 0.5)),
    ]
    print(f"{'kernel':14s} {'active(ms)':>12s} {'numpy(ms)':>12s} {'speedup':>9s}")
    for name, args in cases:
        active_ms, _ = time_call(getattr(K, name), *args)
        numpy_ms, _ = time_call(K.NUMPY_KERNELS[name], *args)
        speedup = numpy_ms / active_ms if active_ms > 0 else float("inf")
        print(f"{name:14s} {active_ms:12.4f} {numpy_ms:12.4f} {speedup:8.2f}x")


def end_to_end_section():
    from sparseguide.denoiser import Condition, Denoiser, DenoiserConfig, RouteSpec
    from sparseguide.flow import LossConfig, combined_loss
    from sparseguide.guidance import GuidanceConfig
    from sparseguide.rng import TRAIN, substream
    from sparseguide.sampler import SamplerConfig, generate
    from sparseguide.training import AdamW, OptimizerConfig

    cfg = DenoiserConfig(
        num_layers=6,
        model_dim=32,
        num_heads=4,
        mlp_ratio=2,
        token_count=8,
        num_classes=8,
        sparsity_mode="route",
        route=RouteSpec(1, 5),
    )
    model = Denoiser(cfg, seed=0)
    rng = substream(0, TRAIN)
    x = rng.normal(size=(96, 2))
    labels = rng.integers(0, 8, size=96)
    opt = AdamW(model.params, OptimizerConfig(step_size=1e-3, iterations=1))

    def train_step():
        loss = combined_loss(model, (x, labels), LossConfig(lam=0.0), rng)
        model.zero_grads()
        loss.backward()
        opt.step()

    mean_ms, std_ms = time_call(train_step, repeats=20)
    print(f"\ntrain step (batch 96, 6 layers, d=32): {mean_ms:.1f} ± {std_ms:.1f} ms")

    gcfg = GuidanceConfig(mode="sg", omega=1.5, gamma_strong=0.25, gamma_weak=0.75)
    scfg = SamplerConfig(num_steps=10, seed=0, mask_sampling="fixed_count")

    def sample_batch():
        generate({"main": model}, 256, Condition("class", 0), gcfg, scfg)

    mean_ms, std_ms = time_call(sample_batch, repeats=5)
    print(f"guided sampling (256 samples, 10 steps): {mean_ms:.1f} ± {std_ms:.1f} ms")


if __name__ == "__main__":
    print(f"active backend: {active_backend()} (numba available: {HAVE_NUMBA})")
    kernel_section()
    end_to_end_section()
