"""Binary checkpoint container.

Layout (all integers little-endian):

    magic   4 bytes  b"SGLB"
    version u32      currently 1
    config  u32 length + UTF-8 flat key=value lines (DenoiserConfig)
    iter    u64      training iteration count
    rngjson u32 length + UTF-8 JSON bit-generator state (may be empty)
    nparams u32
    per parameter:
        name  u32 length + UTF-8
        ndim  u32
        dims  u64 each
        data  float64 little-endian, row-major

float64 bytes are written verbatim, so save -> load round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .denoiser import Denoiser, DenoiserConfig

MAGIC = b"SGLB"
VERSION = 1


@dataclass
class Checkpoint:
    """A parameter snapshot plus the config and RNG state that produced it."""

    config: DenoiserConfig
    params: dict[str, np.ndarray]
    iteration: int
    rng_state: dict | None = None

    def to_model(self) -> Denoiser:
        tensors = {
            name: ad.Tensor(arr.copy(), requires_grad=True)
            for name, arr in self.params.items()
        }
        return Denoiser(self.config, params=tensors)

    @classmethod
    def from_model(
        cls, model: Denoiser, iteration: int, rng_state: dict | None = None
    ) -> "Checkpoint":
        params = {name: t.data.copy() for name, t in model.params.items()}
        return cls(
            config=model.config,
            params=params,
            iteration=iteration,
            rng_state=rng_state,
        )


def _write_block(fh, payload: bytes) -> None:
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("truncated checkpoint file")
    return buf


def _read_block(fh) -> bytes:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config_text = "\n".join(
        f"{k} = {v}" for k, v in sorted(ckpt.config.to_flat().items())
    )
    rng_text = json.dumps(ckpt.rng_state, sort_keys=True) if ckpt.rng_state else ""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_block(fh, config_text.encode("utf-8"))
        fh.write(struct.pack("<Q", ckpt.iteration))
        _write_block(fh, rng_text.encode("utf-8"))
        fh.write(struct.pack("<I", len(ckpt.params)))
        for name, arr in ckpt.params.items():
            _write_block(fh, name.encode("utf-8"))
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        config_lines = _read_block(fh).decode("utf-8")
        flat = {}
        for line in config_lines.splitlines():
            key, _, value = line.partition(" = ")
            flat[key] = value
        config = DenoiserConfig.from_flat(flat)
        (iteration,) = struct.unpack("<Q", _read_exact(fh, 8))
        rng_text = _read_block(fh).decode("utf-8")
        rng_state = json.loads(rng_text) if rng_text else None
        (nparams,) = struct.unpack("<I", _read_exact(fh, 4))
        params: dict[str, np.ndarray] = {}
        for _ in range(nparams):
            name = _read_block(fh).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(ndim)
            )
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, count * 8), dtype="<f8")
            params[name] = data.reshape(shape).astype(np.float64)
        return Checkpoint(
            config=config, params=params, iteration=iteration, rng_state=rng_state
        )
