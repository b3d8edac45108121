"""Run directories: manifest, config echo, sample dumps."""

from __future__ import annotations

import csv
import subprocess
import time
from pathlib import Path

import numpy as np

from .backend import active_backend
from .configfile import format_config


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.TimeoutExpired):
        pass
    return "unknown"


def write_manifest(run_dir: Path, command: str, flat_config: dict[str, str]) -> None:
    """Config echo plus environment facts. Timestamps live only here, never
    in data files, so reruns from config.txt are bitwise comparable."""
    run_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"command = {command}",
        f"created_unix = {time.time():.3f}",
        f"created = {time.strftime('%Y-%m-%dT%H:%M:%S%z')}",
        f"git = {git_describe()}",
        f"kernel_backend = {active_backend()}",
        "",
        "# config echo",
    ]
    lines += [f"{k} = {v}" for k, v in sorted(flat_config.items())]
    (run_dir / "manifest.txt").write_text("\n".join(lines) + "\n")
    (run_dir / "config.txt").write_text(format_config(flat_config))


def write_samples_csv(path, samples: np.ndarray) -> None:
    """One row per sample, one column per coordinate (2-d point mode)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(samples)
    flat = arr.reshape(arr.shape[0], -1) if arr.size else arr.reshape(0, 2)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(flat.shape[1] if flat.ndim == 2 else 2)])
        for row in flat:
            writer.writerow([repr(float(v)) for v in row])


def read_samples_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    if not rows:
        return np.zeros((0, len(header)))
    return np.array(rows)


def write_samples_raw(path, samples: np.ndarray) -> None:
    """Raw little-endian float64 grid dump (image mode)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(samples, dtype="<f8").tofile(path)
