"""
File formats, run manifests and synthetic data.

A tensor file starts with one ASCII header line::

    CPTENSOR 1 <bin|txt> <N> <n_1> ... <n_N>

followed by the ``prod(n_i)`` entries with the first index running fastest.
``bin`` payloads are little-endian float64, ``txt`` payloads hold one
``repr``-formatted value per line. Factor matrices are stored as 2-way
tensor files.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import FactorSet, reconstruct

__all__ = [
    "MAGIC",
    "VERSION",
    "TensorFileError",
    "write_tensor",
    "read_tensor",
    "write_factors",
    "read_factors",
    "file_digest",
    "write_manifest",
    "read_manifest",
    "synth",
]

MAGIC = "CPTENSOR"
VERSION = 1


class TensorFileError(ValueError):
    """Malformed tensor file (bad header or payload length)."""


def write_tensor(path, t, fmt: str = "bin"):
    t = np.asarray(t, dtype=np.float64)
    if fmt not in ("bin", "txt"):
        raise ValueError(f"unknown payload format {fmt!r}")
    header = " ".join([MAGIC, str(VERSION), fmt, str(t.ndim)] + [str(n) for n in t.shape]) + "\n"
    flat = np.ravel(t, order="F")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if fmt == "bin":
            fh.write(flat.astype("<f8").tobytes())
        else:
            fh.write("".join(repr(float(x)) + "\n" for x in flat).encode("ascii"))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        parts = line.decode("ascii").split()
    except UnicodeDecodeError:
        raise TensorFileError(f"{path}: not a tensor file") from None
    if len(parts) < 4 or parts[0] != MAGIC:
        raise TensorFileError(f"{path}: bad magic")
    if parts[1] != str(VERSION):
        raise TensorFileError(f"{path}: unsupported version {parts[1]}")
    fmt = parts[2]
    try:
        ndim = int(parts[3])
        shape = tuple(int(p) for p in parts[4:])
    except ValueError:
        raise TensorFileError(f"{path}: bad shape in header") from None
    if len(shape) != ndim or any(n < 0 for n in shape):
        raise TensorFileError(f"{path}: header declares {ndim} modes but lists {len(shape)}")
    size = int(np.prod(shape, dtype=np.int64))
    if fmt == "bin":
        if len(payload) != 8 * size:
            raise TensorFileError(f"{path}: expected {size} values, found {len(payload) / 8:g}")
        flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    elif fmt == "txt":
        try:
            flat = np.array([float(x) for x in payload.split()], dtype=np.float64)
        except ValueError:
            raise TensorFileError(f"{path}: unparsable text payload") from None
        if flat.size != size:
            raise TensorFileError(f"{path}: expected {size} values, found {flat.size}")
    else:
        raise TensorFileError(f"{path}: unknown payload format {fmt!r}")
    return np.reshape(flat, shape, order="F")


def write_factors(directory, fs: FactorSet, prefix: str = "factor", fmt: str = "bin") -> list:
    """Write one file per mode; returns the file names (relative to `directory`)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, a in enumerate(fs, start=1):
        name = f"{prefix}_{i}.ten"
        write_tensor(directory / name, a, fmt)
        names.append(name)
    return names


def read_factors(paths: Sequence) -> FactorSet:
    mats = []
    for p in paths:
        a = read_tensor(p)
        if a.ndim != 2:
            raise TensorFileError(f"{p}: a factor matrix must be 2-way, got {a.ndim}")
        mats.append(a)
    return FactorSet(mats, copy=False)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, manifest: dict):
    """Write a manifest; every file it references must already exist."""
    base = Path(path).parent
    refs = list(manifest.get("factors", []))
    if manifest.get("trace"):
        refs.append(manifest["trace"])
    missing = [r for r in refs if not (base / r).exists()]
    if missing:
        raise FileNotFoundError(f"manifest references missing files: {missing}")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def synth(shape, true_rank: int, weight_range=(1.0, 2.0), noise_level: float = 0.0,
          seed: int = 0):
    """Random low-rank tensor with unit-norm columns in all but the last mode.

    Last-mode columns are unit directions scaled by weights drawn uniformly
    from `weight_range`. Gaussian noise is rescaled so that
    ``||noise|| / ||signal|| == noise_level``.

    Returns
    -------
    tensor : ndarray
    truth : FactorSet
    """
    shape = tuple(int(n) for n in shape)
    if len(shape) < 3 or any(n < 1 for n in shape):
        raise ValueError(f"need at least 3 positive dimensions, got {shape}")
    if int(true_rank) != true_rank or true_rank < 1:
        raise ValueError("true_rank must be a positive integer")
    lo, hi = (float(w) for w in weight_range)
    if not 0 < lo <= hi:
        raise ValueError(f"weight range must lie in (0, inf), got {weight_range}")
    if noise_level < 0:
        raise ValueError("noise_level must be nonnegative")
    if true_rank > min(shape):
        warnings.warn(f"rank {true_rank} exceeds the smallest dimension {min(shape)}", stacklevel=2)

    rng = np.random.default_rng(seed)
    mats = []
    for n in shape:
        a = rng.standard_normal((n, true_rank))
        a /= np.linalg.norm(a, axis=0)
        mats.append(a)
    mats[-1] *= rng.uniform(lo, hi, true_rank)
    truth = FactorSet(mats, copy=False)
    signal = reconstruct(truth)
    if noise_level == 0:
        return signal, truth
    noise = rng.standard_normal(shape)
    noise *= noise_level * np.linalg.norm(signal) / np.linalg.norm(noise)
    return signal + noise, truth

