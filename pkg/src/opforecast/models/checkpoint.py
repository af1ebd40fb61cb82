"""Model checkpoint container: magic "OPFC", version, architecture tag,
hyperparameter block (canonical JSON), then parameter tensors in declaration
order as little-endian float64.  Round trips are bit-exact."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..fileio import BadMagicError, TruncatedError, VersionError, read_exact, read_struct

MAGIC = b"OPFC"
VERSION = 1


def save_checkpoint(path, arch: str, hyper: dict, tensors: list[tuple[str, np.ndarray]]) -> None:
    blob = json.dumps(hyper, sort_keys=True, separators=(",", ":")).encode()
    arch_b = arch.encode("ascii")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<B", len(arch_b)))
        f.write(arch_b)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            arr = np.asarray(arr, dtype="<f8")
            name_b = name.encode()
            f.write(struct.pack("<H", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path) -> tuple[str, dict, list[tuple[str, np.ndarray]]]:
    with open(path, "rb") as f:
        magic = read_exact(f, 4)
        if magic != MAGIC:
            raise BadMagicError(f"not a checkpoint file: magic {magic!r}")
        (version,) = read_struct(f, "<H")
        if version != VERSION:
            raise VersionError(f"unsupported checkpoint version {version}")
        (alen,) = read_struct(f, "<B")
        arch = read_exact(f, alen).decode("ascii")
        (hlen,) = read_struct(f, "<I")
        hyper = json.loads(read_exact(f, hlen).decode())
        (ntensors,) = read_struct(f, "<I")
        tensors = []
        for _ in range(ntensors):
            (nlen,) = read_struct(f, "<H")
            name = read_exact(f, nlen).decode()
            (ndim,) = read_struct(f, "<B")
            shape = read_struct(f, f"<{ndim}I") if ndim else ()
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(read_exact(f, 8 * count), dtype="<f8").reshape(shape)
            tensors.append((name, data.astype(np.float64)))
    return arch, hyper, tensors


def checkpoint_summary(path) -> str:
    arch, hyper, tensors = load_checkpoint(path)
    n_params = sum(int(np.prod(a.shape)) if a.shape else 1 for _, a in tensors)
    keys = ", ".join(f"{k}={hyper[k]}" for k in sorted(hyper))
    return f"checkpoint arch={arch} tensors={len(tensors)} params={n_params} {keys}"


def fill_tensors(slots: list[tuple[str, np.ndarray]], tensors: list[tuple[str, np.ndarray]]) -> None:
    """Copy loaded arrays into freshly built parameter slots, matching by
    declaration order and verifying names and shapes."""
    if len(slots) != len(tensors):
        raise ValueError(f"tensor count mismatch: {len(slots)} slots, {len(tensors)} stored")
    for (name, slot), (stored_name, arr) in zip(slots, tensors):
        if name != stored_name:
            raise ValueError(f"tensor order mismatch: expected {name}, found {stored_name}")
        if slot.shape != arr.shape:
            raise ValueError(f"shape mismatch for {name}: {slot.shape} vs {arr.shape}")
        slot[...] = arr
