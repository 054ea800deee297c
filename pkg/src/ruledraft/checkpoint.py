"""Versioned binary checkpoints with bitwise float64 round-trip.

Layout: 4-byte magic, uint32 schema version, uint32 header length, UTF-8
JSON header, then every tensor as row-major little-endian float64 in the
header's manifest order. The header carries the config hash, epoch counter,
optimizer scalars, and arbitrary JSON extras.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (CheckpointError, CompatibilityError, TruncationError,
                     VersionError)

MAGIC = b"RDCP"
SCHEMA_VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config_hash: str
    epoch: int = 0
    opt_step: int = 0
    opt_m: dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: dict[str, np.ndarray] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _manifest(groups: dict[str, dict[str, np.ndarray]]) -> list[tuple[str, str, tuple]]:
    entries = []
    for group in sorted(groups):
        for name in sorted(groups[group]):
            arr = groups[group][name]
            entries.append((group, name, tuple(int(d) for d in arr.shape)))
    return entries


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    groups = {"params": ckpt.params, "opt_m": ckpt.opt_m, "opt_v": ckpt.opt_v}
    manifest = _manifest(groups)
    header = {
        "config_hash": ckpt.config_hash,
        "epoch": int(ckpt.epoch),
        "opt_step": int(ckpt.opt_step),
        "extra": ckpt.extra,
        "tensors": [{"group": g, "name": n, "shape": list(s)} for g, n, s in manifest],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", SCHEMA_VERSION, len(blob)))
        f.write(blob)
        for g, n, _ in manifest:
            arr = np.ascontiguousarray(groups[g][n], dtype=np.float64)
            f.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path: str, expected_hash: str | None = None) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 8:
        raise TruncationError(f"{path}: file shorter than the fixed prefix")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != SCHEMA_VERSION:
        raise VersionError(
            f"{path}: schema version {version}, this build reads {SCHEMA_VERSION}")
    if len(raw) < 12 + hlen:
        raise TruncationError(f"{path}: header cut short")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from e

    payload = raw[12 + hlen:]
    expected = sum(int(np.prod(t["shape"])) if t["shape"] else 1
                   for t in header["tensors"]) * 8
    if len(payload) < expected:
        raise TruncationError(
            f"{path}: payload holds {len(payload)} bytes, manifest promises {expected}")
    if len(payload) > expected:
        raise CheckpointError(f"{path}: {len(payload) - expected} trailing bytes")

    groups: dict[str, dict[str, np.ndarray]] = {"params": {}, "opt_m": {}, "opt_v": {}}
    offset = 0
    for t in header["tensors"]:
        shape = tuple(int(d) for d in t["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count,
                            offset=offset).astype(np.float64).reshape(shape)
        groups.setdefault(t["group"], {})[t["name"]] = arr
        offset += count * 8

    ckpt = Checkpoint(params=groups["params"],
                      config_hash=str(header["config_hash"]),
                      epoch=int(header["epoch"]),
                      opt_step=int(header["opt_step"]),
                      opt_m=groups["opt_m"], opt_v=groups["opt_v"],
                      extra=dict(header.get("extra", {})))
    if expected_hash is not None and ckpt.config_hash != expected_hash:
        raise CompatibilityError(
            f"{path}: checkpoint hash {ckpt.config_hash[:12]} does not match "
            f"the active configuration {expected_hash[:12]}")
    return ckpt


def restore_params(target: dict[str, np.ndarray], source: dict[str, np.ndarray]) -> None:
    """Copy checkpoint tensors into live parameter arrays, strict on names."""
    missing = sorted(set(target) - set(source))
    surplus = sorted(set(source) - set(target))
    if missing or surplus:
        raise CompatibilityError(
            f"parameter names differ (missing {missing}, surplus {surplus})")
    for name, arr in target.items():
        if source[name].shape != arr.shape:
            raise CompatibilityError(
                f"parameter '{name}': checkpoint shape {source[name].shape} "
                f"!= model shape {arr.shape}")
        np.copyto(arr, source[name])
