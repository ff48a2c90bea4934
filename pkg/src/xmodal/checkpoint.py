"""Binary checkpoint container: JSON header + shape-prefixed tensor payload.

Layout: 4-byte magic, little-endian u32 format version, u32 header length,
UTF-8 JSON header, then each tensor's raw data in header order. Checkpoints
store parameters as little-endian float32; the training-state sidecar keeps
its arrays at native dtype so a resumed run continues bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ModelParams

CHECKPOINT_MAGIC = b"XMCK"
STATE_MAGIC = b"XMST"
FORMAT_VERSION = 1


def _write_container(path, magic: bytes, header: dict, tensors: list[tuple[str, np.ndarray]]):
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    header["tensors"] = [
        {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str}
        for name, arr in tensors
    ]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        f.write(blob)
        for _, arr in tensors:
            f.write(np.ascontiguousarray(arr).tobytes())


def _read_container(path, magic: bytes):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from e
    if len(raw) < 12 or raw[:4] != magic:
        raise CheckpointError(f"{path} is not a {magic.decode()} container")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})"
        )
    if len(raw) < 12 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    offset = 12 + header_len
    arrays = {}
    for spec in header.get("tensors", []):
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * dt.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(
                f"{path}: truncated tensor data for {spec['name']!r}"
            )
        arr = np.frombuffer(raw[offset : offset + nbytes], dtype=dt).reshape(
            spec["shape"]
        )
        arrays[spec["name"]] = arr.copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return header, arrays


def save_checkpoint(params: ModelParams, cfg: ModelConfig, path) -> None:
    """Write params (as little-endian float32) plus the model config."""
    tensors = [
        (name, params.arrays[name].astype("<f4")) for name in params.names()
    ]
    _write_container(
        path, CHECKPOINT_MAGIC, {"model_config": cfg.to_dict()}, tensors
    )


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    header, arrays = _read_container(path, CHECKPOINT_MAGIC)
    if "model_config" not in header:
        raise CheckpointError(f"{path}: header lacks model_config")
    cfg = ModelConfig.from_dict(header["model_config"])
    try:
        params = ModelParams(arrays)
    except ValueError as e:
        raise CheckpointError(f"{path}: invalid parameters: {e}") from e
    expected = {n for n in init_shapes(cfg)}
    if set(params.arrays) != expected:
        missing = expected - set(params.arrays)
        extra = set(params.arrays) - expected
        raise CheckpointError(
            f"{path}: parameter names do not match config "
            f"(missing {sorted(missing)}, unexpected {sorted(extra)})"
        )
    for name, shape in init_shapes(cfg).items():
        if params.arrays[name].shape != shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape "
                f"{params.arrays[name].shape}, expected {shape}"
            )
    return params, cfg


def init_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Expected parameter shapes for a config (for checkpoint validation)."""
    from .model import init_model_params

    ref = init_model_params(cfg, rng_seed=0, dtype=np.float32)
    return {name: ref.arrays[name].shape for name in ref.names()}


def save_train_state(path, params: ModelParams, step: int, optimizer: str, slots: dict[str, dict[str, np.ndarray]]):
    """Sidecar with native-dtype params and optimizer slots for exact resume."""
    tensors = [("params/" + n, params.arrays[n]) for n in params.names()]
    for slot_name in sorted(slots):
        for n in sorted(slots[slot_name]):
            tensors.append((f"slot/{slot_name}/{n}", slots[slot_name][n]))
    _write_container(
        path, STATE_MAGIC, {"step": int(step), "optimizer": optimizer}, tensors
    )


def load_train_state(path):
    header, arrays = _read_container(path, STATE_MAGIC)
    params = {}
    slots: dict[str, dict[str, np.ndarray]] = {}
    for name, arr in arrays.items():
        kind, rest = name.split("/", 1)
        if kind == "params":
            params[rest] = arr
        elif kind == "slot":
            slot_name, pname = rest.split("/", 1)
            slots.setdefault(slot_name, {})[pname] = arr
        else:
            raise CheckpointError(f"{path}: unknown tensor kind {kind!r}")
    return ModelParams(params), int(header["step"]), header["optimizer"], slots
