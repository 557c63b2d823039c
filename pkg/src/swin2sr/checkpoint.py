"""Named-tensor container with a fixed little-endian layout.

    "S2SR" | u32 version=1 | u32 count |
    count x ( u16 name_len | name | u8 dtype | u8 rank | u32 dims[rank] | payload )

dtype 0 is float32 (payload 4 bytes per element); dtype 1 is raw uint8,
used only for the trailing "config" entry holding the model's JSON.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig

MAGIC = b"S2SR"
VERSION = 1
DTYPE_F32 = 0
DTYPE_U8 = 1
CONFIG_KEY = "config"


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], config: ModelConfig | None = None) -> bytes:
    entries = [(k, np.asarray(v, dtype="<f4"), DTYPE_F32) for k, v in tensors.items()]
    if any(k == CONFIG_KEY for k, _, _ in entries):
        raise CheckpointError(f"{CONFIG_KEY!r} is reserved")
    if config is not None:
        blob = np.frombuffer(config.to_json().encode("utf-8"), dtype=np.uint8)
        entries.append((CONFIG_KEY, blob, DTYPE_U8))
    out = bytearray(MAGIC + struct.pack("<II", VERSION, len(entries)))
    seen = set()
    for name, arr, code in entries:
        if name in seen:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        seen.add(name)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"entry {name!r} exceeds format limits")
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr).tobytes()
    return bytes(out)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], ModelConfig | None]:
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic, not a checkpoint")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos, tensors, config = 12, {}, None
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            code, rank = struct.unpack_from("<BB", blob, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            if code == DTYPE_F32:
                size = 4 * int(np.prod(dims, dtype=np.int64))
                dt = "<f4"
            elif code == DTYPE_U8:
                size, dt = int(np.prod(dims, dtype=np.int64)), np.uint8
            else:
                raise CheckpointError(f"unknown dtype code {code} for {name!r}")
            if pos + size > len(blob):
                raise CheckpointError(f"payload of {name!r} runs past end of file")
            arr = np.frombuffer(blob, dtype=dt, count=size // np.dtype(dt).itemsize, offset=pos).reshape(dims)
            pos += size
            if name in tensors or (name == CONFIG_KEY and config is not None):
                raise CheckpointError(f"duplicate tensor name {name!r}")
            if name == CONFIG_KEY:
                config = ModelConfig.from_json(arr.tobytes().decode("utf-8"))
            else:
                tensors[name] = arr.astype(np.float32)
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from None
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after last entry")
    return tensors, config


def save(path, tensors: dict[str, np.ndarray], config: ModelConfig | None = None):
    Path(path).write_bytes(dumps(tensors, config))


def load(path) -> tuple[dict[str, np.ndarray], ModelConfig | None]:
    return loads(Path(path).read_bytes())


def load_model(path, seed: int = 0):
    """Rebuild a network from a checkpoint, ignoring optimizer entries."""
    from .model import Swin2SR

    tensors, config = load(path)
    if config is None:
        raise CheckpointError(f"{path} carries no config entry")
    model = Swin2SR(config, seed=seed)
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("optim.")})
    return model
