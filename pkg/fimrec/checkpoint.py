"""Versioned binary checkpoints of named float64 parameters.

Layout (all integers little-endian)::

    magic      8 bytes  b"FIMCKPT\\x00"
    version    uint32   FORMAT_VERSION
    count      uint32   number of parameters
    then per parameter, in insertion order:
        name_len  uint32, name  utf-8 bytes
        ndim      uint32, dims  ndim x uint64
        values    prod(dims) x float64, row-major
"""

import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np
import torch

from .errors import DataError
from .numerics import DTYPE

MAGIC = b"FIMCKPT\x00"
FORMAT_VERSION = 1


def encode_checkpoint(params: Mapping[str, torch.Tensor]) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params))]
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        values = tensor.detach().cpu().numpy().astype("<f8", copy=False)
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", values.ndim))
        parts.append(struct.pack(f"<{values.ndim}Q", *values.shape))
        parts.append(np.ascontiguousarray(values).tobytes())
    return b"".join(parts)


def decode_checkpoint(payload: bytes) -> dict[str, torch.Tensor]:
    if payload[: len(MAGIC)] != MAGIC:
        raise DataError("not a fimrec checkpoint (bad magic)")
    offset = len(MAGIC)
    try:
        version, count = struct.unpack_from("<II", payload, offset)
        offset += 8
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        params: dict[str, torch.Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            name = payload[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}Q", payload, offset)
            offset += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            values = np.frombuffer(payload, dtype="<f8", count=size, offset=offset)
            offset += 8 * size
            params[name] = torch.tensor(values.reshape(shape).copy(), dtype=DTYPE)
    except DataError:
        raise
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"truncated or corrupt checkpoint: {exc}") from None
    return params


def save_checkpoint(path: str | Path, params: Mapping[str, torch.Tensor]) -> None:
    Path(path).write_bytes(encode_checkpoint(params))


def load_checkpoint(path: str | Path) -> dict[str, torch.Tensor]:
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    return decode_checkpoint(payload)
