"""Binary checkpoint container for model parameters.

Layout (all integers little-endian uint32)::

    magic      8 bytes  b"DOCRELCK"
    version    u32      1
    cfg_len    u32      length of the config JSON that follows
    cfg        bytes    UTF-8 JSON of ModelConfig fields, sorted keys
    n_tensors  u32
    per tensor:
        name_len u32, name (UTF-8), rank u32, dims u32 * rank,
        data     float32 little-endian, row-major

Tensors are written in sorted name order so identical parameters always give
identical bytes.
"""

import json
import struct

import numpy as np

from .errors import CheckpointMismatch, ParseError
from .model import ModelConfig, parameter_shapes

MAGIC = b"DOCRELCK"
VERSION = 1
_U32 = struct.Struct("<I")


def dumps(params, cfg):
    cfg_bytes = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(cfg_bytes)), cfg_bytes, _U32.pack(len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        name_bytes = name.encode("utf-8")
        parts += [_U32.pack(len(name_bytes)), name_bytes, _U32.pack(arr.ndim)]
        parts += [_U32.pack(dim) for dim in arr.shape]
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def loads(data):
    """Parse checkpoint bytes into ``(ModelConfig, params)`` with float32 arrays."""
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise ParseError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    def u32():
        return _U32.unpack(take(4))[0]

    if bytes(take(len(MAGIC))) != MAGIC:
        raise ParseError("not a docrel checkpoint (bad magic)")
    version = u32()
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    cfg = ModelConfig(**json.loads(bytes(take(u32())).decode("utf-8")))
    params = {}
    for _ in range(u32()):
        name = bytes(take(u32())).decode("utf-8")
        shape = tuple(u32() for _ in range(u32()))
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        params[name] = arr.astype(np.float32)
    if pos != len(view):
        raise ParseError("trailing bytes after checkpoint tensors")
    return cfg, params


def save_checkpoint(path, params, cfg):
    with open(path, "wb") as fh:
        fh.write(dumps(params, cfg))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def check_compatible(params, cfg):
    """Raise :class:`CheckpointMismatch` naming the first tensor whose shape differs from ``cfg``."""
    expected = parameter_shapes(cfg)
    for name, shape in expected.items():
        found = params.get(name)
        if found is None:
            raise CheckpointMismatch(name, shape, None)
        if tuple(found.shape) != shape:
            raise CheckpointMismatch(name, shape, tuple(found.shape))
    for name in params:
        if name not in expected:
            raise CheckpointMismatch(name, None, tuple(params[name].shape))
