"""Versioned little-endian parameter file.

Layout: magic "GCNP", u16 format version, u16 layer count, then per layer a
u8 kind tag, u8 tensor count, and per tensor u8 ndim, u32 dims, raw f32 data.
Tensors within a layer are written in sorted key order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .layers import F32
from .net import LAYER_KINDS

MAGIC = b"GCNP"
VERSION = 1

_KIND_TAG = {kind: i + 1 for i, kind in enumerate(LAYER_KINDS)}


class FormatError(ValueError):
    pass


def save_params(net, path) -> None:
    out = [MAGIC, struct.pack("<HH", VERSION, len(net.specs))]
    for spec, lp in zip(net.specs, net.params):
        keys = sorted(lp)
        out.append(struct.pack("<BB", _KIND_TAG[spec.kind], len(keys)))
        for k in keys:
            arr = np.ascontiguousarray(lp[k], dtype="<f4")
            out.append(struct.pack("<B", arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(arr.tobytes())
    Path(path).write_bytes(b"".join(out))


def load_params(net, path) -> None:
    """Load a parameter file into a network with a matching architecture."""
    buf = Path(path).read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(buf):
            raise FormatError(f"truncated parameter file at byte {off}")
        off += n
        return buf[off - n:off]

    if take(4) != MAGIC:
        raise FormatError("bad magic, not a parameter file")
    version, count = struct.unpack("<HH", take(4))
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    if count != len(net.specs):
        raise FormatError(f"file has {count} layers, network has {len(net.specs)}")
    loaded = []
    for i, (spec, lp) in enumerate(zip(net.specs, net.params)):
        tag, ntens = struct.unpack("<BB", take(2))
        if tag != _KIND_TAG[spec.kind]:
            raise FormatError(f"layer {i}: kind tag {tag} vs network {spec.kind}")
        keys = sorted(lp)
        if ntens != len(keys):
            raise FormatError(f"layer {i}: {ntens} tensors vs network {len(keys)}")
        tensors = {}
        for k in keys:
            ndim, = struct.unpack("<B", take(1))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            if shape != lp[k].shape:
                raise FormatError(f"layer {i} tensor {k}: shape {shape} vs {lp[k].shape}")
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape)
            tensors[k] = data.astype(F32)
        loaded.append(tensors)
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after parameters")
    for lp, tensors in zip(net.params, loaded):
        lp.update(tensors)
