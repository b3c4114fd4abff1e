"""Versioned binary container for named tensors plus JSON metadata.

Layout (little-endian)::

    magic          4s   b"LDCK"
    format_version u32
    f              u32  codec downsampling factor
    C_l            u32  latent channels
    param_count    u64  total scalar count of all stored tensors
    meta_len       u32
    meta           meta_len bytes of UTF-8 JSON
    n_tensors      u32
    per tensor:    name_len u16, name, dtype u8, ndim u8, shape ndim*u32, payload
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import ParseError

MAGIC = b"LDCK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIQI")
_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "|u1", 4: "|b1", 5: "<i4"}
_DTYPE_CODES = {np.dtype(v).str: k for k, v in _DTYPES.items()}


def _as_numpy(t):
    if isinstance(t, torch.Tensor):
        t = t.detach().cpu().numpy()
    a = np.asarray(t)
    if a.dtype.str not in _DTYPE_CODES:
        a = a.astype(np.float64 if a.dtype.kind == "f" else np.int64)
    return np.ascontiguousarray(a)


def save_container(path, tensors: dict, meta: dict, f: int = 4, c_l: int = 4):
    arrays = {k: _as_numpy(v) for k, v in tensors.items()}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    param_count = sum(a.size for a in arrays.values())
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, f, c_l, param_count, len(meta_bytes)), meta_bytes]
    parts.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        a = arrays[name]
        nb = name.encode("utf-8")
        parts.append(struct.pack("<HBB", len(nb), _DTYPE_CODES[a.dtype.str], a.ndim))
        parts.append(nb)
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    blob = b"".join(parts)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    return blob


def load_container(path):
    """Returns ``(header, meta, tensors)`` with tensors as numpy arrays."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ParseError(path, f"cannot read checkpoint ({exc.strerror})") from None
    if len(blob) < _HEADER.size:
        raise ParseError(path, "truncated checkpoint header")
    magic, version, f, c_l, param_count, meta_len = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ParseError(path, "not a checkpoint file")
    if version != FORMAT_VERSION:
        raise ParseError(path, f"unsupported format_version {version}")
    off = _HEADER.size
    try:
        meta = json.loads(blob[off : off + meta_len].decode("utf-8"))
        off += meta_len
        (n,) = struct.unpack_from("<I", blob, off)
        off += 4
        tensors = {}
        for _ in range(n):
            name_len, code, ndim = struct.unpack_from("<HBB", blob, off)
            off += 4
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            dt = np.dtype(_DTYPES[code])
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if off + nbytes > len(blob):
                raise ParseError(path, f"truncated tensor {name}")
            tensors[name] = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape).copy()
            off += nbytes
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise ParseError(path, f"corrupt checkpoint ({exc})") from None
    if sum(a.size for a in tensors.values()) != param_count:
        raise ParseError(path, "param_count does not match stored tensors")
    header = {"format_version": version, "f": f, "C_l": c_l, "param_count": param_count}
    return header, meta, tensors


def state_hash(module_or_state) -> str:
    """sha256 over the sorted named parameters and buffers."""
    state = module_or_state.state_dict() if hasattr(module_or_state, "state_dict") else module_or_state
    h = hashlib.sha256()
    for name in sorted(state):
        a = _as_numpy(state[name])
        h.update(name.encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def prefixed(state: dict, prefix: str) -> dict:
    return {f"{prefix}/{k}": v for k, v in state.items()}


def unprefixed(tensors: dict, prefix: str) -> dict:
    p = prefix + "/"
    return {k[len(p) :]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith(p)}
