"""Versioned binary tensor container used for checkpoints.

Layout (all integers little-endian):
  magic  b"DSC1"
  u32    version (currently 1)
  64s    config hash (hex, ascii)
  u32    meta length, then meta JSON (seed, step, record count)
  records, sorted by name:
    u16 name length, name (utf-8)
    u8  dtype code, u8 ndim, u32 * ndim dims
    u64 payload length, raw little-endian tensor bytes
  32s    sha256 of everything above

The raw bytes make save/load/save byte-identical, which is what the
bit-exact resume contract needs.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, IntegrityError

MAGIC = b"DSC1"
VERSION = 1

_DTYPES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i8"): 2,
    np.dtype("i1"): 3,
    np.dtype("u1"): 4,
}
_DTYPES_REV = {v: k for k, v in _DTYPES.items()}


def write_container(path: str | Path, config_hash: str, meta: dict,
                    tensors: dict[str, np.ndarray]) -> None:
    if len(config_hash) != 64:
        raise ValueError("config hash must be 64 hex chars")
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", VERSION)
    body += config_hash.encode("ascii")
    meta = dict(meta, n_records=len(tensors))
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    body += struct.pack("<I", len(meta_blob)) + meta_blob
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        arr = arr.astype(dtype, copy=False)
        if arr.dtype not in _DTYPES:
            raise ValueError(f"unsupported dtype {arr.dtype} for record {name!r}")
        encoded = name.encode()
        body += struct.pack("<H", len(encoded)) + encoded
        body += struct.pack("<BB", _DTYPES[arr.dtype], arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload = arr.tobytes()
        body += struct.pack("<Q", len(payload)) + payload
    digest = hashlib.sha256(bytes(body)).digest()
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(bytes(body) + digest)
    tmp.replace(path)


def read_container(path: str | Path, expected_config_hash: str | None = None
                   ) -> tuple[dict, dict[str, np.ndarray]]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    raw = p.read_bytes()
    if len(raw) < len(MAGIC) + 4 + 64 + 4 + 32:
        raise FormatError(f"{p}: file too short to be a checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{p}: checksum mismatch (corrupt checkpoint)")
    off = 0
    if body[:4] != MAGIC:
        raise FormatError(f"{p}: bad magic {body[:4]!r}")
    off = 4
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != VERSION:
        raise FormatError(f"{p}: unsupported container version {version}")
    config_hash = body[off:off + 64].decode("ascii")
    off += 64
    if expected_config_hash is not None and config_hash != expected_config_hash:
        raise ConfigError(
            f"{p}: checkpoint was written for a different config "
            f"(hash {config_hash[:12]}..., expected {expected_config_hash[:12]}...)")
    (meta_len,) = struct.unpack_from("<I", body, off)
    off += 4
    meta = json.loads(body[off:off + meta_len].decode())
    off += meta_len
    tensors: dict[str, np.ndarray] = {}
    for _ in range(int(meta["n_records"])):
        (name_len,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + name_len].decode()
        off += name_len
        dtype_code, ndim = struct.unpack_from("<BB", body, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        (nbytes,) = struct.unpack_from("<Q", body, off)
        off += 8
        dtype = _DTYPES_REV.get(dtype_code)
        if dtype is None:
            raise FormatError(f"{p}: unknown dtype code {dtype_code} in record {name!r}")
        arr = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize, offset=off)
        tensors[name] = arr.reshape(shape).copy()
        off += nbytes
    meta["config_hash"] = config_hash
    return meta, tensors
