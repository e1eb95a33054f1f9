"""Versioned binary checkpoint files.

Layout (all integers little-endian):

    magic "DDCN" | u16 version | u32 record_count
    record*: u16 name_len | name utf-8 | u8 precision (0=f32, 1=f64)
             | u8 rank | u32 dim * rank | raw little-endian payload
    trailing metadata: utf-8 "key=value" lines

Parameter records are stored under "param/<name>", optimizer velocity
records under "vel/<name>".  Payload bytes round-trip exactly, so
load(save(x)) reproduces every array bit for bit.  The metadata carries
the architecture fingerprint; loading refuses a mismatched model.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"DDCN"
VERSION = 1

_PREC = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_PREC_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def _pack_record(name: str, arr: np.ndarray) -> bytes:
    if arr.dtype not in _PREC_OF:
        raise CheckpointError(f"record {name}: unsupported dtype {arr.dtype}")
    nb = name.encode("utf-8")
    prec = _PREC_OF[arr.dtype]
    dims = arr.shape if arr.ndim > 0 else (1,)
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", prec, len(dims))
    head += struct.pack(f"<{len(dims)}I", *dims)
    payload = np.ascontiguousarray(arr, dtype=_PREC[prec]).tobytes()
    return head + payload


def save_checkpoint(path, params: dict[str, np.ndarray],
                    velocities: dict[str, np.ndarray], meta: dict[str, str]) -> None:
    records = [(f"param/{k}", v) for k, v in params.items()]
    records += [(f"vel/{k}", v) for k, v in velocities.items()]
    body = b"".join(_pack_record(n, a) for n, a in records)
    meta_lines = []
    for k in sorted(meta):
        v = str(meta[k])
        if "\n" in k or "\n" in v or "=" in k:
            raise CheckpointError(f"metadata key/value not encodable: {k!r}")
        meta_lines.append(f"{k}={v}")
    blob = MAGIC + struct.pack("<HI", VERSION, len(records)) + body
    blob += "\n".join(meta_lines).encode("utf-8")
    Path(path).write_bytes(blob)


def load_checkpoint(path):
    """Returns (params, velocities, meta)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 10
    params: dict[str, np.ndarray] = {}
    velocities: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + name_len].decode("utf-8")
            off += name_len
            prec, rank = struct.unpack_from("<BB", blob, off)
            off += 2
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            dtype = _PREC[prec]
            nbytes = int(np.prod(dims)) * dtype.itemsize
            arr = np.frombuffer(blob[off:off + nbytes], dtype=dtype).reshape(dims)
            off += nbytes
            if len(arr.reshape(-1)) != int(np.prod(dims)):
                raise CheckpointError(f"{path}: truncated record {name}")
            arr = arr.astype(np.float32 if prec == 0 else np.float64)
            if name.startswith("param/"):
                params[name[len("param/"):]] = arr
            elif name.startswith("vel/"):
                velocities[name[len("vel/"):]] = arr
            else:
                raise CheckpointError(f"{path}: unknown record namespace in {name!r}")
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint: {e}") from e
    meta: dict[str, str] = {}
    tail = blob[off:].decode("utf-8")
    for line in tail.splitlines():
        if line:
            key, _, value = line.partition("=")
            meta[key] = value
    return params, velocities, meta


def require_fingerprint(meta: dict[str, str], expected: str, path="checkpoint") -> None:
    got = meta.get("arch_fingerprint", "<missing>")
    if got != expected:
        raise CheckpointError(f"{path}: architecture fingerprint {got} does not match "
                              f"the built model ({expected}); refusing to load")
