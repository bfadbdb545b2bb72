"""Binary checkpoint codec.

Layout, all integers little-endian:

    magic "HYSN" | u16 version (=1) | u32 metadata length | metadata JSON
    u32 tensor count
    per tensor: u16 name length | name UTF-8 | u8 dtype code | u8 rank
                | rank * u32 dims | raw little-endian payload

Dtype codes: 1 = float32, 2 = float64. Writes go to a temp file in the
target directory and are renamed into place, so a crash never leaves a
half-written checkpoint behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointFormatError, CheckpointMismatchError, ConfigError

MAGIC = b"HYSN"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {1: np.dtype(np.float32), 2: np.dtype(np.float64)}


@dataclass
class LoadReport:
    """What a load actually did: restored names, skipped names with the
    reason, and names marked non-trainable."""
    loaded: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # (name, reason) pairs
    frozen: list = field(default_factory=list)


def save_checkpoint(path: str, model, metadata: dict) -> None:
    """Serialize every model tensor (params and running stats) atomically."""
    meta_bytes = json.dumps(metadata, sort_keys=True).encode("utf-8")
    params = model.params()
    chunks = [MAGIC, struct.pack("<H", VERSION),
              struct.pack("<I", len(meta_bytes)), meta_bytes,
              struct.pack("<I", len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        code = _DTYPE_CODES.get(p.data.dtype)
        if code is None:
            raise ConfigError(f"{p.name} has unsupported dtype {p.data.dtype}")
        chunks.append(struct.pack("<H", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<BB", code, p.data.ndim))
        chunks.append(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype=p.data.dtype)
                      .astype(p.data.dtype.newbyteorder("<"), copy=False).tobytes())
    blob = b"".join(chunks)
    out_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(out_dir, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise CheckpointFormatError("truncated checkpoint")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path: str):
    """Parse a checkpoint into (metadata, {name: array})."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    (meta_len,) = r.unpack("<I")
    try:
        metadata = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: bad metadata block: {exc}") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, rank = r.unpack("<BB")
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise CheckpointFormatError(f"{path}: unknown dtype code {code}")
        shape = r.unpack(f"<{rank}I") if rank else ()
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        data = np.frombuffer(r.take(n_bytes), dtype=dtype.newbyteorder("<"))
        tensors[name] = data.astype(dtype).reshape(shape)
    if r.off != len(r.blob):
        raise CheckpointFormatError(f"{path}: {len(r.blob) - r.off} trailing bytes")
    return metadata, tensors


def load_checkpoint(path: str, model, mode: str = "strict",
                    skip_prefixes=(), freeze_prefixes=()) -> LoadReport:
    """Restore model tensors from a checkpoint.

    strict: names and shapes must match exactly, everything is restored
    bit-exact. transfer: tensors matching by name and shape are loaded;
    shape clashes, names missing on either side, and anything under a skip
    prefix are left alone and reported. Freeze prefixes are then marked
    non-trainable on the model.
    """
    if mode not in ("strict", "transfer"):
        raise ConfigError(f"load mode must be strict or transfer, got {mode!r}")
    _, tensors = read_checkpoint(path)
    params = model.named()
    report = LoadReport()

    if mode == "strict":
        missing = sorted(set(params) - set(tensors))
        extra = sorted(set(tensors) - set(params))
        bad_shape = sorted(
            name for name in set(params) & set(tensors)
            if params[name].data.shape != tensors[name].shape
            or params[name].data.dtype != tensors[name].dtype)
        if missing or extra or bad_shape:
            raise CheckpointMismatchError(
                f"strict load failed: missing={missing} extra={extra} "
                f"shape_mismatch={bad_shape}")
        for name, p in params.items():
            p.data = tensors[name].copy()
            report.loaded.append(name)
    else:
        for name, p in sorted(params.items()):
            if any(name.startswith(pre) for pre in skip_prefixes):
                report.skipped.append((name, "skip prefix"))
            elif name not in tensors:
                report.skipped.append((name, "missing in checkpoint"))
            elif tensors[name].shape != p.data.shape:
                report.skipped.append(
                    (name, f"shape {tensors[name].shape} vs {p.data.shape}"))
            elif tensors[name].dtype != p.data.dtype:
                report.skipped.append(
                    (name, f"dtype {tensors[name].dtype} vs {p.data.dtype}"))
            else:
                p.data = tensors[name].astype(p.data.dtype, copy=True)
                report.loaded.append(name)
        for name in sorted(set(tensors) - set(params)):
            report.skipped.append((name, "unknown in model"))

    if freeze_prefixes:
        report.frozen = model.freeze(freeze_prefixes)
    return report
