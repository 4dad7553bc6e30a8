"""Binary checkpoint container.

Layout (little-endian)::

    b"RNTK"  u32 version
    u32 n  + n bytes of UTF-8 JSON (model config and metadata)
    u32 d  + d f64 mean + d f64 std + u64 frame count     (FeatureStats)
    u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 dtype (0 f64, 1 f32),
                u8 rank, rank x u32 extents, row-major payload
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import CheckpointError
from ..frontend import FeatureStats
from .config import ModelConfig
from .params import eou_joint_shapes, parameter_shapes

MAGIC = b"RNTK"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}


@dataclass
class Checkpoint:
    tensors: dict
    config: ModelConfig
    stats: FeatureStats
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    def validate(self):
        """Every config-implied tensor present with the right shape; nothing unknown."""
        expected = parameter_shapes(self.config)
        optional = eou_joint_shapes(self.config)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise CheckpointError(f"missing tensor {name!r}")
        present_optional = [n for n in optional if n in self.tensors]
        if present_optional and len(present_optional) != len(optional):
            raise CheckpointError("EOU joint tensors are incomplete")
        for name, arr in self.tensors.items():
            shape = expected.get(name, optional.get(name))
            if shape is None:
                raise CheckpointError(f"unexpected tensor {name!r}")
            if tuple(arr.shape) != tuple(shape):
                raise CheckpointError(f"tensor {name!r} has shape {arr.shape}, expected {tuple(shape)}")
        if self.stats.dim * 3 + self.config.lid_dim != self.config.input_dim:
            raise CheckpointError(
                f"stats width {self.stats.dim} inconsistent with input_dim {self.config.input_dim}"
            )
        return self

    @property
    def has_eou_joint(self):
        return "eou_joint.out.w" in self.tensors

    def without_eou_joint(self):
        tensors = {k: v for k, v in self.tensors.items() if not k.startswith("eou_joint.")}
        return Checkpoint(tensors, self.config, self.stats, dict(self.meta), self.version)


def to_bytes(ckpt):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    text = json.dumps({"model": ckpt.config.to_dict(), "meta": ckpt.meta}, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    st = ckpt.stats
    buf.write(struct.pack("<I", st.dim))
    buf.write(np.asarray(st.mean, dtype="<f8").tobytes())
    buf.write(np.asarray(st.std, dtype="<f8").tobytes())
    buf.write(struct.pack("<Q", st.count))
    buf.write(struct.pack("<I", len(ckpt.tensors)))
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name])
        if arr.dtype not in _CODES:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def from_bytes(data):
    if len(data) < 8 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(data) < 12:
        raise CheckpointError("truncated checkpoint")
    body, trailer = data[:-4], data[-4:]
    if zlib.crc32(body) != struct.unpack("<I", trailer)[0]:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted or truncated")
    r = _Reader(body)
    r.take(4, "magic")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = r.unpack("<I", "config length")
    try:
        header = json.loads(r.take(n, "config").decode("utf-8"))
        config = ModelConfig.from_dict(header["model"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"invalid config block: {exc}") from exc
    (d,) = r.unpack("<I", "stats width")
    mean = np.frombuffer(r.take(8 * d, "stats mean"), dtype="<f8").astype(np.float64)
    std = np.frombuffer(r.take(8 * d, "stats std"), dtype="<f8").astype(np.float64)
    (count,) = r.unpack("<Q", "stats count")
    stats = FeatureStats(mean, std, int(count))
    (num,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(num):
        (ln,) = r.unpack("<H", "name length")
        name = r.take(ln, "name").decode("utf-8")
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name!r}")
        code, rank = r.unpack("<BB", "dtype/rank")
        if code not in _DTYPES:
            raise CheckpointError(f"tensor {name!r} has unknown dtype code {code}")
        shape = r.unpack(f"<{rank}I", "extents")
        dt = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(size, f"payload of {name}"), dtype=dt).reshape(shape)
        tensors[name] = arr.astype(dt.newbyteorder("="))
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after the last tensor")
    return Checkpoint(tensors, config, stats, header.get("meta", {}), version).validate()


def save_checkpoint(ckpt, path):
    ckpt.validate()
    data = to_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(data)
