"""Binary checkpoint container.

Layout (little-endian)::

    b"RFP1" | u32 version | u32 n + model config JSON
    u32 n_tensors, then per tensor: u16 n + name | u8 ndim | u32 * ndim shape | float32 payload
    u32 D | float64 * D target std | u32 n + metadata JSON
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from ..config import ModelConfig, _build

MAGIC = b"RFP1"
VERSION = 1


@dataclass
class Checkpoint:
    model: ModelConfig
    params: dict
    target_std: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.target_std = np.asarray(self.target_std, dtype=np.float64)
        if np.any(~np.isfinite(self.target_std)) or np.any(self.target_std <= 0):
            raise ValueError("target std must be finite and positive")

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(MAGIC + struct.pack("<I", VERSION))
            _blob(fh, json.dumps(asdict(self.model)).encode())
            fh.write(struct.pack("<I", len(self.params)))
            for name in sorted(self.params):
                arr = np.ascontiguousarray(self.params[name], dtype="<f4")
                raw = name.encode()
                fh.write(struct.pack("<H", len(raw)) + raw)
                fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())
            fh.write(struct.pack("<I", self.target_std.size))
            fh.write(self.target_std.astype("<f8").tobytes())
            _blob(fh, json.dumps(self.meta).encode())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(4) != MAGIC:
                raise ValueError(f"{path} is not a model checkpoint")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            model = _build(ModelConfig, json.loads(_read_blob(fh)))
            (n,) = struct.unpack("<I", fh.read(4))
            params = {}
            for _ in range(n):
                (ln,) = struct.unpack("<H", fh.read(2))
                name = fh.read(ln).decode()
                (ndim,) = struct.unpack("<B", fh.read(1))
                shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
                count = int(np.prod(shape, dtype=np.int64))
                params[name] = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
            (d,) = struct.unpack("<I", fh.read(4))
            std = np.frombuffer(fh.read(8 * d), dtype="<f8").copy()
            meta = json.loads(_read_blob(fh))
        return cls(model, params, std, meta)


def _blob(fh, raw):
    fh.write(struct.pack("<I", len(raw)) + raw)


def _read_blob(fh):
    (n,) = struct.unpack("<I", fh.read(4))
    return fh.read(n)
