"""STFT front-end with single-channel and inter-channel feature planes."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

FS = 16000
N_FFT = 1536
HOP = 768
N_FREQ = N_FFT // 2 + 1
MAG_FLOOR = 1e-8
PLANES = ("sc", "ild", "ipd_re", "ipd_im")


@lru_cache(maxsize=4)
def hann(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


@dataclass
class Spectrogram:
    values: np.ndarray  # complex, (F, T) or (channels, F, T)
    fs: int = FS
    n_fft: int = N_FFT
    hop: int = HOP

    @property
    def shape(self):
        return self.values.shape


def n_frames(n_samples, hop=HOP):
    return 1 + n_samples // hop


def stft(x, fs=FS, n_fft=N_FFT, hop=HOP):
    """Centered STFT along the last axis; returns ``(..., F, T)``."""
    if fs != FS:
        raise ValueError(f"features expect {FS} Hz input, got {fs}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("empty signal")
    pad = n_fft // 2
    if x.shape[-1] <= pad:
        raise ValueError(f"signal of {x.shape[-1]} samples is too short for reflect padding")
    width = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    xp = np.pad(x, width, mode="reflect")
    frames = sliding_window_view(xp, n_fft, axis=-1)[..., ::hop, :]
    spec = np.fft.rfft(frames * hann(n_fft), axis=-1)
    return Spectrogram(np.swapaxes(spec, -1, -2), fs, n_fft, hop)


def _values(X):
    return X.values if isinstance(X, Spectrogram) else np.asarray(X)


def sc_features(X1):
    return np.abs(_values(X1))


def _pair(X1, X2):
    a, b = _values(X1), _values(X2)
    if a.shape != b.shape:
        raise ValueError(f"spectrogram shapes differ: {a.shape} vs {b.shape}")
    return a, b


def ild(X1, X2):
    """Natural-log magnitude ratio, magnitudes floored at 1e-8."""
    a, b = _pair(X1, X2)
    return np.log(np.maximum(np.abs(a), MAG_FLOOR)) - np.log(np.maximum(np.abs(b), MAG_FLOOR))


def ipd(X1, X2):
    """Unit cross-spectrum, real parts stacked over imaginary parts along frequency."""
    a, b = _pair(X1, X2)
    cross = a * np.conj(b)
    mag = np.abs(cross)
    nz = mag > 0
    unit = np.ones_like(cross)
    unit[nz] = cross[nz] / mag[nz]
    return np.concatenate([unit.real, unit.imag], axis=-2)


@dataclass
class FeatureTensor:
    sc: np.ndarray  # (F, T)
    ild: np.ndarray  # (F, T)
    ipd: np.ndarray  # (2F, T)

    @property
    def n_frames(self):
        return self.sc.shape[-1]

    def stacked(self, dtype=np.float32):
        """(4, F, T) planes in ``PLANES`` order."""
        f = self.sc.shape[0]
        return np.stack([self.sc, self.ild, self.ipd[:f], self.ipd[f:]]).astype(dtype)

    @classmethod
    def from_stacked(cls, planes):
        planes = np.asarray(planes)
        return cls(planes[0], planes[1], np.concatenate([planes[2], planes[3]]))


def extract(mixture, fs=FS):
    """Feature planes of a 2-channel mixture; channel 0 (left mic) is the reference."""
    mixture = np.asarray(mixture)
    if mixture.ndim != 2 or mixture.shape[0] != 2:
        raise ValueError(f"expected a (2, N) mixture, got shape {mixture.shape}")
    X = stft(mixture, fs).values
    return FeatureTensor(sc_features(X[0]), ild(X[0], X[1]), ipd(X[0], X[1]))


# -- on-disk cache -------------------------------------------------------------

CACHE_MAGIC = b"RFC1"


def write_cache(path, planes, ids):
    """Store stacked planes ``(N, 4, F, T)`` as float32 after a JSON header."""
    planes = np.ascontiguousarray(planes, dtype="<f4")
    header = json.dumps({"dims": list(planes.shape), "dtype": "float32",
                         "planes": list(PLANES), "ids": list(ids)}).encode()
    pad = (-(len(CACHE_MAGIC) + 4 + len(header))) % 16
    header += b" " * pad
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(planes.tobytes())


def read_cache(path, mmap=True):
    """(planes, ids); planes are memory-mapped read-only by default."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != CACHE_MAGIC:
            raise ValueError(f"{path} is not a feature cache")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n))
        offset = 8 + n
    shape = tuple(header["dims"])
    if mmap:
        planes = np.memmap(path, dtype="<f4", mode="r", offset=offset, shape=shape)
    else:
        planes = np.fromfile(path, dtype="<f4", offset=offset).reshape(shape)
    return planes, header["ids"]
