"""Shoebox room sampling, absorption statistics and target assembly."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod

OCTAVE_BANDS = (125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0)
N_BANDS = len(OCTAVE_BANDS)
# wall order used everywhere: x=0, x=L, y=0, y=W, z=0 (floor), z=H (ceiling)
SURFACES = ("x0", "x1", "y0", "y1", "floor", "ceiling")
N_SURFACES = len(SURFACES)
N_TARGETS = 2 * N_BANDS + 2

TARGET_NAMES = tuple(
    [f"alpha_{int(b)}" for b in OCTAVE_BANDS]
    + [f"rt60_{int(b)}" for b in OCTAVE_BANDS]
    + ["surface", "volume"]
)
# parameter groups as reported: band-averaged absorption and RT60, S, V
GROUPS = {
    "alpha": slice(0, N_BANDS),
    "rt60": slice(N_BANDS, 2 * N_BANDS),
    "surface": slice(2 * N_BANDS, 2 * N_BANDS + 1),
    "volume": slice(2 * N_BANDS + 1, 2 * N_BANDS + 2),
}

LENGTH_RANGE = (3.0, 10.0)
WIDTH_RANGE = (3.0, 10.0)
HEIGHT_RANGE = (2.5, 4.0)
SCATTERING_RANGE = (0.2, 1.0)


class DomainError(ValueError):
    """Input outside the physical domain of a formula."""


@dataclass(frozen=True)
class AbsorptionRanges:
    """Bounds for reflectivity-biased absorption sampling.

    With probability ``reflective_probability`` a surface gets one
    frequency-independent value drawn in ``[reflective_floor,
    reflective_threshold)``; otherwise each band is drawn uniformly in
    ``[low[b], high[b]]``.
    """

    low: tuple = (0.12,) * N_BANDS
    high: tuple = (0.70,) * N_BANDS
    reflective_threshold: float = 0.12
    reflective_probability: float = 0.5
    reflective_floor: float = 0.01

    def __post_init__(self):
        if len(self.low) != N_BANDS or len(self.high) != N_BANDS:
            raise ValueError(f"absorption bounds need {N_BANDS} bands")
        for lo, hi in zip(self.low, self.high):
            if not 0.0 < lo <= hi < 1.0:
                raise ValueError(f"invalid absorption band range [{lo}, {hi}]")
        if not 0.0 < self.reflective_floor < self.reflective_threshold < 1.0:
            raise ValueError("reflective floor/threshold must satisfy 0 < floor < threshold < 1")
        if not 0.0 <= self.reflective_probability <= 1.0:
            raise ValueError("reflective_probability must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        for key in ("low", "high"):
            if key in d:
                v = d[key]
                d[key] = tuple(float(x) for x in (v if np.ndim(v) else [v] * N_BANDS))
        return cls(**d)


@dataclass
class RoomSpec:
    length: float
    width: float
    height: float
    absorption: np.ndarray  # (surfaces, bands)
    scattering: float
    seed: int = 0
    room_id: str = ""

    def __post_init__(self):
        self.absorption = np.asarray(self.absorption, dtype=np.float64)
        if self.absorption.shape != (N_SURFACES, N_BANDS):
            raise ValueError(f"absorption must be {N_SURFACES}x{N_BANDS}, got {self.absorption.shape}")
        if min(self.length, self.width, self.height) <= 0:
            raise ValueError("room dimensions must be positive")
        if np.any(self.absorption < 0) or np.any(self.absorption > 1):
            raise ValueError("absorption coefficients must lie in [0, 1]")
        if not 0.0 <= self.scattering <= 1.0:
            raise ValueError("scattering must lie in [0, 1]")

    @property
    def dims(self):
        return np.array([self.length, self.width, self.height])

    @property
    def surface_areas(self):
        L, W, H = self.length, self.width, self.height
        return np.array([W * H, W * H, L * H, L * H, L * W, L * W])

    @property
    def surface(self):
        L, W, H = self.length, self.width, self.height
        return 2.0 * (L * W + L * H + W * H)

    @property
    def volume(self):
        return self.length * self.width * self.height

    def to_record(self):
        return {
            "id": self.room_id,
            "dims": [self.length, self.width, self.height],
            "alpha": self.absorption.tolist(),
            "scattering": self.scattering,
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, rec):
        L, W, H = rec["dims"]
        return cls(L, W, H, np.array(rec["alpha"]), rec["scattering"],
                   seed=rec.get("seed", 0), room_id=rec.get("id", ""))


@dataclass
class RoomAnnotation:
    mean_absorption: np.ndarray
    rt60: np.ndarray
    surface: float
    volume: float
    room_id: str = ""

    def to_vector(self):
        """Targets ordered as alpha(125..4k), RT60(125..4k), S, V."""
        return np.concatenate([self.mean_absorption, self.rt60, [self.surface, self.volume]])

    @classmethod
    def from_vector(cls, vec, room_id=""):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (N_TARGETS,):
            raise ValueError(f"target vector must have length {N_TARGETS}")
        return cls(vec[:N_BANDS].copy(), vec[N_BANDS:2 * N_BANDS].copy(),
                   float(vec[-2]), float(vec[-1]), room_id=room_id)


def sample_absorption(rng, ranges=AbsorptionRanges(), force=None):
    """Draw a (6 surfaces x 6 bands) absorption matrix.

    ``force`` may be ``"reflective"`` or ``"absorbent"`` to pin the branch
    for every surface; the random branch draw is still consumed so the
    stream position does not depend on it.
    """
    alpha = np.empty((N_SURFACES, N_BANDS))
    low = np.asarray(ranges.low)
    high = np.asarray(ranges.high)
    for i in range(N_SURFACES):
        reflective = rng.random() < ranges.reflective_probability
        flat = rng.uniform(ranges.reflective_floor, ranges.reflective_threshold)
        per_band = rng.uniform(low, high)
        if force == "reflective":
            reflective = True
        elif force == "absorbent":
            reflective = False
        alpha[i] = flat if reflective else per_band
    return alpha


def sample_room(rng, ranges=AbsorptionRanges(), room_id="", seed=0):
    length = rng.uniform(*LENGTH_RANGE)
    width = rng.uniform(*WIDTH_RANGE)
    height = rng.uniform(*HEIGHT_RANGE)
    scattering = rng.uniform(*SCATTERING_RANGE)
    alpha = sample_absorption(rng, ranges)
    return RoomSpec(length, width, height, alpha, scattering, seed=seed, room_id=room_id)


def room_for_index(master_seed, index, ranges=AbsorptionRanges()):
    """Room ``index`` of a dataset, drawn from its own stream."""
    rng = rngmod.stream(master_seed, index, rngmod.ROOM)
    return sample_room(rng, ranges, room_id=f"room{index:05d}", seed=int(master_seed))


def weighted_mean_absorption(alpha, areas):
    """Area-weighted mean of per-surface absorption (works per band on 2-D input)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    areas = np.asarray(areas, dtype=np.float64)
    return np.tensordot(areas, alpha, axes=(0, 0)) / areas.sum()


def mean_absorption(room, band=None):
    """Mean absorption of ``room`` in ``band`` (index), or all bands if None."""
    abar = weighted_mean_absorption(room.absorption, room.surface_areas)
    return abar if band is None else float(abar[band])


def sabine_rt60(volume, surface, mean_abs):
    """Sabine reverberation time 0.16 V / (mean_abs * S) in seconds."""
    mean_abs = np.asarray(mean_abs, dtype=np.float64)
    if np.any(mean_abs <= 0):
        raise DomainError("mean absorption must be positive")
    if np.any(mean_abs > 1):
        raise DomainError("mean absorption must not exceed 1")
    if volume <= 0 or surface <= 0:
        raise DomainError("volume and surface must be positive")
    out = 0.16 * volume / (mean_abs * surface)
    return float(out) if out.ndim == 0 else out


def annotate_room(room, measured_rt60):
    rt = np.asarray(measured_rt60, dtype=np.float64)
    if rt.shape != (N_BANDS,):
        raise ValueError(f"need one RT60 per band ({N_BANDS}), got shape {rt.shape}")
    if not np.all(np.isfinite(rt)):
        missing = [int(OCTAVE_BANDS[i]) for i in np.flatnonzero(~np.isfinite(rt))]
        raise ValueError(f"missing RT60 for bands {missing} Hz")
    return RoomAnnotation(mean_absorption(room), rt, room.surface, room.volume, room_id=room.room_id)


def write_rooms(path, rooms):
    with open(path, "w") as fh:
        for room in rooms:
            fh.write(json.dumps(room.to_record()) + "\n")


def read_rooms(path):
    with open(path) as fh:
        return [RoomSpec.from_record(json.loads(line)) for line in fh if line.strip()]

