"""Hybrid shoebox RIR simulator: image sources plus diffuse rain.

Specular reflections come from the image-source method, carrying the
unscattered ``(1 - s)`` share of the energy at every bounce. Scattered
energy is traced with rays that "rain" a Lambertian contribution onto each
microphone at every wall hit. Both parts are built per octave band,
band-limited and summed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.io import wavfile

from . import _kernels
from . import rng as rngmod
from .analysis import octave_filter
from .geometry import N_BANDS, OCTAVE_BANDS, RoomSpec

FS = 48000
SPEED_OF_SOUND = 343.0
APERTURE = 0.225
MARGIN = 0.30
SINC_TAPS = 32
DETECTOR_RADIUS = 0.1
RIR_CAP_S = 5.0


class GeometryError(ValueError):
    """Source or receiver placement violates the room constraints."""


@dataclass
class ArrayGeometry:
    source: np.ndarray
    center: np.ndarray
    mics: np.ndarray  # (2, 3), channel 0 is the left microphone
    azimuth: float = 0.0

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float64)
        self.center = np.asarray(self.center, dtype=np.float64)
        self.mics = np.asarray(self.mics, dtype=np.float64)

    @classmethod
    def from_center(cls, source, center, azimuth, aperture=APERTURE):
        """Horizontal two-mic array; the left mic sits at +90 deg from broadside."""
        center = np.asarray(center, dtype=np.float64)
        axis = np.array([-np.sin(azimuth), np.cos(azimuth), 0.0])
        mics = np.stack([center + 0.5 * aperture * axis, center - 0.5 * aperture * axis])
        return cls(source, center, mics, azimuth)

    @property
    def broadside(self):
        return np.array([np.cos(self.azimuth), np.sin(self.azimuth), 0.0])

    def to_record(self):
        return {"source": self.source.tolist(), "center": self.center.tolist(),
                "mics": self.mics.tolist(), "azimuth": self.azimuth}

    @classmethod
    def from_record(cls, rec):
        return cls(rec["source"], rec["center"], rec["mics"], rec.get("azimuth", 0.0))


def wall_clearance(room, point):
    p = np.asarray(point, dtype=np.float64)
    return float(min(p.min(), (room.dims - p).min()))


def validate_geometry(room, geom, margin=MARGIN):
    points = {"source": geom.source, "mic 0": geom.mics[0], "mic 1": geom.mics[1]}
    for name, p in points.items():
        if wall_clearance(room, p) < margin - 1e-12:
            raise GeometryError(f"{name} at {np.round(p, 3).tolist()} is closer than {margin} m to a wall")
    for m in geom.mics:
        if np.linalg.norm(m - geom.source) < margin - 1e-12:
            raise GeometryError(f"source closer than {margin} m to a microphone")
    if abs(geom.mics[0, 2] - geom.mics[1, 2]) > 1e-9:
        raise GeometryError("microphone array must be parallel to the floor")


def sample_positions(room, rng, margin=MARGIN, aperture=APERTURE, max_tries=10000):
    """Uniform source and array placement satisfying all clearances."""
    lo = np.full(3, margin)
    hi = room.dims - margin
    for _ in range(max_tries):
        source = rng.uniform(lo, hi)
        center = rng.uniform(lo, hi)
        azimuth = rng.uniform(0.0, 2.0 * np.pi)
        geom = ArrayGeometry.from_center(source, center, azimuth, aperture)
        try:
            validate_geometry(room, geom, margin)
        except GeometryError:
            continue
        return geom
    raise GeometryError("could not place source and receiver")


def reference_positions(room, rng, distance=1.0, margin=MARGIN, aperture=APERTURE, max_tries=10000):
    """Array with a source ``distance`` m along its broadside at mic height."""
    lo = np.full(3, margin)
    hi = room.dims - margin
    for _ in range(max_tries):
        center = rng.uniform(lo, hi)
        azimuth = rng.uniform(0.0, 2.0 * np.pi)
        geom = ArrayGeometry.from_center(center, center, azimuth, aperture)
        geom.source = center + distance * geom.broadside
        try:
            validate_geometry(room, geom, margin)
        except GeometryError:
            continue
        return geom
    raise GeometryError("could not place the reference source")


# -- image sources ---------------------------------------------------------

@dataclass
class ImageSource:
    position: np.ndarray
    order: int
    gain: np.ndarray  # per band


@dataclass
class ImageSources:
    positions: np.ndarray  # (n, 3)
    orders: np.ndarray  # (n,)
    gains: np.ndarray  # (n, bands)
    hits: np.ndarray  # (n, 6) reflections per wall

    def __len__(self):
        return len(self.orders)

    def __getitem__(self, i):
        return ImageSource(self.positions[i], int(self.orders[i]), self.gains[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def _axis_terms(coord, size, max_order):
    # (position, hits on low wall, hits on high wall) for one axis
    out = []
    for n in range(-max_order, max_order + 1):
        for u in (0, 1):
            lo_hits, hi_hits = abs(n - u), abs(n)
            if lo_hits + hi_hits <= max_order:
                out.append(((1 - 2 * u) * coord + 2 * n * size, lo_hits, hi_hits))
    return out


def enumerate_images(room, source, max_order):
    """All image sources with at most ``max_order`` reflections.

    Sorted by order, then lexicographically by position.
    """
    if max_order < 0:
        raise ValueError("max_order must be non-negative")
    source = np.asarray(source, dtype=np.float64)
    if wall_clearance(room, source) <= 0:
        raise GeometryError("source must lie strictly inside the room")
    terms = [_axis_terms(source[a], room.dims[a], max_order) for a in range(3)]
    positions, hits = [], []
    for tx, ty, tz in product(*terms):
        h = (tx[1], tx[2], ty[1], ty[2], tz[1], tz[2])
        if sum(h) <= max_order:
            positions.append((tx[0], ty[0], tz[0]))
            hits.append(h)
    positions = np.array(positions)
    hits = np.array(hits, dtype=np.int64)
    orders = hits.sum(axis=1)
    order = np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0], orders))
    positions, hits, orders = positions[order], hits[order], orders[order]
    # amplitude per bounce is sqrt((1 - alpha)(1 - s)); 0**0 == 1 for unhit walls
    reflect = (1.0 - room.absorption) * (1.0 - room.scattering)
    gains = np.prod(reflect[None] ** (0.5 * hits[:, :, None]), axis=1)
    return ImageSources(positions, orders, gains, hits)


def fractional_delay_taps(delay, n_taps=SINC_TAPS):
    """Hann-windowed sinc taps for a (vector of) fractional sample delays.

    Returns (indices, weights), each shaped (len(delay), n_taps).
    """
    delay = np.atleast_1d(np.asarray(delay, dtype=np.float64))
    half = n_taps // 2
    base = np.floor(delay).astype(np.int64)
    idx = base[:, None] + np.arange(-half + 1, half + 1)[None, :]
    t = idx - delay[:, None]
    win = 0.5 * (1.0 + np.cos(np.pi * t / half))
    win[np.abs(t) >= half] = 0.0
    return idx, np.sinc(t) * win


def specular_rir(images, mic_position, room, fs=FS, c=SPEED_OF_SOUND, n_samples=None):
    """Per-band specular impulse trains at one microphone, shape (bands, n)."""
    if len(images) == 0:
        raise ValueError("image list is empty")
    mic = np.asarray(mic_position, dtype=np.float64)
    if wall_clearance(room, mic) <= 0:
        raise GeometryError("microphone must lie inside the room")
    dist = np.linalg.norm(images.positions - mic, axis=1)
    delay = dist / c * fs
    if n_samples is None:
        n_samples = int(np.ceil(delay.max())) + SINC_TAPS
    idx, w = fractional_delay_taps(delay)
    amp = images.gains / (4.0 * np.pi * dist[:, None])  # (n, bands)
    ok = (idx >= 0) & (idx < n_samples)
    flat_idx = idx[ok]
    out = np.empty((images.gains.shape[1], n_samples))
    for b in range(out.shape[0]):
        out[b] = np.bincount(flat_idx, weights=(w * amp[:, b:b + 1])[ok], minlength=n_samples)[:n_samples]
    return out


# -- diffuse rain ------------------------------------------------------------

@dataclass
class EnergyHistogram:
    energy: np.ndarray  # (mics, bands, bins), pressure-squared units per bin
    fs: float
    detector_radius: float = DETECTOR_RADIUS

    def captured_energy(self):
        """Energy intercepted by each detector sphere, per band."""
        return self.energy.sum(axis=-1) * np.pi * self.detector_radius ** 2


EMITTED_ENERGY = 1.0 / (4.0 * np.pi)


def diffuse_rain(room, source, mics, n_rays=2000, rng=None, seed=None, fs=FS, c=SPEED_OF_SOUND,
                 cap_s=RIR_CAP_S, radius=DETECTOR_RADIUS, decay_db=60.0):
    """Scattered-energy histogram via stochastic ray tracing.

    Rays leave the source isotropically with ``1/(4 pi n_rays)`` energy per
    band. At every wall hit energy is multiplied by ``1 - alpha``; a fraction
    ``s`` is rained onto each microphone (Lambert cosine, detector solid
    angle, straight-line delay) and the ray continues in a Lambertian
    direction with probability ``s``, specularly otherwise. Tracing stops at
    ``decay_db`` below the emitted energy or at ``cap_s``.
    """
    if n_rays <= 0:
        raise ValueError("n_rays must be positive")
    mics = np.atleast_2d(np.asarray(mics, dtype=np.float64))
    for p in (source, *mics):
        if wall_clearance(room, p) <= 0:
            raise GeometryError("source and microphones must lie inside the room")
    if seed is None:
        if rng is None:
            raise ValueError("need rng or seed")
        seed = rngmod.derive_seed(rng)
    n_bins = int(round(cap_s * fs))
    hist = _kernels.trace_rain(room.dims, source, mics, room.absorption, room.scattering,
                               n_rays, seed, fs, c, n_bins, radius, 10.0 ** (-decay_db / 10.0))
    return EnergyHistogram(hist, fs, radius)


# -- full RIR ----------------------------------------------------------------

@dataclass
class Rir:
    data: np.ndarray  # (channels, samples) float32
    fs: int = FS
    room_id: str = ""
    position: int = -1
    geometry: ArrayGeometry | None = None
    meta: dict = field(default_factory=dict)

    def direct_delays(self, c=SPEED_OF_SOUND):
        """Direct-path delay per channel in samples (needs geometry)."""
        g = self.geometry
        return np.linalg.norm(g.mics - g.source, axis=1) / c * self.fs

    def sidecar(self):
        rec = {"room_id": self.room_id, "position": self.position, "fs": self.fs,
               "n_samples": int(self.data.shape[1])}
        if self.geometry is not None:
            rec["geometry"] = self.geometry.to_record()
        rec.update(self.meta)
        return rec

    def write(self, wav_path):
        """Two-channel float32 WAV plus ``.json`` sidecar."""
        wavfile.write(wav_path, self.fs, np.ascontiguousarray(self.data.T, dtype=np.float32))
        with open(str(wav_path)[:-4] + ".json", "w") as fh:
            json.dump(self.sidecar(), fh, indent=1)

    @classmethod
    def read(cls, wav_path):
        fs, data = wavfile.read(wav_path)
        with open(str(wav_path)[:-4] + ".json") as fh:
            meta = json.load(fh)
        geom = ArrayGeometry.from_record(meta.pop("geometry")) if "geometry" in meta else None
        room_id = meta.pop("room_id", "")
        position = meta.pop("position", -1)
        for k in ("fs", "n_samples"):
            meta.pop(k, None)
        return cls(np.ascontiguousarray(data.T), fs, room_id, position, geom, meta)


def synthesize_rir(room: RoomSpec, geom: ArrayGeometry, max_order=10, n_rays=2000, rng=None,
                   fs=FS, c=SPEED_OF_SOUND, cap_s=RIR_CAP_S, radius=DETECTOR_RADIUS,
                   position=-1, tail_s=0.05):
    """Two-channel hybrid RIR at ``fs``.

    Per band and channel, the specular train and the sign-randomized
    square-root of the rain histogram are summed, band-limited by the octave
    filter and the bands are added up.
    """
    validate_geometry(room, geom)
    if rng is None:
        raise ValueError("synthesize_rir needs an rng")
    images = enumerate_images(room, geom.source, max_order)
    hist = diffuse_rain(room, geom.source, geom.mics, n_rays, rng=rng, fs=fs, c=c,
                        cap_s=cap_s, radius=radius)
    cap = int(round(cap_s * fs))
    nz = np.flatnonzero(hist.energy.any(axis=(0, 1)))
    last_rain = nz[-1] + 1 if nz.size else 0
    dist = np.linalg.norm(images.positions[None] - geom.mics[:, None], axis=2)
    last_spec = int(np.ceil(dist.max() / c * fs)) + SINC_TAPS
    n = min(cap, max(last_rain, last_spec) + int(tail_s * fs))
    signs = rng.integers(0, 2, size=(geom.mics.shape[0], N_BANDS, n), dtype=np.int8) * 2 - 1
    out = np.zeros((geom.mics.shape[0], n))
    for m, mic in enumerate(geom.mics):
        bands = specular_rir(images, mic, room, fs, c, n_samples=n)
        bands += signs[m] * np.sqrt(hist.energy[m, :, :n])
        for b, center in enumerate(OCTAVE_BANDS):
            out[m] += octave_filter(bands[b], center, fs)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite RIR samples")
    meta = {"max_order": int(max_order), "n_rays": int(n_rays), "n_images": len(images)}
    return Rir(out.astype(np.float32), fs, room.room_id, position, geom, meta)
