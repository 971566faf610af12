"""Octave-band filtering, Schroeder decay curves and RT60 regression."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from .geometry import N_BANDS, OCTAVE_BANDS

DB_FLOOR = -120.0
FIT_RANGE = (-25.0, -5.0)


class InsufficientDecayError(ValueError):
    """The decay curve never reaches the bottom of the regression range."""


@dataclass
class DecayCurve:
    time: np.ndarray
    level: np.ndarray  # dB re total energy

    @property
    def fs(self):
        return 1.0 / (self.time[1] - self.time[0]) if self.time.size > 1 else np.nan


@dataclass
class BandRt60:
    values: np.ndarray  # seconds, nan where invalid
    valid: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@lru_cache(maxsize=64)
def _octave_sos(center, fs, order):
    lo, hi = center / np.sqrt(2.0), center * np.sqrt(2.0)
    if hi >= fs / 2.0:
        raise ValueError(f"band {center:g} Hz upper edge {hi:.0f} Hz is above Nyquist for fs={fs:g}")
    return signal.butter(order, [lo, hi], btype="bandpass", output="sos", fs=fs)


def octave_filter(x, center, fs, order=2):
    """Zero-phase octave band-pass along the last axis.

    ``order=2`` yields a 4th-order Butterworth band-pass, applied forward
    and backward.
    """
    if center not in OCTAVE_BANDS:
        raise ValueError(f"{center} Hz is not an octave band center")
    sos = _octave_sos(float(center), float(fs), order)
    x = np.asarray(x, dtype=np.float64)
    if not np.any(x):
        return np.zeros_like(x)
    padlen = min(x.shape[-1] - 1, 3 * (2 * sos.shape[0] + 1))
    return signal.sosfiltfilt(sos, x, axis=-1, padlen=padlen)


def schroeder_curve(h, fs):
    """Backward-integrated energy decay of ``h`` in dB, 0 dB at t=0."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1:
        raise ValueError("schroeder_curve expects a 1-D impulse response")
    energy = h * h
    total = energy.sum()
    if not total > 0:
        raise ValueError("cannot integrate an all-zero impulse response")
    edc = np.cumsum(energy[::-1])[::-1]
    with np.errstate(divide="ignore"):
        level = 10.0 * np.log10(edc / total)
    level = np.maximum(level, DB_FLOOR)
    level[0] = 0.0
    return DecayCurve(np.arange(h.size) / fs, level)


def rt60_from_curve(curve, fit_range=FIT_RANGE):
    """RT60 from a least-squares line through the curve inside ``fit_range`` dB."""
    lo, hi = fit_range
    if curve.level.min() > lo:
        raise InsufficientDecayError(
            f"decay curve only reaches {curve.level.min():.1f} dB, need {lo:.0f} dB")
    sel = (curve.level >= lo) & (curve.level <= hi)
    if sel.sum() < 2:
        raise InsufficientDecayError("fewer than two curve samples inside the regression range")
    slope, _ = np.polyfit(curve.time[sel], curve.level[sel], 1)
    if slope >= 0:
        raise InsufficientDecayError("non-negative decay slope")
    return -60.0 / slope


def band_rt60(h, fs, center):
    return rt60_from_curve(schroeder_curve(octave_filter(h, center, fs), fs))


def position_rt60(channels, fs):
    """Channel-averaged RT60 per band for one multi-channel RIR; nan if invalid."""
    channels = np.atleast_2d(np.asarray(channels, dtype=np.float64))
    out = np.full(N_BANDS, np.nan)
    for b, center in enumerate(OCTAVE_BANDS):
        vals = []
        for ch in channels:
            try:
                vals.append(band_rt60(ch, fs, center))
            except ValueError:
                continue
        if vals:
            out[b] = float(np.mean(vals))
    return out


def room_rt60(rirs, fs=None):
    """Median over positions of channel-averaged per-band RT60.

    ``rirs`` is a sequence of ``Rir`` objects or (channels, samples) arrays;
    plain arrays need ``fs``.
    """
    per_pos = []
    for rir in rirs:
        data = getattr(rir, "data", rir)
        rate = getattr(rir, "fs", fs)
        if rate is None:
            raise ValueError("sample rate required for array input")
        per_pos.append(position_rt60(data, rate))
    return median_over_positions(np.array(per_pos))


def median_over_positions(per_pos):
    """Per-band median of a (positions, bands) RT60 table, ignoring nan."""
    per_pos = np.atleast_2d(np.asarray(per_pos, dtype=np.float64))
    valid = np.isfinite(per_pos)
    bad = ~valid.any(axis=0)
    if np.any(bad):
        bands = [int(OCTAVE_BANDS[i]) for i in np.flatnonzero(bad)]
        raise InsufficientDecayError(f"no valid RT60 measurement in bands {bands} Hz")
    values = np.array([np.median(per_pos[valid[:, b], b]) for b in range(per_pos.shape[1])])
    return BandRt60(values, valid.any(axis=0))
