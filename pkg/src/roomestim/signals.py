"""Speech ingestion, resampling, wet speech, noise generation and mixing."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import linalg, signal
from scipy.io import wavfile

FS_SIM = 48000
FS = 16000
CLIP_SECONDS = 3.0
CLIP_SAMPLES = int(CLIP_SECONDS * FS)
LATE_GATE_S = 0.05


class CorpusError(RuntimeError):
    """Speech corpus missing, unreadable or too small."""


@lru_cache(maxsize=1)
def _decimation_filter():
    # windowed-sinc low-pass at 7.2 kHz, designed at the 48 kHz input rate
    return signal.firwin(241, 7200.0, window=("kaiser", 8.0), fs=FS_SIM)


def resample_48k_to_16k(x, fs=FS_SIM):
    """Anti-aliased 3:1 decimation along the last axis; length ceil(N/3)."""
    if fs != FS_SIM:
        raise ValueError(f"expected 48 kHz input, got {fs} Hz")
    x = np.asarray(x, dtype=np.float64)
    return signal.resample_poly(x, 1, 3, axis=-1, window=_decimation_filter())


def to_16k(x, fs):
    if fs == FS:
        return np.asarray(x, dtype=np.float64)
    if fs == FS_SIM:
        return resample_48k_to_16k(x)
    g = np.gcd(int(fs), FS)
    return signal.resample_poly(np.asarray(x, dtype=np.float64), FS // g, int(fs) // g, axis=-1)


@dataclass
class SpeechClip:
    samples: np.ndarray
    fs: int
    clip_id: str
    speaker_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"clip {self.clip_id} has non-finite samples")

    @property
    def duration(self):
        return self.samples.size / self.fs

    def excerpt(self, rng, seconds=CLIP_SECONDS):
        """Random ``seconds``-long excerpt at 16 kHz, scaled to unit RMS."""
        x = to_16k(self.samples, self.fs)
        n = int(round(seconds * FS))
        if x.size < n:
            raise CorpusError(f"clip {self.clip_id} is shorter than {seconds} s")
        start = int(rng.integers(0, x.size - n + 1))
        seg = x[start:start + n]
        rms = np.sqrt(np.mean(seg ** 2))
        if rms <= 0:
            raise CorpusError(f"clip {self.clip_id} excerpt is silent")
        return seg / rms


# -- synthetic speech ----------------------------------------------------------

_FORMANTS = np.array([500.0, 1500.0, 2500.0, 3500.0])
_BANDWIDTHS = np.array([90.0, 120.0, 180.0, 250.0])


def _formant_filter(formants, bandwidths, fs=FS, tilt=0.9):
    poles = []
    for f, bw in zip(formants, bandwidths):
        r = np.exp(-np.pi * bw / fs)
        poles += [r * np.exp(2j * np.pi * f / fs), r * np.exp(-2j * np.pi * f / fs)]
    poles.append(tilt)
    return np.real(np.poly(poles))


def synthetic_speech(rng, seconds=4.0, clip_id="syn", fs=FS):
    """Speech-like test signal without a corpus.

    All-pole (formant) filtered noise, amplitude-modulated by a 4 Hz
    syllabic envelope and gated into bursts separated by short pauses.
    """
    n = int(round(seconds * fs))
    t = np.arange(n) / fs
    formants = _FORMANTS * rng.uniform(0.85, 1.15, size=4)
    a = _formant_filter(formants, _BANDWIDTHS, fs)
    x = signal.lfilter([1.0], a, rng.standard_normal(n))
    rate = rng.uniform(3.0, 5.0)
    env = 0.5 * (1.0 - np.cos(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))) ** 1.5
    gate = np.zeros(n)
    pos = 0
    while pos < n:
        burst = int(rng.uniform(0.4, 1.2) * fs)
        pause = int(rng.uniform(0.05, 0.3) * fs)
        gate[pos:pos + burst] = 1.0
        pos += burst + pause
    gate = np.convolve(gate, np.hanning(161) / np.hanning(161).sum(), mode="same")
    x = x * env * gate
    return SpeechClip(x / np.sqrt(np.mean(x ** 2)), fs, clip_id, speaker_id="synthetic")


def load_corpus(corpus_dir):
    """All ``*.wav`` files below ``corpus_dir`` as mono clips, sorted by path."""
    root = Path(corpus_dir)
    if not root.is_dir():
        raise CorpusError(f"corpus directory {root} not found")
    clips = []
    for path in sorted(root.rglob("*.wav")):
        try:
            fs, data = wavfile.read(path)
        except (ValueError, OSError) as exc:
            raise CorpusError(f"cannot read {path}: {exc}") from exc
        data = np.asarray(data)
        if data.dtype.kind == "i":
            data = data / float(np.iinfo(data.dtype).max)
        if data.ndim == 2:
            data = data[:, 0]
        rel = path.relative_to(root)
        clips.append(SpeechClip(data.astype(np.float64), int(fs), str(rel),
                                speaker_id=rel.parts[0] if len(rel.parts) > 1 else ""))
    if not clips:
        raise CorpusError(f"no .wav files under {root}")
    return clips


# -- speech-shaped noise -------------------------------------------------------

@dataclass
class SpeechSpectrumModel:
    """All-pole fit of the long-term average speech spectrum."""

    a: np.ndarray | None = None  # [1, a1, ..., ap]
    gain: float = 0.0
    order: int = 16

    @property
    def fitted(self):
        return self.a is not None

    @classmethod
    def fit(cls, clips, order=16, nfft=512):
        psd = np.zeros(nfft // 2 + 1)
        total = 0
        for clip in clips:
            x = to_16k(clip.samples, clip.fs) if isinstance(clip, SpeechClip) else np.asarray(clip)
            _, p = signal.welch(x, fs=FS, nperseg=nfft, window="hann")
            psd += p * x.size
            total += x.size
        if total == 0:
            raise CorpusError("cannot fit a speech spectrum without clips")
        psd /= total
        # autocorrelation of the average spectrum, then Levinson via Toeplitz solve
        r = np.fft.irfft(psd)[: order + 1]
        coeffs = linalg.solve_toeplitz(r[:order], r[1:order + 1])
        a = np.concatenate([[1.0], -coeffs])
        model = cls(a, 1.0, order)
        # unit output power for unit-variance excitation
        _, h = signal.freqz([1.0], a, worN=4096)
        model.gain = float(1.0 / np.sqrt(np.mean(np.abs(h) ** 2)))
        return model

    def to_dict(self):
        return {"a": None if self.a is None else self.a.tolist(), "gain": self.gain, "order": self.order}

    @classmethod
    def from_dict(cls, d):
        return cls(None if d["a"] is None else np.array(d["a"]), d["gain"], d["order"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def speech_shaped_noise(model, n_samples, rng, warmup=2048):
    """White noise shaped by the fitted all-pole speech spectrum (unit power)."""
    if model is None or not model.fitted:
        raise ValueError("speech spectrum model is not fitted")
    x = rng.standard_normal(n_samples + warmup)
    return model.gain * signal.lfilter([1.0], model.a, x)[warmup:]


# -- convolution and noise -----------------------------------------------------

def wet_speech(rir, clip, n_out=CLIP_SAMPLES):
    """Per-channel linear convolution of a 16 kHz clip with a 16 kHz RIR, first ``n_out`` samples."""
    rir = np.atleast_2d(np.asarray(rir, dtype=np.float64))
    clip = np.asarray(clip, dtype=np.float64)
    if clip.size < n_out:
        raise ValueError(f"clip has {clip.size} samples, need {n_out}")
    out = signal.fftconvolve(rir, clip[None, :n_out], axes=-1)
    return out[:, :n_out]


def late_rir(rir, onsets, fs=FS, gate_s=LATE_GATE_S):
    """Copy of ``rir`` with everything before ``onset + gate`` zeroed per channel."""
    rir = np.array(np.atleast_2d(rir), dtype=np.float64)
    gate = int(round(gate_s * fs))
    for ch, onset in enumerate(np.broadcast_to(onsets, (rir.shape[0],))):
        cut = int(np.floor(onset)) + gate
        if cut >= rir.shape[1]:
            raise ValueError("RIR ends within the late-part gate")
        rir[ch, :cut] = 0.0
    return rir


def detect_onsets(rir, threshold_db=-20.0):
    """First sample per channel within ``threshold_db`` of the channel peak."""
    rir = np.atleast_2d(rir)
    mag = np.abs(rir)
    thr = mag.max(axis=1, keepdims=True) * 10 ** (threshold_db / 20)
    return np.argmax(mag >= thr, axis=1)


def diffuse_babble(noise, rir, onsets=None, fs=FS, gate_s=LATE_GATE_S):
    """Noise convolved with the late part (after direct arrival + 50 ms) of each RIR channel.

    Output has the noise's length.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if onsets is None:
        onsets = detect_onsets(rir)
    late = late_rir(rir, onsets, fs, gate_s)
    return signal.fftconvolve(late, noise[None], axes=-1)[:, :noise.size]


def power(x):
    return float(np.mean(np.square(x)))


def snr_db(sig, noise):
    return 10.0 * np.log10(power(sig) / power(noise))


@dataclass
class NoiseGains:
    static_gain: float
    diffuse_gain: float
    static_snr_db: float
    diffuse_snr_db: float

    def to_dict(self):
        return asdict(self)


def calibrate_noise_gains(reference_wet, reference_babble, rng,
                          static_range=(70.0, 90.0), diffuse_range=(30.0, 60.0)):
    """Gains that put the reference mixture at randomly drawn static/diffuse SNRs.

    Static noise is unit-variance white noise per channel; the diffuse
    component is ``reference_babble`` as given. SNRs are full-signal power
    ratios over both channels.
    """
    p_sig = power(reference_wet)
    p_bab = power(reference_babble)
    if p_sig <= 0 or p_bab <= 0:
        raise ValueError("reference signal or babble has zero energy")
    static_snr = float(rng.uniform(*static_range))
    diffuse_snr = float(rng.uniform(*diffuse_range))
    g_static = np.sqrt(p_sig / 10 ** (static_snr / 10))
    g_diffuse = np.sqrt(p_sig / (p_bab * 10 ** (diffuse_snr / 10)))
    return NoiseGains(float(g_static), float(g_diffuse), static_snr, diffuse_snr)


@dataclass
class MixtureParts:
    wet: np.ndarray
    static: np.ndarray
    diffuse: np.ndarray

    @property
    def mixture(self):
        return self.wet + self.static + self.diffuse

    def snrs(self):
        return {
            "snr_static_db": snr_db(self.wet, self.static),
            "snr_diffuse_db": snr_db(self.wet, self.diffuse),
            "snr_db": snr_db(self.wet, self.static + self.diffuse),
        }


def mix(wet, babble, gains, rng):
    """Add independent static noise and scaled diffuse babble to ``wet``."""
    static = gains.static_gain * rng.standard_normal(wet.shape)
    return MixtureParts(wet, static, gains.diffuse_gain * np.asarray(babble))
