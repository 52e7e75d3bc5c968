"""Frame-level acoustic features: 13 MFCCs plus five spectral descriptors.

Audio is 16 kHz mono, analysed in 512-sample Hann windows hopped by 256
samples.  Each frame yields an 18-dimensional vector ordered as
``FEATURE_NAMES``; :func:`append_deltas` extends it to 54 dimensions with
delta and delta-delta coefficients.
"""
from __future__ import annotations

import csv
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import get_window
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

SAMPLE_RATE = 16000
N_MFCC = 13
N_MEL = 26
LOG_FLOOR = 1e-10
MAG_FLOOR = 1e-10
ROLLOFF_FRACTION = 0.85
STD_CLAMP = 1e-8

BASE_NAMES = [f"mfcc_{i}" for i in range(N_MFCC)] + [
    "centroid",
    "flatness",
    "rolloff",
    "kurtosis",
    "zcr",
]
FEATURE_NAMES = BASE_NAMES
DELTA_NAMES = BASE_NAMES + [f"d_{n}" for n in BASE_NAMES] + [f"dd_{n}" for n in BASE_NAMES]


class InsufficientAudioError(ValueError):
    """Raised when a clip is shorter than one analysis window."""


class WavFormatError(ValueError):
    """Raised for WAV files outside the supported 16 kHz / 16-bit / mono format."""


@dataclass(frozen=True)
class FrameSpec:
    window: int = 512
    hop: int = 256

    def __post_init__(self):
        if self.window <= 0 or self.hop <= 0:
            raise ValueError("window and hop must be positive")
        if self.hop > self.window:
            raise ValueError("hop must not exceed window")

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window:
            return 0
        return (n_samples - self.window) // self.hop + 1

    def center_times(self, n_frames: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
        """Window-centre timestamps in seconds."""
        starts = np.arange(n_frames) * self.hop
        return (starts + self.window / 2.0) / sample_rate


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip holds mono audio only")
        if samples.size == 0:
            raise ValueError("AudioClip is empty")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


# --------------------------------------------------------------------- WAV I/O
def read_wav(path) -> AudioClip:
    """Read a 16-bit PCM, mono, 16 kHz RIFF file."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise WavFormatError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise WavFormatError(f"{path}: expected 16-bit samples, got {8 * w.getsampwidth()}-bit")
        if w.getframerate() != SAMPLE_RATE:
            raise WavFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {w.getframerate()} Hz")
        raw = w.readframes(w.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0)


def write_wav(path, clip: AudioClip | np.ndarray):
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


# ------------------------------------------------------------------- framing
def frame_signal(clip, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Split audio into overlapping windows, dropping the trailing partial one.

    Returns an ``(n_frames, window)`` view-free copy.
    """
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    n = spec.n_frames(samples.size)
    if n == 0:
        raise InsufficientAudioError(
            f"insufficient audio: {samples.size} samples, need at least {spec.window}"
        )
    idx = np.arange(spec.window)[None, :] + spec.hop * np.arange(n)[:, None]
    return samples[idx]


@lru_cache(maxsize=8)
def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (peak of exactly 1 at index n/2)."""
    w = get_window("hann", n, fftbins=True)
    w.setflags(write=False)
    return w


def magnitude_spectrum(window) -> np.ndarray:
    """|DFT| of the Hann-weighted window scaled by 1/N; 257 bins for N=512.

    Accepts a single window or a batch ``(n_frames, N)``.
    """
    x = np.asarray(window, dtype=np.float64)
    n = x.shape[-1]
    return np.abs(rfft(x * hann_window(n), axis=-1)) / n


def bin_frequencies(n_bins: int = 257, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    n_fft = 2 * (n_bins - 1)
    return np.arange(n_bins) * sample_rate / n_fft


# --------------------------------------------------------------------- MFCC
def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_bins: int = 257, n_filters: int = N_MEL, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float = SAMPLE_RATE / 2) -> np.ndarray:
    """Triangular HTK-mel filters, each normalised to unit weight sum.

    Unit-sum rows make a flat power spectrum map to identical band energies,
    so its cepstrum is an impulse at c0.
    """
    freqs = bin_frequencies(n_bins, sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    fb = np.zeros((n_filters, n_bins))
    for i in range(n_filters):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
        s = fb[i].sum()
        if s <= 0:
            raise ValueError("mel filter with no spectral support; reduce n_filters")
        fb[i] /= s
    fb.setflags(write=False)
    return fb


def mfcc(spectrum, n_coeffs: int = N_MFCC) -> np.ndarray:
    """First ``n_coeffs`` of the orthonormal DCT-II of log mel band energies."""
    mag = np.asarray(spectrum, dtype=np.float64)
    energies = (mag**2) @ mel_filterbank(mag.shape[-1]).T
    logs = np.log(np.maximum(energies, LOG_FLOOR))
    return dct(logs, type=2, norm="ortho", axis=-1)[..., :n_coeffs]


# --------------------------------------------------------- spectral shape
def spectral_centroid(spectrum) -> np.ndarray:
    mag = np.asarray(spectrum, dtype=np.float64)
    total = mag.sum(axis=-1)
    weighted = mag @ bin_frequencies(mag.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0, weighted / np.where(total > 0, total, 1.0), 0.0)
    return out


def spectral_flatness(spectrum) -> np.ndarray:
    mag = np.maximum(np.asarray(spectrum, dtype=np.float64), MAG_FLOOR)
    geo = np.exp(np.mean(np.log(mag), axis=-1))
    return geo / np.mean(mag, axis=-1)


def spectral_rolloff(spectrum, fraction: float = ROLLOFF_FRACTION) -> np.ndarray:
    """Lowest bin frequency at which cumulative magnitude reaches ``fraction``."""
    mag = np.asarray(spectrum, dtype=np.float64)
    mag2 = np.atleast_2d(mag)
    cum = np.cumsum(mag2, axis=-1)
    total = cum[:, -1]
    idx = np.argmax(cum >= fraction * total[:, None], axis=-1)
    out = np.where(total > 0, bin_frequencies(mag.shape[-1])[idx], 0.0)
    return out if mag.ndim > 1 else out[0]


def spectral_kurtosis(spectrum) -> np.ndarray:
    """Excess kurtosis of the bin magnitudes; 0 when they have no spread."""
    mag = np.asarray(spectrum, dtype=np.float64)
    dev = mag - mag.mean(axis=-1, keepdims=True)
    m2 = np.mean(dev**2, axis=-1)
    m4 = np.mean(dev**4, axis=-1)
    tiny = m2 <= 1e-300
    with np.errstate(invalid="ignore", divide="ignore"):
        k = m4 / np.where(tiny, 1.0, m2) ** 2 - 3.0
    return np.where(tiny, 0.0, k)


def zero_crossing_rate(window) -> np.ndarray:
    """Fraction of adjacent sample pairs whose signs differ (zero counts as positive)."""
    x = np.asarray(window, dtype=np.float64)
    pos = x >= 0
    changes = np.count_nonzero(pos[..., 1:] != pos[..., :-1], axis=-1)
    return changes / (x.shape[-1] - 1)


def _frame_features(frames: np.ndarray) -> np.ndarray:
    spec = magnitude_spectrum(frames)
    feats = np.column_stack(
        [
            mfcc(spec),
            spectral_centroid(spec),
            spectral_flatness(spec),
            spectral_rolloff(spec),
            spectral_kurtosis(spec),
            zero_crossing_rate(frames),
        ]
    )
    return feats


def extract_features(clip, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """18-dimensional feature sequence ``(n_frames, 18)`` for one clip."""
    return _frame_features(frame_signal(clip, spec))


# -------------------------------------------------------------- temporal
def append_deltas(seq) -> np.ndarray:
    """``[x_t, d_t, dd_t]`` with simple differences and zero at the first frame."""
    x = np.asarray(seq, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a (n_frames, dim) sequence")
    if x.shape[0] < 3:
        raise ValueError(f"append_deltas needs at least 3 frames, got {x.shape[0]}")
    d = np.zeros_like(x)
    d[1:] = x[1:] - x[:-1]
    dd = np.zeros_like(x)
    dd[1:] = d[1:] - d[:-1]
    return np.hstack([x, d, dd])


# --------------------------------------------------------- normalisation
@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).copy()
        std = np.asarray(self.std, dtype=np.float64).copy()
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be 1-D vectors of equal length")
        if np.any(std <= 0):
            raise ValueError("std must be positive in every dimension")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "NormalizationStats":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))


def fit_normalization(train) -> NormalizationStats:
    """Per-dimension mean and population std over all training frames.

    ``train`` may be one ``(n, dim)`` array or an iterable of them.
    """
    if isinstance(train, np.ndarray):
        data = np.atleast_2d(train)
    else:
        data = np.vstack([np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in train])
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    std = np.where(std < STD_CLAMP, 1.0, std)
    return NormalizationStats(mean, std)


def apply_normalization(seq, stats: NormalizationStats) -> np.ndarray:
    return (np.asarray(seq, dtype=np.float64) - stats.mean) / stats.std


# ------------------------------------------------------------------ dumps
def write_feature_csv(path, frames, names: Sequence[str] | None = None):
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if names is None:
        names = {18: BASE_NAMES, 54: DELTA_NAMES}.get(frames.shape[1])
        if names is None:
            names = [f"f{i}" for i in range(frames.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in frames:
            w.writerow([repr(float(v)) for v in row])


def read_feature_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty feature file")
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)


def extract_many(paths: Iterable, spec: FrameSpec = FrameSpec(), deltas: bool = True):
    """Features for several WAV files, returned as a list of arrays."""
    out = []
    for p in paths:
        f = extract_features(read_wav(Path(p)), spec)
        out.append(append_deltas(f) if deltas else f)
    return out


# ------------------------------------------------------------- estimators
class DeltaFeatures(BaseEstimator, TransformerMixin):
    """Stateless transformer appending first and second differences."""

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        return append_deltas(check_array(X))


class FeatureNormalizer(BaseEstimator, TransformerMixin):
    """Zero-mean / unit-variance scaling with the constant-dimension clamp."""

    def fit(self, X, y=None):
        X = check_array(X)
        self.stats_ = fit_normalization(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return apply_normalization(check_array(X), self.stats_)
