"""Shared signal-processing primitives: framing, spectra, LPC, filterbanks, pitch.

Defaults follow common speech-analysis practice: 25 ms frames, 10 ms hop,
Hamming window, FFT length = next power of two >= frame length.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .corpus import AudioSignal
from .errors import ConfigurationError, DegenerateInputError

DEFAULT_FRAME_SECONDS = 0.025
DEFAULT_HOP_SECONDS = 0.010
DEFAULT_WINDOW = "hamming"

# Normalized-autocorrelation peak below this is treated as unvoiced.
VOICING_THRESHOLD = 0.45


@dataclass(frozen=True)
class FrameSequence:
    frames: np.ndarray  # (n_frames, frame_len)
    frame_len: int
    hop: int
    rate: int

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class Spectrum:
    magnitudes: np.ndarray  # (fft_len // 2 + 1,)
    bin_hz: float


@dataclass(frozen=True)
class Filterbank:
    kind: str  # third_octave | critical_band | mel
    weights: np.ndarray  # (n_bands, n_bins), non-negative
    center_hz: np.ndarray  # (n_bands,), strictly increasing


@dataclass(frozen=True)
class LpcCoefficients:
    a: np.ndarray  # a[0] == 1
    gain: float  # final prediction-error energy, >= 0


def next_pow2(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


def get_window(name: str, length: int) -> np.ndarray:
    if name == "hann":
        return np.hanning(length)
    if name == "hamming":
        return np.hamming(length)
    if name == "rect":
        return np.ones(length)
    raise ConfigurationError(f"unknown window {name!r}")


def default_frame_params(rate: int) -> tuple[int, int]:
    return int(round(DEFAULT_FRAME_SECONDS * rate)), int(round(DEFAULT_HOP_SECONDS * rate))


def frame(sig: AudioSignal, frame_len: int, hop: int) -> FrameSequence:
    """Split a signal into overlapping frames; no trailing zero-padding."""
    if hop <= 0 or hop > frame_len:
        raise ValueError("need 0 < hop <= frame_len")
    x = sig.samples
    if len(x) < frame_len:
        return FrameSequence(np.zeros((0, frame_len)), frame_len, hop, sig.rate)
    n = (len(x) - frame_len) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]
    return FrameSequence(np.ascontiguousarray(view[:n]), frame_len, hop, sig.rate)


def spectrum(frame_samples: np.ndarray, window: str = "hann",
             rate: int = 1, fft_len: int | None = None) -> Spectrum:
    """Magnitude of the real FFT of the windowed frame (zero-padded)."""
    x = np.asarray(frame_samples, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("frame must be a 1-D array of length >= 2")
    if fft_len is None:
        fft_len = next_pow2(len(x))
    mags = np.abs(np.fft.rfft(x * get_window(window, len(x)), fft_len))
    return Spectrum(mags, rate / fft_len)


def power_spectra(frames: np.ndarray, window: str = DEFAULT_WINDOW,
                  fft_len: int | None = None) -> np.ndarray:
    """Power spectra (|rfft|^2) of a frame matrix, one row per frame."""
    frames = np.asarray(frames, dtype=np.float64)
    if fft_len is None:
        fft_len = next_pow2(frames.shape[1])
    w = get_window(window, frames.shape[1])
    spec = np.fft.rfft(frames * w, fft_len, axis=1)
    return np.abs(spec) ** 2


def autocorrelate(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased autocorrelation r[0..max_lag] per frame row, via FFT."""
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[1]
    fft_len = next_pow2(n + max_lag + 1)
    spec = np.fft.rfft(frames, fft_len, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), fft_len, axis=1)
    return acf[:, : max_lag + 1]


def lpc(frame_samples: np.ndarray, order: int) -> LpcCoefficients:
    """All-pole coefficients from the autocorrelation normal equations."""
    x = np.asarray(frame_samples, dtype=np.float64)
    if order < 1 or order >= len(x):
        raise ValueError("need 1 <= order < frame length")
    r = autocorrelate(x[None, :], order)[0]
    if r[0] <= 0.0:
        raise DegenerateInputError("zero-energy frame has no LPC solution")
    a, err = kernels.levinson_batch(r[None, :])
    return LpcCoefficients(a[0], float(err[0]))


def lpc_batch(frames: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """LPC per frame row; returns (a, gain, valid mask of nonzero-energy rows)."""
    r = autocorrelate(frames, order)
    valid = r[:, 0] > 0.0
    r_safe = np.where(valid[:, None], r, np.eye(1, order + 1, 0).ravel())
    a, err = kernels.levinson_batch(r_safe)
    return a, err, valid


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def _hz_to_bark(f):
    return 26.81 * np.asarray(f) / (1960.0 + np.asarray(f)) - 0.53


def _bark_to_hz(z):
    z = np.asarray(z)
    return 1960.0 * (z + 0.53) / (26.28 - z)


def _triangular_weights(edges_hz: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    n_bands = len(edges_hz) - 2
    weights = np.zeros((n_bands, len(freqs)))
    for b in range(n_bands):
        lo, mid, hi = edges_hz[b], edges_hz[b + 1], edges_hz[b + 2]
        rising = (freqs >= lo) & (freqs < mid)
        falling = (freqs >= mid) & (freqs <= hi)
        if mid > lo:
            weights[b, rising] = (freqs[rising] - lo) / (mid - lo)
        if hi > mid:
            weights[b, falling] = (hi - freqs[falling]) / (hi - mid)
    return weights


@lru_cache(maxsize=64)
def make_filterbank(kind: str, rate: int, fft_len: int, n_bands: int,
                    fmin: float) -> Filterbank:
    """Build a spectral filterbank over rfft bins.

    third_octave: rectangular 1/3-octave bands centered at fmin * 2^(k/3).
    critical_band / mel: triangular overlapping bands spaced on the Bark and
    mel scales respectively, spanning fmin up to just below Nyquist.
    """
    if fmin <= 0:
        raise ConfigurationError("fmin must be positive")
    if n_bands < 1:
        raise ConfigurationError("need at least one band")
    nyquist = rate / 2.0
    freqs = np.arange(fft_len // 2 + 1) * (rate / fft_len)

    if kind == "third_octave":
        centers = fmin * 2.0 ** (np.arange(n_bands) / 3.0)
        los = centers * 2.0 ** (-1.0 / 6.0)
        his = centers * 2.0 ** (1.0 / 6.0)
        if his[-1] >= nyquist:
            raise ConfigurationError(
                f"top band edge {his[-1]:.1f} Hz reaches Nyquist {nyquist:.1f} Hz"
            )
        weights = ((freqs[None, :] >= los[:, None]) & (freqs[None, :] < his[:, None])).astype(float)
    elif kind in ("critical_band", "mel"):
        fmax = nyquist - rate / fft_len
        if fmin >= fmax:
            raise ConfigurationError("fmin leaves no room below Nyquist")
        if kind == "mel":
            edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_bands + 2))
        else:
            edges = _bark_to_hz(np.linspace(_hz_to_bark(fmin), _hz_to_bark(fmax), n_bands + 2))
        if edges[-1] >= nyquist:
            raise ConfigurationError("band edge reaches Nyquist")
        weights = _triangular_weights(edges, freqs)
        centers = edges[1:-1]
    else:
        raise ConfigurationError(f"unknown filterbank kind {kind!r}")

    empty = ~np.any(weights > 0.0, axis=1)
    if np.any(empty):
        raise ConfigurationError(
            f"band(s) {np.flatnonzero(empty).tolist()} cover no FFT bin; "
            "increase fft_len or adjust the band layout"
        )
    return Filterbank(kind, weights, np.asarray(centers, dtype=np.float64))


def acf_pitch_track(frames: np.ndarray, rate: int, fmin: float, fmax: float
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Autocorrelation F0 and normalized peak per frame row.

    Returns (f0, peak): f0 is NaN where the frame is unvoiced (normalized
    peak below VOICING_THRESHOLD) or silent. The peak lag is refined by
    parabolic interpolation.
    """
    if not 0 < fmin < fmax <= rate / 2:
        raise ValueError("need 0 < fmin < fmax <= rate/2")
    n = frames.shape[1]
    lag_lo = max(int(rate / fmax), 2)
    lag_hi = min(int(round(rate / fmin)), n - 2)
    if lag_hi <= lag_lo:
        raise ValueError("frame too short for the requested pitch range")
    centered = frames - frames.mean(axis=1, keepdims=True)
    acf = autocorrelate(centered, lag_hi + 1)
    r0 = acf[:, 0]
    window = acf[:, lag_lo:lag_hi + 1]
    peak_idx = np.argmax(window, axis=1) + lag_lo

    rows = np.arange(len(frames))
    y0 = acf[rows, peak_idx - 1]
    y1 = acf[rows, peak_idx]
    y2 = acf[rows, peak_idx + 1]
    denom = y0 - 2.0 * y1 + y2
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(np.abs(denom) > 1e-30, 0.5 * (y0 - y2) / denom, 0.0)
    delta = np.clip(delta, -0.5, 0.5)
    lag = peak_idx + delta
    peak_val = y1 - 0.25 * (y0 - y2) * delta

    # undo the linear taper of the biased autocorrelation estimate
    bias = np.maximum(1.0 - lag / n, 1.0 / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        norm_peak = np.where(r0 > 0.0, peak_val / r0 / bias, 0.0)
    norm_peak = np.clip(norm_peak, 0.0, 1.0)
    voiced = (r0 > 0.0) & (norm_peak >= VOICING_THRESHOLD)
    f0 = np.where(voiced, rate / lag, np.nan)
    return f0, norm_peak


def pitch_acf(frame_samples: np.ndarray, rate: int, fmin: float, fmax: float) -> float | None:
    """F0 of one frame from its autocorrelation peak; None when unvoiced."""
    x = np.asarray(frame_samples, dtype=np.float64)
    f0, _ = acf_pitch_track(x[None, :], rate, fmin, fmax)
    value = float(f0[0])
    return None if np.isnan(value) else value
