"""Objective speech quality and intelligibility metrics over aligned pairs.

Segmental metrics use 25 ms / 10 ms Hamming frames at the pair's rate and
clamp per-frame values to [-10, 35] dB. The envelope-correlation
intelligibility measure resamples to 10 kHz and works on one-third-octave
band envelopes; the coherence index and the covariance metric follow their
classical constructions over critical bands.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.fft import next_fast_len

from . import corpus, dsp, kernels
from .corpus import AlignedPair, AudioSignal
from .errors import DegenerateInputError, MetricError, PreconditionError

SEG_SNR_FLOOR_DB = -10.0
SEG_SNR_CEIL_DB = 35.0
LLR_ORDER = 10
TRIM_FRACTION = 0.95  # LLR/WSS keep the smallest 95% of frame values

STOI_RATE = 10000
STOI_FRAME = 256
STOI_HOP = 128
STOI_FFT = 512
STOI_BANDS = 15
STOI_FMIN = 150.0
STOI_SEGMENT = 30  # 384 ms of 12.8 ms hops
STOI_SILENCE_RANGE_DB = 40.0
STOI_CLIP_DB = -15.0

CSII_BANDS = 25
NCM_BANDS = 20
NCM_ENV_LOWPASS_HZ = 25.0
SDR_CLIP_DB = 15.0

MIN_ENVELOPE_SECONDS = 0.384

_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class MetricReport:
    """One row of the evaluation suite for a single aligned pair."""

    stoi: float
    snr_seg: float
    fw_snr_seg: float
    llr: float
    wss: float
    csii: tuple[float | None, float | None, float | None]  # (high, mid, low)
    ncm: float
    pesq: float | None = None
    composite: tuple[float, float, float] | None = None  # (csig, cbak, covl)


def _frames_pair(pair: AlignedPair) -> tuple[np.ndarray, np.ndarray, int, int]:
    frame_len, hop = dsp.default_frame_params(pair.rate)
    fc = dsp.frame(pair.clean, frame_len, hop).frames
    fd = dsp.frame(pair.degraded, frame_len, hop).frames
    if fc.shape[0] == 0:
        raise PreconditionError("pair shorter than one analysis frame")
    return fc, fd, frame_len, hop


def _active_mask(clean_frames: np.ndarray) -> np.ndarray:
    """Frames carrying any clean energy; shared by both segmental metrics."""
    return np.sum(clean_frames ** 2, axis=1) > 0.0


def _trimmed_mean(values: np.ndarray, fraction: float = TRIM_FRACTION) -> float:
    ordered = np.sort(values)
    keep = max(1, int(round(fraction * len(ordered))))
    return float(np.mean(ordered[:keep]))


def snr_seg(pair: AlignedPair) -> float:
    """Frame-averaged clamped signal-to-error ratio in dB."""
    fc, fd, _, _ = _frames_pair(pair)
    mask = _active_mask(fc)
    if not np.any(mask):
        raise DegenerateInputError("every frame of the clean signal is silent")
    energy = np.sum(fc ** 2, axis=1)
    error = np.sum((fc - fd) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        ratio = 10.0 * np.log10(np.where(error > 0.0, energy / np.where(error > 0.0, error, 1.0), np.inf))
    ratio = np.clip(ratio, SEG_SNR_FLOOR_DB, SEG_SNR_CEIL_DB)
    return float(np.mean(ratio[mask]))


def fw_snr_seg(pair: AlignedPair) -> float:
    """Critical-band SNR, weighted per frame by clean band magnitude^0.2."""
    fc, fd, frame_len, _ = _frames_pair(pair)
    mask = _active_mask(fc)
    if not np.any(mask):
        raise DegenerateInputError("every frame of the clean signal is silent")
    fft_len = dsp.next_pow2(frame_len)
    bank = dsp.make_filterbank("critical_band", pair.rate, fft_len, CSII_BANDS, 50.0)
    bc = np.sqrt(dsp.power_spectra(fc) @ bank.weights.T)
    bd = np.sqrt(dsp.power_spectra(fd) @ bank.weights.T)
    diff2 = (bc - bd) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        band_snr = 10.0 * np.log10(
            np.where(diff2 > 0.0, bc ** 2 / np.where(diff2 > 0.0, diff2, 1.0), np.inf)
        )
        band_snr = np.where(bc > 0.0, band_snr, SEG_SNR_FLOOR_DB)
    band_snr = np.clip(band_snr, SEG_SNR_FLOOR_DB, SEG_SNR_CEIL_DB)
    weights = bc ** 0.2
    wsum = np.sum(weights, axis=1)
    good = mask & (wsum > 0.0)
    if not np.any(good):
        raise DegenerateInputError("no frame with usable band weights")
    frame_vals = np.sum(weights * band_snr, axis=1)[good] / wsum[good]
    frame_vals = np.clip(frame_vals, SEG_SNR_FLOOR_DB, SEG_SNR_CEIL_DB)
    return float(np.mean(frame_vals))


def llr(pair: AlignedPair) -> float:
    """Log-likelihood ratio between degraded and clean all-pole fits.

    Per frame, log((a_d R_c a_d') / (a_c R_c a_c')) with order-10 LPC on the
    windowed frame and R_c the clean autocorrelation matrix; the mean is
    taken over the smallest 95% of frame values.
    """
    fc, fd, frame_len, _ = _frames_pair(pair)
    w = dsp.get_window(dsp.DEFAULT_WINDOW, frame_len)
    rc = dsp.autocorrelate(fc * w, LLR_ORDER)
    rd = dsp.autocorrelate(fd * w, LLR_ORDER)
    valid = (rc[:, 0] > 0.0) & (rd[:, 0] > 0.0)
    if not np.any(valid):
        raise DegenerateInputError("no frame supports an LPC fit")
    rc = rc[valid]
    rd = rd[valid]
    ac, _ = kernels.levinson_batch(rc)
    ad, _ = kernels.levinson_batch(rd)
    idx = np.abs(np.arange(LLR_ORDER + 1)[:, None] - np.arange(LLR_ORDER + 1)[None, :])
    toeplitz_c = rc[:, idx]
    num = np.einsum("mj,mjk,mk->m", ad, toeplitz_c, ad)
    den = np.einsum("mj,mjk,mk->m", ac, toeplitz_c, ac)
    ok = (num > 0.0) & (den > 0.0)
    if not np.any(ok):
        raise DegenerateInputError("all frames degenerate for the likelihood ratio")
    return _trimmed_mean(np.log(num[ok] / den[ok]))


def wss(pair: AlignedPair) -> float:
    """Weighted spectral slope distance over 36 critical bands.

    Per frame, squared differences of adjacent-band dB slopes are weighted
    by proximity to the global and nearest local spectral maxima (averaged
    over the clean and degraded weightings), normalized by the weight sum;
    the mean is over the smallest 95% of frames.
    """
    n_bands = 36
    kmax, klocmax = 20.0, 1.0
    fc, fd, frame_len, _ = _frames_pair(pair)
    valid = (np.sum(fc ** 2, axis=1) > 0.0) & (np.sum(fd ** 2, axis=1) > 0.0)
    if not np.any(valid):
        raise DegenerateInputError("no frame carries energy on both sides")
    fft_len = dsp.next_pow2(frame_len)
    bank = dsp.make_filterbank("critical_band", pair.rate, fft_len, n_bands, 50.0)
    pc = dsp.power_spectra(fc[valid]) @ bank.weights.T
    pd = dsp.power_spectra(fd[valid]) @ bank.weights.T
    # relative floor keeps the dB spectra finite and gain-invariant
    pc = np.maximum(pc, pc.max(axis=1, keepdims=True) * 1e-10)
    pd = np.maximum(pd, pd.max(axis=1, keepdims=True) * 1e-10)
    dbc = 10.0 * np.log10(pc)
    dbd = 10.0 * np.log10(pd)
    slope_c = np.diff(dbc, axis=1)
    slope_d = np.diff(dbd, axis=1)
    peak_c = kernels.local_peak_values(dbc)
    peak_d = kernels.local_peak_values(dbd)
    wc = (kmax / (kmax + dbc.max(axis=1, keepdims=True) - dbc[:, :-1])) * (
        klocmax / (klocmax + peak_c - dbc[:, :-1])
    )
    wd = (kmax / (kmax + dbd.max(axis=1, keepdims=True) - dbd[:, :-1])) * (
        klocmax / (klocmax + peak_d - dbd[:, :-1])
    )
    weights = 0.5 * (wc + wd)
    frame_vals = np.sum(weights * (slope_c - slope_d) ** 2, axis=1) / np.sum(weights, axis=1)
    return _trimmed_mean(frame_vals)


def _stft_pair(pair: AlignedPair) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    frame_len, hop = dsp.default_frame_params(pair.rate)
    fft_len = dsp.next_pow2(frame_len)
    fc = dsp.frame(pair.clean, frame_len, hop).frames
    fd = dsp.frame(pair.degraded, frame_len, hop).frames
    if fc.shape[0] == 0:
        raise PreconditionError("pair shorter than one analysis frame")
    w = dsp.get_window(dsp.DEFAULT_WINDOW, frame_len)
    xc = np.fft.rfft(fc * w, fft_len, axis=1)
    xd = np.fft.rfft(fd * w, fft_len, axis=1)
    rms = np.sqrt(np.mean(fc ** 2, axis=1))
    return xc, xd, rms, fft_len


def _csii_region(xc: np.ndarray, xd: np.ndarray, weights: np.ndarray) -> float:
    """Coherence-based index over one level region (>= 2 frames)."""
    cross = np.sum(xc * np.conj(xd), axis=0)
    pxx = np.sum(np.abs(xc) ** 2, axis=0)
    pyy = np.sum(np.abs(xd) ** 2, axis=0)
    denom = pxx * pyy
    with np.errstate(divide="ignore", invalid="ignore"):
        msc = np.where(denom > 0.0, np.abs(cross) ** 2 / np.where(denom > 0.0, denom, 1.0), 0.0)
    msc = np.clip(msc, 0.0, 1.0)

    pd = np.abs(xd) ** 2
    sig = (pd * msc) @ weights.T
    dist = (pd * (1.0 - msc)) @ weights.T
    with np.errstate(divide="ignore", invalid="ignore"):
        sdr = 10.0 * np.log10(np.where(dist > 0.0, sig / np.where(dist > 0.0, dist, 1.0), np.inf))
        sdr = np.where(sig > 0.0, sdr, -SDR_CLIP_DB)
    sdr = np.clip(sdr, -SDR_CLIP_DB, SDR_CLIP_DB)
    transfer = (sdr + SDR_CLIP_DB) / (2.0 * SDR_CLIP_DB)

    importance = np.sqrt((np.abs(xc) ** 2) @ weights.T)
    total = np.sum(importance)
    if total <= 0.0:
        return 0.0
    return float(np.sum(importance * transfer) / total)


def csii(pair: AlignedPair) -> tuple[float | None, float | None, float | None]:
    """Coherence index on high/mid/low level regions of the clean signal.

    Regions partition frames by clean RMS relative to the overall RMS:
    high >= 0 dB, mid [-10, 0) dB, low [-30, -10) dB. A region with fewer
    than two frames yields None (coherence needs averaging).
    """
    xc, xd, rms, fft_len = _stft_pair(pair)
    overall = pair.clean.rms()
    if overall <= 0.0:
        raise DegenerateInputError("clean signal is silent")
    bank = dsp.make_filterbank("critical_band", pair.rate, fft_len, CSII_BANDS, 50.0)
    bounds = (
        rms >= overall,
        (rms < overall) & (rms >= overall * 10.0 ** (-10.0 / 20.0)),
        (rms < overall * 10.0 ** (-10.0 / 20.0)) & (rms >= overall * 10.0 ** (-30.0 / 20.0)),
    )
    out: list[float | None] = []
    for region in bounds:
        if np.count_nonzero(region) < 2:
            out.append(None)
        else:
            out.append(_csii_region(xc[region], xd[region], bank.weights))
    if all(v is None for v in out):
        raise DegenerateInputError("no level region holds at least two frames")
    return (out[0], out[1], out[2])


def _band_envelopes(sig: AudioSignal, bank_weights: np.ndarray) -> np.ndarray:
    """Band envelopes: spectral-masked analytic magnitude -> 25 Hz lowpass.

    The analytic band signal comes straight from the one-sided spectrum
    (positive frequencies doubled), one inverse FFT per band.
    """
    x = sig.samples
    n = len(x)
    nfft = next_fast_len(n)
    spec = np.fft.rfft(x, nfft)
    freqs = np.fft.rfftfreq(nfft, 1.0 / sig.rate)
    bin_hz_bank = (sig.rate / 2.0) / (bank_weights.shape[1] - 1)
    idx = np.clip(np.round(freqs / bin_hz_bank).astype(int), 0, bank_weights.shape[1] - 1)
    analytic_spec = np.zeros((bank_weights.shape[0], nfft), dtype=complex)
    analytic_spec[:, : len(spec)] = spec[None, :] * bank_weights[:, idx]
    analytic_spec[:, 1:(nfft + 1) // 2] *= 2.0
    env = np.abs(np.fft.ifft(analytic_spec, axis=1))
    # FFT-domain lowpass with a cosine rolloff above the envelope cutoff
    env_spec = np.fft.rfft(env, axis=1)
    roll = np.clip((freqs - NCM_ENV_LOWPASS_HZ) / NCM_ENV_LOWPASS_HZ, 0.0, 1.0)
    env_spec *= 0.5 * (1.0 + np.cos(np.pi * roll))
    return np.fft.irfft(env_spec, nfft, axis=1)[:, :n]


def ncm(pair: AlignedPair) -> float:
    """Normalized covariance metric: band-envelope correlations mapped
    through an apparent-SNR transfer and importance-weighted into [0, 1]."""
    if pair.clean.duration < MIN_ENVELOPE_SECONDS:
        raise PreconditionError(
            f"pair must last at least {MIN_ENVELOPE_SECONDS * 1000:.0f} ms"
        )
    frame_len, _ = dsp.default_frame_params(pair.rate)
    fft_len = dsp.next_pow2(frame_len)
    bank = dsp.make_filterbank("critical_band", pair.rate, fft_len, NCM_BANDS, 150.0)
    env_c = _band_envelopes(pair.clean, bank.weights)
    env_d = _band_envelopes(pair.degraded, bank.weights)

    ec = env_c - env_c.mean(axis=1, keepdims=True)
    ed = env_d - env_d.mean(axis=1, keepdims=True)
    num = np.sum(ec * ed, axis=1)
    den = np.sqrt(np.sum(ec ** 2, axis=1) * np.sum(ed ** 2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    r2 = np.clip(r ** 2, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        snr_app = 10.0 * np.log10(np.where(r2 < 1.0, r2 / np.maximum(1.0 - r2, _EPS), np.inf))
    snr_app = np.clip(snr_app, -SDR_CLIP_DB, SDR_CLIP_DB)
    transfer = (snr_app + SDR_CLIP_DB) / (2.0 * SDR_CLIP_DB)

    importance = np.sqrt(np.mean(env_c ** 2, axis=1))
    total = np.sum(importance)
    if total <= 0.0:
        raise DegenerateInputError("clean signal has no band envelope energy")
    return float(np.sum(importance * transfer) / total)


def stoi(pair: AlignedPair) -> float:
    """Short-time envelope-correlation intelligibility in [-1, 1].

    Both signals are resampled to 10 kHz and analyzed in 25.6 ms half-
    overlapped Hann frames; frames more than 40 dB below the loudest clean
    frame are removed, one-third-octave band envelopes are formed, and
    384 ms envelope segments of the degraded side are normalized, clipped
    at -15 dB SDR, and correlated against the clean segments.
    """
    if pair.clean.duration < MIN_ENVELOPE_SECONDS:
        raise PreconditionError(
            f"pair must last at least {MIN_ENVELOPE_SECONDS * 1000:.0f} ms"
        )
    c10 = corpus.resample(pair.clean, STOI_RATE)
    d10 = corpus.resample(pair.degraded, STOI_RATE)
    fc = dsp.frame(c10, STOI_FRAME, STOI_HOP).frames
    fd = dsp.frame(d10, STOI_FRAME, STOI_HOP).frames
    w = dsp.get_window("hann", STOI_FRAME)
    energies = 20.0 * np.log10(np.linalg.norm(fc * w, axis=1) + _EPS)
    mask = energies > energies.max() - STOI_SILENCE_RANGE_DB
    if np.count_nonzero(mask) < STOI_SEGMENT:
        raise DegenerateInputError("fewer than 30 speech-active frames")

    bank = dsp.make_filterbank("third_octave", STOI_RATE, STOI_FFT, STOI_BANDS, STOI_FMIN)
    pc = np.abs(np.fft.rfft(fc[mask] * w, STOI_FFT, axis=1)) ** 2
    pd = np.abs(np.fft.rfft(fd[mask] * w, STOI_FFT, axis=1)) ** 2
    env_c = np.sqrt(pc @ bank.weights.T).T  # (bands, frames)
    env_d = np.sqrt(pd @ bank.weights.T).T

    seg_c = np.lib.stride_tricks.sliding_window_view(env_c, STOI_SEGMENT, axis=1)
    seg_d = np.lib.stride_tricks.sliding_window_view(env_d, STOI_SEGMENT, axis=1)
    norm_c = np.linalg.norm(seg_c, axis=2, keepdims=True)
    norm_d = np.linalg.norm(seg_d, axis=2, keepdims=True)
    alpha = norm_c / np.maximum(norm_d, _EPS)
    clip_gain = 10.0 ** (-STOI_CLIP_DB / 20.0)
    y = np.minimum(seg_d * alpha, seg_c * (1.0 + clip_gain))

    xc = seg_c - seg_c.mean(axis=2, keepdims=True)
    yc = y - y.mean(axis=2, keepdims=True)
    denom = np.linalg.norm(xc, axis=2) * np.linalg.norm(yc, axis=2)
    corr = np.sum(xc * yc, axis=2) / np.maximum(denom, _EPS)
    return float(np.mean(corr))


def composite(llr_value: float, wss_value: float, snr_seg_value: float,
              pesq_value: float) -> tuple[float, float, float]:
    """Composite quality predictions (csig, cbak, covl) from the classical
    linear combinations of the component measures."""
    if not -0.5 <= pesq_value <= 4.5:
        raise PreconditionError(f"pesq {pesq_value} outside [-0.5, 4.5]")
    csig = 3.093 - 1.029 * llr_value + 0.603 * pesq_value - 0.009 * wss_value
    cbak = 1.634 + 0.478 * pesq_value - 0.007 * wss_value + 0.063 * snr_seg_value
    covl = 1.594 + 0.805 * pesq_value - 0.512 * llr_value - 0.007 * wss_value
    return (csig, cbak, covl)


_METRIC_OPS = (
    ("stoi", stoi),
    ("snr_seg", snr_seg),
    ("fw_snr_seg", fw_snr_seg),
    ("llr", llr),
    ("wss", wss),
    ("csii", csii),
    ("ncm", ncm),
)

METRIC_NAMES = tuple(name for name, _ in _METRIC_OPS) + ("composite",)


def evaluate_pair(pair: AlignedPair, external_pesq: float | None = None,
                  selected: tuple[str, ...] | None = None) -> MetricReport:
    """Run the metric suite over one pair.

    ``selected`` restricts computation to a subset of METRIC_NAMES;
    unselected fields are NaN / None. The composite triple is present iff
    an external pesq score is supplied (and composite is selected).
    """
    chosen = set(METRIC_NAMES if selected is None else selected)
    unknown = chosen - set(METRIC_NAMES)
    if unknown:
        raise ValueError(f"unknown metric(s): {sorted(unknown)}")
    values: dict[str, object] = {}
    for name, op in _METRIC_OPS:
        if name not in chosen:
            values[name] = (None, None, None) if name == "csii" else float("nan")
            continue
        try:
            values[name] = op(pair)
        except Exception as exc:
            raise MetricError(f"{name}: {exc}") from exc
    report = MetricReport(
        stoi=values["stoi"],
        snr_seg=values["snr_seg"],
        fw_snr_seg=values["fw_snr_seg"],
        llr=values["llr"],
        wss=values["wss"],
        csii=values["csii"],
        ncm=values["ncm"],
        pesq=external_pesq,
    )
    if external_pesq is not None and "composite" in chosen:
        try:
            triple = composite(report.llr, report.wss, report.snr_seg, external_pesq)
        except Exception as exc:
            raise MetricError(f"composite: {exc}") from exc
        report = replace(report, composite=triple)
    return report
