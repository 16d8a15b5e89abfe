"""Corpus handling: WAV ingest, clean/degraded alignment, condition manifests.

All signals are converted to mono float64 on load; the canonical processing
rate is 16 kHz and loaders resample to it on ingest unless told otherwise.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import correlate, resample_poly

from .errors import (
    AlignmentError,
    FormatError,
    SchemaError,
    UnsupportedFormatError,
)

CANONICAL_RATE = 16000
MANIFEST_COLUMNS = ("utterance_id", "clean_path", "degraded_path", "G", "C", "D", "pesq")

# Shortest usable overlap after alignment: one default analysis frame (25 ms).
MIN_OVERLAP_SECONDS = 0.025


@dataclass(frozen=True)
class AudioSignal:
    """Mono sample sequence with its sample rate."""

    samples: np.ndarray  # float64, nominal range [-1, 1]
    rate: int

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate

    def rms(self) -> float:
        if len(self.samples) == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples ** 2)))


@dataclass(frozen=True, order=True)
class ConditionLabel:
    """Binary condition indicators: platform, receiver, sender denoising."""

    g: int
    c: int
    d: int

    def __post_init__(self):
        for name, value in (("G", self.g), ("C", self.c), ("D", self.d)):
            if value not in (0, 1):
                raise ValueError(f"indicator {name} must be 0 or 1, got {value!r}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.g, self.c, self.d)


ALL_CELLS = tuple(
    ConditionLabel(g, c, d) for g in (0, 1) for c in (0, 1) for d in (0, 1)
)


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    clean_path: Path
    degraded_path: Path
    label: ConditionLabel
    external_pesq: float | None = None


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class AlignedPair:
    """Equal-length, rate-matched clean/degraded pair after lag and gain fix."""

    clean: AudioSignal
    degraded: AudioSignal
    applied_lag: int
    applied_gain: float

    def __post_init__(self):
        if len(self.clean) != len(self.degraded):
            raise ValueError("aligned signals must have equal length")
        if self.clean.rate != self.degraded.rate:
            raise ValueError("aligned signals must share one rate")

    @property
    def rate(self) -> int:
        return self.clean.rate


@dataclass(frozen=True)
class ValidationReport:
    missing: tuple[Path, ...]
    duplicates: tuple[tuple[str, ConditionLabel], ...]
    cell_counts: dict = field(default_factory=dict)  # ConditionLabel -> int

    @property
    def ok(self) -> bool:
        return not self.missing and not self.duplicates


def load_wav(path: str | Path) -> AudioSignal:
    """Load a RIFF/WAVE file as a mono float64 signal.

    PCM16 samples are scaled by 1/32768; IEEE float32 passes through. Stereo
    is averaged to mono. Raises FormatError on a malformed container and
    UnsupportedFormatError on any other codec or channel count.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE container")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        size = int.from_bytes(raw[pos + 4:pos + 8], "little")
        body = raw[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or len(fmt) < 16:
        raise FormatError(f"{path}: missing or truncated fmt chunk")
    if data is None:
        raise FormatError(f"{path}: missing data chunk")

    audio_format, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if audio_format == 0xFFFE and len(fmt) >= 26:  # WAVE_FORMAT_EXTENSIBLE
        audio_format = struct.unpack("<H", fmt[24:26])[0]
    if rate <= 0:
        raise FormatError(f"{path}: invalid sample rate {rate}")
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{path}: {channels} channels unsupported")

    if audio_format == 1 and bits == 16:
        width = 2 * channels
        usable = len(data) // width * width
        x = np.frombuffer(data[:usable], dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        width = 4 * channels
        usable = len(data) // width * width
        x = np.frombuffer(data[:usable], dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormatError(
            f"{path}: codec tag {audio_format} at {bits}-bit unsupported"
        )

    if channels == 2:
        x = x.reshape(-1, 2).mean(axis=1)
    return AudioSignal(x, int(rate))


def write_wav(path: str | Path, sig: AudioSignal) -> None:
    """Write a mono PCM16 WAV file (samples clipped to [-1, 1))."""
    x = np.clip(sig.samples, -1.0, 32767.0 / 32768.0)
    pcm = np.round(x * 32768.0).astype("<i2")
    data = pcm.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sig.rate, sig.rate * 2, 2, 16)
    Path(path).write_bytes(header + fmt + b"data" + struct.pack("<I", len(data)) + data)


def resample(sig: AudioSignal, target_rate: int) -> AudioSignal:
    """Band-limited resample to ``target_rate``; identity when rates match.

    Output length is round(len * target/source).
    """
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if target_rate == sig.rate:
        return sig
    g = math.gcd(sig.rate, int(target_rate))
    up, down = target_rate // g, sig.rate // g
    out = resample_poly(sig.samples, up, down)
    n_out = int(round(len(sig.samples) * target_rate / sig.rate))
    if len(out) < n_out:
        out = np.concatenate([out, np.zeros(n_out - len(out))])
    return AudioSignal(out[:n_out], int(target_rate))


def align(clean: AudioSignal, degraded: AudioSignal, max_lag: int) -> AlignedPair:
    """Align a degraded recording to its clean reference.

    The lag maximizing the cross-correlation within +-max_lag is removed,
    both signals are truncated to the common overlap, and the degraded side
    is rescaled by RMS(clean)/RMS(degraded) over that overlap (gain 1 when
    the degraded overlap is silent).
    """
    if clean.rate != degraded.rate:
        raise ValueError("clean and degraded must share one sample rate")
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    c = clean.samples
    d = degraded.samples
    if len(c) == 0 or len(d) == 0:
        raise AlignmentError("cannot align an empty signal")

    # full cross-correlation index k maps to tau = len(d) - 1 - k where
    # R(tau) = sum_n c[n] * d[n + tau]
    full = correlate(c, d, mode="full", method="fft")
    taus = np.arange(len(d) - 1, -len(c), -1)
    window = np.abs(taus) <= max_lag
    if not np.any(window):
        raise AlignmentError("max_lag excludes every feasible lag")
    sel = np.flatnonzero(window)
    lag = int(taus[sel[np.argmax(full[sel])]])

    if lag >= 0:
        c_al = c[: len(c)]
        d_al = d[lag:]
    else:
        c_al = c[-lag:]
        d_al = d
    n = min(len(c_al), len(d_al))
    min_overlap = int(round(MIN_OVERLAP_SECONDS * clean.rate))
    if n < max(min_overlap, 1):
        raise AlignmentError(
            f"overlap after shift is {n} samples, shorter than one frame"
        )
    c_al = c_al[:n]
    d_al = d_al[:n]

    rms_d = float(np.sqrt(np.mean(d_al ** 2)))
    rms_c = float(np.sqrt(np.mean(c_al ** 2)))
    gain = rms_c / rms_d if rms_d > 0.0 else 1.0
    return AlignedPair(
        clean=AudioSignal(c_al.copy(), clean.rate),
        degraded=AudioSignal(d_al * gain, clean.rate),
        applied_lag=lag,
        applied_gain=gain,
    )


def _parse_indicator(value: str, column: str, row_index: int) -> int:
    text = (value or "").strip()
    if text not in ("0", "1"):
        raise SchemaError(
            f"row {row_index}: column {column} must be 0 or 1, got {value!r}"
        )
    return int(text)


def parse_manifest(path: str | Path) -> CorpusManifest:
    """Parse a corpus manifest CSV.

    Expected header: utterance_id,clean_path,degraded_path,G,C,D,pesq
    (the pesq column may be blank). Paths are resolved relative to the
    manifest's directory.
    """
    path = Path(path)
    base = path.parent
    entries: list[ManifestEntry] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty manifest, expected a header row")
        missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {', '.join(missing)}")
        for i, row in enumerate(reader):
            label = ConditionLabel(
                _parse_indicator(row["G"], "G", i),
                _parse_indicator(row["C"], "C", i),
                _parse_indicator(row["D"], "D", i),
            )
            pesq_text = (row.get("pesq") or "").strip()
            pesq = float(pesq_text) if pesq_text else None
            entries.append(
                ManifestEntry(
                    utterance_id=row["utterance_id"].strip(),
                    clean_path=base / row["clean_path"],
                    degraded_path=base / row["degraded_path"],
                    label=label,
                    external_pesq=pesq,
                )
            )
    return CorpusManifest(tuple(entries))


def write_manifest(path: str | Path, manifest: CorpusManifest) -> None:
    """Write a manifest CSV (inverse of parse_manifest, paths relativized)."""
    path = Path(path)
    base = path.parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for e in manifest.entries:
            clean = _relativize(e.clean_path, base)
            degraded = _relativize(e.degraded_path, base)
            pesq = "" if e.external_pesq is None else repr(float(e.external_pesq))
            writer.writerow(
                [e.utterance_id, clean, degraded, e.label.g, e.label.c, e.label.d, pesq]
            )


def _relativize(p: Path, base: Path) -> str:
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return p.as_posix()


def validate_manifest(manifest: CorpusManifest) -> ValidationReport:
    """Report missing files, duplicate keys, and per-cell utterance counts."""
    missing: list[Path] = []
    seen: set[tuple[str, ConditionLabel]] = set()
    duplicates: list[tuple[str, ConditionLabel]] = []
    counts: dict[ConditionLabel, int] = {cell: 0 for cell in ALL_CELLS}
    for e in manifest.entries:
        for p in (e.clean_path, e.degraded_path):
            if not Path(p).exists():
                missing.append(Path(p))
        key = (e.utterance_id, e.label)
        if key in seen:
            duplicates.append(key)
        else:
            seen.add(key)
        counts[e.label] = counts.get(e.label, 0) + 1
    return ValidationReport(tuple(missing), tuple(duplicates), counts)
