"""WAV decode/encode, channel/rate normalization, and manifest ingestion."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MIN_CLIP_SAMPLES = 2048  # one STFT window; shorter clips are zero-padded


class AudioIoError(Exception):
    """Base class for audio I/O failures."""


class MalformedWavError(AudioIoError):
    """RIFF/WAVE structure is broken or truncated."""


class UnsupportedCodecError(AudioIoError):
    """WAV codec or layout we do not decode (non-PCM, >2 channels, odd widths)."""


class ManifestError(Exception):
    """Manifest CSV is structurally invalid."""


@dataclass(frozen=True)
class AudioClip:
    """Mono sample buffer with its sample rate.

    samples are dimensionless amplitudes, nominally in [-1, 1].
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("samples must be a nonempty 1-D vector")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", s)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    file_path: str
    participant_id: str
    cough_probability: float
    label: int | None = None
    split_tag: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.cough_probability <= 1.0:
            raise ValueError(f"cough_probability out of [0,1]: {self.cough_probability}")
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass
class Manifest:
    """Gated clip records plus optional per-participant tabular rows."""

    records: list[ClipRecord]
    tabular: dict[str, dict[str, str]] = field(default_factory=dict)
    dropped_count: int = 0

    def __post_init__(self):
        ids = [r.clip_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate clip_id in manifest")
        if self.tabular:
            missing = {r.participant_id for r in self.records} - set(self.tabular)
            if missing:
                raise ManifestError(f"participants missing tabular rows: {sorted(missing)[:5]}")

    def participants(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.participant_id, None)
        return list(seen)


def to_mono(channels: list[np.ndarray]) -> np.ndarray:
    """Per-sample arithmetic mean across channels."""
    if not channels:
        raise ValueError("need at least one channel")
    lengths = {len(c) for c in channels}
    if len(lengths) != 1:
        raise ValueError(f"unequal channel lengths: {sorted(lengths)}")
    stacked = np.stack([np.asarray(c, dtype=np.float64) for c in channels])
    return stacked.mean(axis=0)


def _decode_pcm(raw: bytes, bits: int, audio_format: int) -> np.ndarray:
    if audio_format == 3:  # IEEE float
        if bits != 32:
            raise UnsupportedCodecError(f"float WAV must be 32-bit, got {bits}")
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if audio_format != 1:
        raise UnsupportedCodecError(f"unsupported WAV format code {audio_format}")
    if bits == 8:
        # 8-bit PCM is unsigned
        return (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if bits == 16:
        return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8)
        if len(b) % 3:
            raise MalformedWavError("24-bit data chunk not a multiple of 3 bytes")
        b = b.reshape(-1, 3).astype(np.int64)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v -= (v & 0x800000) << 1  # sign-extend
        return v.astype(np.float64) / float(1 << 23)
    raise UnsupportedCodecError(f"unsupported bit depth {bits}")


def read_wav_channels(path: str | Path) -> tuple[list[np.ndarray], int]:
    """Decode a PCM WAV into per-channel float vectors scaled to [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"audio file not found: {path}")
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"not a RIFF/WAVE file: {path}")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < size:
                raise MalformedWavError("data chunk truncated")
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or payload is None:
        raise MalformedWavError(f"missing fmt or data chunk: {path}")
    audio_format, n_channels, sample_rate, _, _, bits = fmt
    if n_channels not in (1, 2):
        raise UnsupportedCodecError(f"{n_channels} channels unsupported")
    flat = _decode_pcm(payload, bits, audio_format)
    if len(flat) % n_channels:
        raise MalformedWavError("sample count not divisible by channel count")
    frames = flat.reshape(-1, n_channels)
    return [frames[:, c].copy() for c in range(n_channels)], sample_rate


def read_wav(path: str | Path) -> AudioClip:
    """Decode a WAV file to a mono AudioClip (multi-channel averaged)."""
    channels, rate = read_wav_channels(path)
    return AudioClip(to_mono(channels), rate)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Encode as 16-bit PCM mono WAV. Samples are clipped to [-1, 1]."""
    x = np.clip(clip.samples, -1.0, 1.0)
    q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    payload = q.tobytes()
    rate = clip.sample_rate_hz
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, 1, 1, rate, rate * 2, 2, 16,
        b"data", len(payload),
    )
    Path(path).write_bytes(header + payload)


def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    """Linear-interpolation resample; exact no-op when rates already match."""
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    if target_hz == clip.sample_rate_hz:
        return clip
    n_in = len(clip.samples)
    n_out = max(1, round(n_in * target_hz / clip.sample_rate_hz))
    src_pos = np.arange(n_out) * (clip.sample_rate_hz / target_hz)
    src_pos = np.minimum(src_pos, n_in - 1)
    out = np.interp(src_pos, np.arange(n_in), clip.samples)
    return AudioClip(out, target_hz)


def pad_to_min_length(clip: AudioClip, min_samples: int = MIN_CLIP_SAMPLES) -> tuple[AudioClip, bool]:
    """Zero-pad clips shorter than one analysis window; returns (clip, padded?)."""
    if len(clip.samples) >= min_samples:
        return clip, False
    padded = np.zeros(min_samples)
    padded[: len(clip.samples)] = clip.samples
    return AudioClip(padded, clip.sample_rate_hz), True


REQUIRED_MANIFEST_COLUMNS = ("clip_id", "file_path", "participant_id", "cough_probability")


def load_manifest(manifest_path: str | Path, gate: float = 0.85,
                  tabular_path: str | Path | None = None) -> Manifest:
    """Read the clip manifest CSV, dropping rows with cough_probability <= gate.

    The gate comparison is strict: a row survives only when its probability
    exceeds the threshold.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ManifestError("manifest has no header row")
        missing = set(REQUIRED_MANIFEST_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise ManifestError(f"manifest missing columns: {sorted(missing)}")
        has_label = "label" in reader.fieldnames
        has_split = "split_tag" in reader.fieldnames
        records: list[ClipRecord] = []
        seen: set[str] = set()
        dropped = 0
        for row in reader:
            cid = row["clip_id"]
            if cid in seen:
                raise ManifestError(f"duplicate clip_id: {cid}")
            seen.add(cid)
            try:
                prob = float(row["cough_probability"])
            except ValueError as exc:
                raise ManifestError(f"unparseable cough_probability for {cid}: "
                                    f"{row['cough_probability']!r}") from exc
            if not prob > gate:
                dropped += 1
                continue
            label = None
            if has_label and row["label"] not in ("", None):
                label = int(row["label"])
            split = row["split_tag"] or None if has_split else None
            records.append(ClipRecord(cid, row["file_path"], row["participant_id"],
                                      prob, label, split))

    tabular: dict[str, dict[str, str]] = {}
    if tabular_path is not None:
        with open(tabular_path, newline="", encoding="utf-8") as fh:
            treader = csv.DictReader(fh)
            if treader.fieldnames is None or "participant_id" not in treader.fieldnames:
                raise ManifestError("tabular CSV needs a participant_id column")
            for row in treader:
                tabular[row["participant_id"]] = dict(row)

    return Manifest(records=records, tabular=tabular, dropped_count=dropped)
