"""Acoustic feature extraction: mel-spectrogram, MFCC, spectral contrast."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .audio_io import AudioClip
from .dsp import StftPower, stft_power

DB_FLOOR = 1e-10  # power floor before log compression (-100 dB)


class FeatureKind(enum.Enum):
    MEL_SPECTROGRAM_DB = "mel"
    MFCC = "mfcc"
    SPECTRAL_CONTRAST = "contrast"


@dataclass(frozen=True)
class MelParams:
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    f_min_hz: float = 0.0
    f_max_hz: float | None = None  # None -> Nyquist at extraction time

    def __post_init__(self):
        if self.n_mels < 2:
            raise ValueError("n_mels must be >= 2")
        if self.f_min_hz < 0:
            raise ValueError("f_min_hz must be >= 0")
        if self.f_max_hz is not None and self.f_max_hz <= self.f_min_hz:
            raise ValueError("f_max_hz must exceed f_min_hz")

    def resolved_f_max(self, sample_rate_hz: int) -> float:
        nyquist = sample_rate_hz / 2.0
        f_max = nyquist if self.f_max_hz is None else self.f_max_hz
        if f_max > nyquist:
            raise ValueError(f"f_max {f_max} beyond Nyquist {nyquist}")
        return f_max

    def cache_key(self) -> str:
        return f"nfft{self.n_fft}-hop{self.hop}-mels{self.n_mels}-" \
               f"fmin{self.f_min_hz}-fmax{self.f_max_hz}"


@dataclass(frozen=True)
class FeatureMatrix:
    """Feature-bin x time-frame matrix."""

    values: np.ndarray
    kind: FeatureKind

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise ValueError("values must be a finite 2-D matrix")
        object.__setattr__(self, "values", v)


def hz_to_mel(f_hz):
    """Mel frequency: 2595 * log10(1 + f/700)."""
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be nonnegative")
    return 2595.0 * np.log10(1.0 + f / 700.0)


def mel_to_hz(mel):
    m = np.asarray(mel, dtype=np.float64)
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def mel_center_frequencies(params: MelParams, sample_rate_hz: int) -> np.ndarray:
    """Filter peak frequencies in Hz, evenly spaced on the mel axis."""
    f_max = params.resolved_f_max(sample_rate_hz)
    mel_points = np.linspace(hz_to_mel(params.f_min_hz), hz_to_mel(f_max),
                             params.n_mels + 2)
    return mel_to_hz(mel_points[1:-1])


def mel_filterbank(params: MelParams, sample_rate_hz: int) -> np.ndarray:
    """Triangular filters, n_mels x (n_fft/2 + 1), peaks evenly mel-spaced."""
    f_max = params.resolved_f_max(sample_rate_hz)
    mel_points = np.linspace(hz_to_mel(params.f_min_hz), hz_to_mel(f_max),
                             params.n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(params.n_fft // 2 + 1) * sample_rate_hz / params.n_fft

    fb = np.zeros((params.n_mels, len(bin_freqs)))
    for i in range(params.n_mels):
        lo, center, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


@lru_cache(maxsize=8)
def _filterbank_cached(params: MelParams, sample_rate_hz: int) -> np.ndarray:
    fb = mel_filterbank(params, sample_rate_hz)
    fb.setflags(write=False)
    return fb


def mel_spectrogram_db(clip: AudioClip, params: MelParams = MelParams(),
                       power: StftPower | None = None) -> FeatureMatrix:
    """dB-compressed mel power spectrogram, n_mels x frames.

    A precomputed power spectrogram may be passed to share one STFT across
    several feature extractors; it must match the requested n_fft/hop."""
    if power is None:
        power = stft_power(clip, params.n_fft, params.hop, centered=True)
    elif power.n_fft != params.n_fft or power.hop != params.hop:
        raise ValueError("precomputed spectrogram does not match n_fft/hop")
    fb = _filterbank_cached(params, clip.sample_rate_hz)
    mel_power = fb @ power.frames
    db = 10.0 * np.log10(np.maximum(mel_power, DB_FLOOR))
    return FeatureMatrix(db, FeatureKind.MEL_SPECTROGRAM_DB)


def dct_ii_basis(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis matrix (n x n); rows are basis vectors."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    basis = np.cos(np.pi * k * (2 * m + 1) / (2 * n)) * np.sqrt(2.0 / n)
    basis[0] *= np.sqrt(0.5)
    return basis


@lru_cache(maxsize=8)
def _dct_basis_cached(n: int) -> np.ndarray:
    basis = dct_ii_basis(n)
    basis.setflags(write=False)
    return basis


def mfcc(clip: AudioClip, n_mfcc: int = 20, params: MelParams = MelParams(),
         power: StftPower | None = None,
         log_mel_db: FeatureMatrix | None = None) -> FeatureMatrix:
    """Cepstral coefficients: orthonormal DCT-II along the mel axis of the
    log-mel matrix, coefficients 0..n_mfcc-1.

    A precomputed log-mel matrix may be passed to avoid recomputing it when
    the mel-spectrogram feature is extracted alongside."""
    if n_mfcc > params.n_mels:
        raise ValueError("n_mfcc cannot exceed n_mels")
    if log_mel_db is not None:
        if log_mel_db.values.shape[0] != params.n_mels:
            raise ValueError("precomputed log-mel does not match n_mels")
        log_mel = log_mel_db.values
    else:
        log_mel = mel_spectrogram_db(clip, params, power).values
    basis = _dct_basis_cached(params.n_mels)
    coeffs = basis[:n_mfcc] @ log_mel
    return FeatureMatrix(coeffs, FeatureKind.MFCC)


def contrast_band_edges(n_bands: int, base_hz: float, nyquist_hz: float) -> np.ndarray:
    """Octave band edges: [0, base, 2*base, ..., min(base*2^n, Nyquist)]."""
    edges = [0.0] + [base_hz * (2.0 ** i) for i in range(n_bands)] + [nyquist_hz]
    edges = np.minimum(np.asarray(edges), nyquist_hz)
    if np.any(np.diff(edges) <= 0):
        raise ValueError("too many octave bands for this sample rate")
    return edges


def spectral_contrast(clip: AudioClip, n_bands: int = 8, quantile: float = 0.02,
                      base_hz: float = 80.0, n_fft: int = 2048,
                      hop: int = 512,
                      power: StftPower | None = None) -> FeatureMatrix:
    """Per-band log(peak) - log(valley) over octave sub-bands, (n_bands+1) rows.

    peak/valley are means of the top/bottom `quantile` fraction of magnitudes
    in each band and frame (at least one bin each)."""
    if n_bands < 1:
        raise ValueError("n_bands must be >= 1")
    if not 0.0 < quantile <= 0.5:
        raise ValueError("quantile must lie in (0, 0.5]")
    if power is None:
        power = stft_power(clip, n_fft, hop, centered=True)
    elif power.n_fft != n_fft or power.hop != hop:
        raise ValueError("precomputed spectrogram does not match n_fft/hop")
    magnitude = np.sqrt(power.frames)
    freqs = power.bin_frequencies()
    edges = contrast_band_edges(n_bands, base_hz, clip.sample_rate_hz / 2.0)

    tiny = 1e-20
    rows = []
    for b in range(n_bands + 1):
        lo, hi = edges[b], edges[b + 1]
        if b == n_bands:
            mask = (freqs >= lo) & (freqs <= hi)
        else:
            mask = (freqs >= lo) & (freqs < hi)
        band = np.sort(magnitude[mask], axis=0)
        k = max(1, int(quantile * band.shape[0]))
        valley = band[:k].mean(axis=0)
        peak = band[-k:].mean(axis=0)
        rows.append(np.log(np.maximum(peak, tiny)) - np.log(np.maximum(valley, tiny)))
    return FeatureMatrix(np.stack(rows), FeatureKind.SPECTRAL_CONTRAST)


def pool_features(m: FeatureMatrix) -> np.ndarray:
    """Fixed-length summary: per-row mean then per-row std, length 2*rows."""
    v = m.values
    return np.concatenate([v.mean(axis=1), v.std(axis=1)])


# --- binary feature cache -------------------------------------------------

_CACHE_MAGIC = b"FMX1"
_KIND_CODES = {FeatureKind.MEL_SPECTROGRAM_DB: 1, FeatureKind.MFCC: 2,
               FeatureKind.SPECTRAL_CONTRAST: 3}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def save_feature_matrix(path: str | Path, m: FeatureMatrix) -> None:
    """Cache format: magic, kind tag, row/col counts (LE u32), f32 row-major."""
    rows, cols = m.values.shape
    header = _CACHE_MAGIC + struct.pack("<III", _KIND_CODES[m.kind], rows, cols)
    Path(path).write_bytes(header + m.values.astype("<f4").tobytes())


def load_feature_matrix(path: str | Path) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if data[:4] != _CACHE_MAGIC:
        raise ValueError(f"bad feature cache magic in {path}")
    kind_code, rows, cols = struct.unpack_from("<III", data, 4)
    values = np.frombuffer(data, dtype="<f4", offset=16).reshape(rows, cols)
    return FeatureMatrix(values.astype(np.float64), _CODE_KINDS[kind_code])
