"""Signal primitives: windowing, radix-2 FFT, STFT power, convolution, and
exponential-sine-sweep impulse-response estimation."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio_io import AudioClip


@dataclass(frozen=True)
class StftPower:
    """One-sided power spectrum per frame: (n_fft/2+1) rows x frame columns."""

    frames: np.ndarray
    n_fft: int
    hop: int
    sample_rate_hz: int

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.n_fft // 2 + 1) * self.sample_rate_hz / self.n_fft


@dataclass(frozen=True)
class ImpulseResponse:
    taps: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=np.float64)
        if t.size == 0 or not np.all(np.isfinite(t)):
            raise ValueError("taps must be nonempty and finite")
        object.__setattr__(self, "taps", t)


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window w[k] = 0.5 * (1 - cos(2*pi*k/n))."""
    if n < 1:
        raise ValueError("window length must be >= 1")
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


@lru_cache(maxsize=8)
def _dft_basis(n: int) -> np.ndarray:
    # basis[k, m] = exp(-2*pi*j*k*m/n), built by twiddle-table lookup since
    # k*m mod n indexes the n distinct unit-circle values
    twiddle = np.exp(-2j * np.pi * np.arange(n) / n)
    k = np.arange(n, dtype=np.int64)
    return twiddle[np.outer(k, k) % n]


def dft_oracle(x: np.ndarray) -> np.ndarray:
    """Literal O(N^2) discrete Fourier transform, kept as the FFT oracle."""
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("empty input")
    return _dft_basis(len(x)) @ x.astype(np.complex128)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@lru_cache(maxsize=16)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for i in range(1, n):
        rev[i] = (rev[i >> 1] >> 1) | ((i & 1) << (bits - 1))
    rev.setflags(write=False)
    return rev


@lru_cache(maxsize=32)
def _twiddle(half: int) -> np.ndarray:
    tw = np.exp(-2j * np.pi * np.arange(half) / (2 * half))
    tw.setflags(write=False)
    return tw


@lru_cache(maxsize=8)
def _hann_cached(n: int) -> np.ndarray:
    w = hann_window(n)
    w.setflags(write=False)
    return w


def fft(x: np.ndarray, n: int | None = None) -> np.ndarray:
    """Iterative radix-2 FFT with bit-reversal permutation.

    Accepts a 1-D vector or a 2-D batch (transform along the last axis).
    Input is zero-padded or truncated to n, which must be a power of two.
    """
    x = np.asarray(x)
    if n is None:
        n = x.shape[-1]
    if not _is_power_of_two(n):
        raise ValueError(f"transform size must be a power of two, got {n}")
    batch_shape = x.shape[:-1]
    work = np.zeros(batch_shape + (n,), dtype=np.complex128)
    m = min(x.shape[-1], n)
    work[..., :m] = x[..., :m]
    work = work[..., _bit_reversal(n)]

    half = 1
    while half < n:
        step = half * 2
        tw = _twiddle(half)
        blocks = work.reshape(batch_shape + (n // step, step))
        hi = blocks[..., half:] * tw
        blocks[..., half:] = blocks[..., :half] - hi
        blocks[..., :half] += hi
        work = blocks.reshape(batch_shape + (n,))
        half = step
    return work


def ifft(y: np.ndarray) -> np.ndarray:
    """Inverse transform via conjugation: x = conj(fft(conj(y))) / n."""
    y = np.asarray(y, dtype=np.complex128)
    return np.conj(fft(np.conj(y))) / y.shape[-1]


def stft_power(clip: AudioClip, n_fft: int = 2048, hop: int = 512,
               centered: bool = True) -> StftPower:
    """Hann-windowed short-time power spectrum.

    With centered reflect padding the frame count is floor(len/hop) + 1.
    """
    if hop < 1:
        raise ValueError("hop must be >= 1")
    if not _is_power_of_two(n_fft):
        raise ValueError(f"n_fft must be a power of two, got {n_fft}")
    x = clip.samples
    if centered:
        pad = n_fft // 2
        x = np.pad(x, pad, mode="reflect")
        n_frames = len(clip.samples) // hop + 1
    else:
        if len(x) < n_fft:
            raise ValueError("clip shorter than one window in uncentered mode")
        n_frames = (len(x) - n_fft) // hop + 1
    window = _hann_cached(n_fft)
    starts = np.arange(n_frames) * hop
    segments = np.stack([x[s:s + n_fft] for s in starts]) * window
    spectrum = fft(segments, n_fft)[:, : n_fft // 2 + 1]
    power = (spectrum.real ** 2 + spectrum.imag ** 2).T
    return StftPower(frames=power, n_fft=n_fft, hop=hop,
                     sample_rate_hz=clip.sample_rate_hz)


def convolve_direct(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct O(nm) convolution sum; oracle for the FFT path."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty input")
    out = np.zeros(len(a) + len(b) - 1)
    for i, bi in enumerate(b):
        out[i:i + len(a)] += bi * a
    return out


def convolve_full(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full linear convolution, length len(a)+len(b)-1, via zero-padded FFT."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty input")
    out_len = len(a) + len(b) - 1
    if out_len < 64:
        return convolve_direct(a, b)
    n = 1 << (out_len - 1).bit_length()
    prod = fft(a, n) * fft(b, n)
    return ifft(prod).real[:out_len]


def ess_generate(f1_hz: float, f2_hz: float, duration_s: float,
                 sample_rate_hz: int) -> AudioClip:
    """Exponential sine sweep x(t) = sin(2*pi*f1*L*(exp(t/L) - 1)),
    L = duration / ln(f2/f1); instantaneous frequency runs f1 -> f2."""
    if not 0 < f1_hz < f2_hz < sample_rate_hz / 2:
        raise ValueError("need 0 < f1 < f2 < Nyquist")
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    n = round(duration_s * sample_rate_hz)
    t = np.arange(n) / sample_rate_hz
    rate_const = duration_s / np.log(f2_hz / f1_hz)
    x = np.sin(2.0 * np.pi * f1_hz * rate_const * (np.exp(t / rate_const) - 1.0))
    return AudioClip(x, sample_rate_hz)


def ess_inverse_filter(sweep: AudioClip, f1_hz: float, f2_hz: float) -> np.ndarray:
    """Time-reversed sweep with the +6 dB/octave amplitude envelope that makes
    sweep (*) inverse approximate a delta."""
    n = len(sweep.samples)
    duration = n / sweep.sample_rate_hz
    rate_const = duration / np.log(f2_hz / f1_hz)
    t = np.arange(n) / sweep.sample_rate_hz
    inv = sweep.samples[::-1] * np.exp(-t / rate_const)
    # normalize so self-deconvolution peaks at 1
    peak = np.max(np.abs(convolve_full(sweep.samples, inv)))
    return inv / peak


def ir_from_recording(recorded: AudioClip, sweep: AudioClip,
                      f1_hz: float, f2_hz: float, n_taps: int = 4096) -> ImpulseResponse:
    """Estimate an impulse response by inverse-filter deconvolution.

    The sweep's known group delay (len(sweep)-1) is used for peak alignment;
    taps are trimmed to n_taps and peak-normalized. A silent recording yields
    an all-zero response.
    """
    if recorded.sample_rate_hz != sweep.sample_rate_hz:
        raise ValueError("recorded and sweep sample rates differ")
    inv = ess_inverse_filter(sweep, f1_hz, f2_hz)
    deconv = convolve_full(recorded.samples, inv)
    start = len(sweep.samples) - 1
    taps = deconv[start:start + n_taps]
    if len(taps) < n_taps:
        taps = np.pad(taps, (0, n_taps - len(taps)))
    peak = np.max(np.abs(taps))
    if peak > 0:
        taps = taps / peak
    return ImpulseResponse(taps=taps, sample_rate_hz=recorded.sample_rate_hz)


def synthetic_room_ir(rt60_s: float, sample_rate_hz: int, seed: int,
                      n_taps: int = 4096) -> ImpulseResponse:
    """Exponentially decaying noise tail, a stand-in for a measured room IR."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_taps) / sample_rate_hz
    decay = np.exp(-6.908 * t / rt60_s)  # -60 dB at rt60
    taps = rng.standard_normal(n_taps) * decay
    taps[0] = 1.0  # direct path
    return ImpulseResponse(taps=taps / np.max(np.abs(taps)),
                           sample_rate_hz=sample_rate_hz)
