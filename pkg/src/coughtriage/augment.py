"""Training-set augmentation: white noise at controlled SNR and room
impulse-response convolution, with a deterministic 50/50 plan."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip
from .dsp import ImpulseResponse, convolve_full

METHOD_SNR = "SnrNoise"
METHOD_IR = "IrConvolve"

NO_AUGMENT_SNR_DB = math.inf  # passthrough sentinel


@dataclass(frozen=True)
class Assignment:
    clip_id: str
    method: str
    parameter: float  # target SNR dB for noise, IR pool index for convolution
    seed: int


@dataclass(frozen=True)
class AugmentationPlan:
    assignments: tuple[Assignment, ...]
    fraction: float
    method_split: float
    seed: int


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(np.asarray(x, dtype=np.float64)))))


def measure_snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    """10 * log10(rms(signal)^2 / rms(noise)^2)."""
    if len(signal) == 0 or len(noise) == 0:
        raise ValueError("empty input")
    noise_rms = rms(noise)
    if noise_rms == 0.0:
        raise ValueError("silent noise vector: SNR undefined")
    return 10.0 * math.log10(rms(signal) ** 2 / noise_rms ** 2)


def add_white_noise_snr(clip: AudioClip, target_snr_db: float, seed: int) -> AudioClip:
    """Inject gaussian noise scaled to hit the target SNR exactly.

    The +inf sentinel is a passthrough. If the sum would clip, the whole
    output is peak-normalized to 1.
    """
    if math.isinf(target_snr_db) and target_snr_db > 0:
        return clip
    signal_rms = rms(clip.samples)
    if signal_rms == 0.0:
        raise ValueError("silent clip: SNR undefined")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(clip.samples))
    scale = signal_rms / (rms(noise) * 10.0 ** (target_snr_db / 20.0))
    out = clip.samples + scale * noise
    peak = np.max(np.abs(out))
    if peak > 1.0:
        out = out / peak
    return AudioClip(out, clip.sample_rate_hz)


def apply_ir(clip: AudioClip, ir: ImpulseResponse) -> AudioClip:
    """Convolve with a room impulse response, trim to the clip length, and
    rescale so the output peak is half the input peak."""
    if clip.sample_rate_hz != ir.sample_rate_hz:
        raise ValueError("clip and IR sample rates differ")
    out = convolve_full(clip.samples, ir.taps)[: len(clip.samples)]
    out_peak = np.max(np.abs(out))
    in_peak = np.max(np.abs(clip.samples))
    if out_peak > 0:
        out = out * (0.5 * in_peak / out_peak)
    return AudioClip(out, clip.sample_rate_hz)


def ratio_to_snr_db(noise_amplitude_ratio: float) -> float:
    """Noise-to-signal amplitude ratio r -> SNR dB; r = 0 is a passthrough."""
    if noise_amplitude_ratio == 0.0:
        return NO_AUGMENT_SNR_DB
    return 20.0 * math.log10(1.0 / noise_amplitude_ratio)


def plan_augmentation(train_ids: list[str], fraction: float = 0.5,
                      split: float = 0.5, ratio_low: float = 0.0,
                      ratio_high: float = 0.9, ir_pool_size: int = 5,
                      seed: int = 0) -> AugmentationPlan:
    """Deterministically pick round(fraction * n) distinct training clips and
    split them between the two methods (counts differ by at most one).

    Noise targets come from a uniform amplitude-ratio draw converted to dB;
    IR assignments are uniform indices into the configured pool.
    """
    if not train_ids:
        raise ValueError("empty train id list")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if not 0.0 <= split <= 1.0:
        raise ValueError("split must lie in [0, 1]")
    if not 0.0 <= ratio_low <= ratio_high <= 1.0:
        raise ValueError("invalid amplitude-ratio range")
    if split < 1.0 and ir_pool_size < 1:
        raise ValueError("IR pool required when split < 1")

    rng = np.random.default_rng(seed)
    n_aug = int(round(fraction * len(train_ids)))
    chosen = rng.choice(len(train_ids), size=n_aug, replace=False)
    n_snr = int(round(split * n_aug))

    assignments = []
    for rank, idx in enumerate(chosen):
        clip_id = train_ids[int(idx)]
        clip_seed = int(rng.integers(0, 2 ** 31))
        if rank < n_snr:
            ratio = float(rng.uniform(ratio_low, ratio_high))
            assignments.append(Assignment(clip_id, METHOD_SNR,
                                          ratio_to_snr_db(ratio), clip_seed))
        else:
            ir_idx = int(rng.integers(0, ir_pool_size))
            assignments.append(Assignment(clip_id, METHOD_IR, float(ir_idx),
                                          clip_seed))
    return AugmentationPlan(tuple(assignments), fraction, split, seed)


def execute_assignment(a: Assignment, clip: AudioClip,
                       ir_pool: list[ImpulseResponse]) -> AudioClip:
    if a.method == METHOD_SNR:
        return add_white_noise_snr(clip, a.parameter, a.seed)
    if a.method == METHOD_IR:
        return apply_ir(clip, ir_pool[int(a.parameter)])
    raise ValueError(f"unknown augmentation method {a.method!r}")


def save_plan_csv(path: str | Path, plan: AugmentationPlan) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "method", "parameter", "seed"])
        for a in plan.assignments:
            writer.writerow([a.clip_id, a.method, repr(a.parameter), a.seed])


def load_plan_csv(path: str | Path, fraction: float = 0.5, split: float = 0.5,
                  seed: int = 0) -> AugmentationPlan:
    assignments = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            assignments.append(Assignment(row["clip_id"], row["method"],
                                          float(row["parameter"]), int(row["seed"])))
    return AugmentationPlan(tuple(assignments), fraction, split, seed)
