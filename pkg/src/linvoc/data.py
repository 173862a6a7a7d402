"""Synthetic harmonic 'speech-like' clips standing in for a recorded corpus."""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass

import numpy as np

from .dsp import HOP, SAMPLE_RATE, MelCondition, mel_condition


def derive_seed(root: int, *names) -> np.random.SeedSequence:
    """Named sub-seed: SeedSequence(root, crc32 of each name). Ints are used as-is."""
    keys = [int(root)]
    for n in names:
        keys.append(n if isinstance(n, int) else zlib.crc32(str(n).encode()))
    return np.random.SeedSequence(keys)


def derive_rng(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *names))


@dataclass(frozen=True)
class SynthDatasetSpec:
    n_clips: int = 8
    clip_samples: int = 22016
    f0_min: float = 80.0
    f0_max: float = 400.0
    n_harmonics: int = 8
    envelope: str = "smooth"  # smooth | flat
    noise_burst_prob: float = 0.3
    seed: int = 0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.clip_samples <= 0 or self.clip_samples % HOP:
            raise ValueError(f"clip_samples must be a positive multiple of {HOP}")
        if not 0 < self.f0_min <= self.f0_max:
            raise ValueError("need 0 < f0_min <= f0_max")
        if self.n_harmonics < 1 or self.n_clips < 1:
            raise ValueError("n_harmonics and n_clips must be >= 1")
        if self.envelope not in ("smooth", "flat"):
            raise ValueError(f"unknown envelope family {self.envelope!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Clip:
    samples: np.ndarray  # float32, peak 0.95
    mel: MelCondition
    f0: float
    index: int


def _envelope(rng: np.random.Generator, n: int, family: str, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    if family == "flat":
        env = np.ones(n)
    else:
        env = np.full(n, 0.6)
        for _ in range(3):
            rate_hz = rng.uniform(0.5, 4.0)
            env += rng.uniform(0.1, 0.3) * np.cos(2 * np.pi * rate_hz * t + rng.uniform(0, 2 * np.pi))
        env = np.clip(env, 0.05, None)
    fade = min(n // 8, int(0.01 * sr))
    if fade:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        env[:fade] *= ramp
        env[-fade:] *= ramp[::-1]
    return env


def synth_clip(spec: SynthDatasetSpec, index: int) -> Clip:
    rng = derive_rng(spec.seed, "clip", index)
    n, sr = spec.clip_samples, spec.sample_rate
    t = np.arange(n) / sr
    f0 = float(rng.uniform(spec.f0_min, spec.f0_max))
    decay = rng.uniform(0.2, 0.8)
    x = np.zeros(n)
    for h in range(1, spec.n_harmonics + 1):
        if h * f0 >= sr / 2:
            break
        x += np.exp(-decay * (h - 1)) * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
    x *= _envelope(rng, n, spec.envelope, sr)
    if rng.uniform() < spec.noise_burst_prob:
        length = int(rng.uniform(0.02, 0.06) * sr)
        start = int(rng.integers(0, max(n - length, 1)))
        burst = rng.standard_normal(length) * np.hanning(length) * rng.uniform(0.1, 0.4) * np.abs(x).max()
        x[start:start + length] += burst[: n - start]
    x = (0.95 / np.abs(x).max() * x).astype(np.float32)
    return Clip(x, mel_condition(x.astype(np.float64)), f0, index)


def synth_dataset(spec: SynthDatasetSpec) -> list[Clip]:
    """Deterministic in ``spec.seed``; clip i depends only on (seed, i)."""
    return [synth_clip(spec, i) for i in range(spec.n_clips)]
