"""Discriminator ensemble: one spectral critic, multi-scale and multi-period waveform critics.

Every sub-critic reduces its final feature map to one score per batch item by
averaging over positions; the adversarial losses then average over
sub-critics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grad as G
from .dsp import SpectrogramConfig, stft_magnitude
from .grad import Tensor
from .nn import Conv1d, Conv2d, Module

SLOPE = 0.2


@dataclass(frozen=True)
class CriticConfig:
    msd_scales: tuple[int, ...] = (1, 2)
    mpd_periods: tuple[int, ...] = (2, 3)
    spectral_cfg: SpectrogramConfig = field(default_factory=lambda: SpectrogramConfig(512, 512, 128))
    widths: tuple[int, ...] = (16, 32, 64, 64)
    seed: int = 1

    def __post_init__(self):
        if any(s < 1 for s in self.msd_scales):
            raise ValueError("msd scales must be >= 1")
        if any(p < 2 for p in self.mpd_periods):
            raise ValueError("mpd periods must be >= 2")
        if not self.widths or any(w < 1 for w in self.widths):
            raise ValueError("critic widths must be positive")

    @property
    def n_scores(self) -> int:
        return 1 + len(self.msd_scales) + len(self.mpd_periods)


def _pool_score(x: Tensor) -> Tensor:
    """Mean over every non-batch axis -> (B,)."""
    return G.mean(x, axis=tuple(range(1, x.ndim)))


class SpectralCritic(Module):
    """2-D conv stack over the log-magnitude STFT (frequency x time)."""

    def __init__(self, rng, cfg: CriticConfig):
        self.spec_cfg = cfg.spectral_cfg
        chans = (1,) + tuple(cfg.widths)
        self.stages = [Conv2d(rng, chans[i], chans[i + 1], (3, 3), stride=(2, 1) if i else (1, 1))
                       for i in range(len(cfg.widths))]
        self.head = Conv2d(rng, chans[-1], 1, (3, 3))

    def __call__(self, w: Tensor) -> Tensor:
        if w.shape[-1] < self.spec_cfg.n_fft:
            raise ValueError(f"spectral critic needs >= {self.spec_cfg.n_fft} samples, got {w.shape[-1]}")
        mag = stft_magnitude(w, self.spec_cfg, normalized=True)
        h = G.log(mag + 1e-5).reshape(w.shape[0], 1, mag.shape[1], mag.shape[2])
        for conv in self.stages:
            h = G.leaky_relu(conv(h), SLOPE)
        return _pool_score(self.head(h))


class ScaleCritic(Module):
    """Average-pool by ``scale`` then a 5-stage 1-D conv stack."""

    def __init__(self, rng, scale: int, widths):
        self.scale = scale
        w1, w2, w3, w4 = (tuple(widths) + (widths[-1],) * 4)[:4]
        self.stages = [
            Conv1d(rng, 1, w1, 15),
            Conv1d(rng, w1, w2, 11, stride=4, padding=5, groups=_groups(w1, w2)),
            Conv1d(rng, w2, w3, 11, stride=4, padding=5, groups=_groups(w2, w3)),
            Conv1d(rng, w3, w4, 11, stride=4, padding=5, groups=_groups(w3, w4)),
            Conv1d(rng, w4, w4, 5),
        ]
        self.head = Conv1d(rng, w4, 1, 3)

    def __call__(self, w: Tensor) -> Tensor:
        h = G.avg_pool1d(w.reshape(w.shape[0], 1, w.shape[-1]), self.scale)
        for conv in self.stages:
            h = G.leaky_relu(conv(h), SLOPE)
        return _pool_score(self.head(h))


def _groups(c_in: int, c_out: int) -> int:
    for g in (4, 2):
        if c_in % g == 0 and c_out % g == 0 and c_in // g >= 4:
            return g
    return 1


def period_view(w, period: int):
    """(B, L) -> (B, 1, period, ceil(L/period)); row r holds samples r, r+p, r+2p, ... (zero tail pad)."""
    B, L = w.shape
    if L == 0:
        raise ValueError("empty input")
    n = -(-L // period)
    if isinstance(w, Tensor):
        padded = G.pad1d(w, 0, n * period - L)
        return padded.reshape(B, n, period).transpose(0, 2, 1).reshape(B, 1, period, n)
    padded = np.pad(np.asarray(w), ((0, 0), (0, n * period - L)))
    return padded.reshape(B, n, period).transpose(0, 2, 1).reshape(B, 1, period, n)


class PeriodCritic(Module):
    """Fold the waveform by ``period`` and convolve along each phase row."""

    def __init__(self, rng, period: int, widths):
        self.period = period
        chans = (1,) + tuple(widths)
        n = len(widths)
        self.stages = [Conv2d(rng, chans[i], chans[i + 1], (1, 5), stride=(1, 3 if i < n - 1 else 1), padding=(0, 2))
                       for i in range(n)]
        self.head = Conv2d(rng, chans[-1], 1, (1, 3), padding=(0, 1))

    def __call__(self, w: Tensor) -> Tensor:
        if w.shape[-1] < self.period:
            raise ValueError(f"period critic needs >= {self.period} samples")
        h = period_view(w, self.period)
        for conv in self.stages:
            h = G.leaky_relu(conv(h), SLOPE)
        return _pool_score(self.head(h))


class CriticEnsemble(Module):
    def __init__(self, cfg: CriticConfig = CriticConfig()):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.spectral = SpectralCritic(rng, cfg)
        self.msd = [ScaleCritic(rng, s, cfg.widths) for s in cfg.msd_scales]
        self.mpd = [PeriodCritic(rng, p, cfg.widths) for p in cfg.mpd_periods]
        self.calls = 0

    def __call__(self, w) -> list[Tensor]:
        """Scores for every sub-critic, each of shape (B,): [spectral, msd..., mpd...]."""
        w = w if isinstance(w, Tensor) else G.tensor(w, dtype=self.spectral.head.weight.dtype)
        if w.ndim == 1:
            w = w.reshape(1, -1)
        top = max(self.cfg.msd_scales)
        if w.shape[-1] % top:
            raise ValueError(f"length {w.shape[-1]} not divisible by the largest scale {top}")
        self.calls += 1
        return [self.spectral(w)] + [c(w) for c in self.msd] + [c(w) for c in self.mpd]
