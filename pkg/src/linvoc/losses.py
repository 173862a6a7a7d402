"""Training objectives: diffusion MSE, randomized single-resolution STFT MSE, LSGAN pair."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import grad as G
from .dsp import SpectrogramConfig, stft_magnitude
from .grad import Tensor

ADV_WEIGHT_STAGE3 = 0.2

DEFAULT_STFT_BANK = (
    SpectrogramConfig(256, 256, 64),
    SpectrogramConfig(512, 512, 128),
    SpectrogramConfig(1024, 1024, 256),
    SpectrogramConfig(2048, 2048, 512),
)


@dataclass(frozen=True)
class StftBank:
    configs: tuple[SpectrogramConfig, ...] = DEFAULT_STFT_BANK

    def __post_init__(self):
        if len(self.configs) != 4:
            raise ValueError(f"an STFT bank holds exactly four configs, got {len(self.configs)}")

    def choose(self, rng: np.random.Generator) -> int:
        return int(rng.integers(len(self.configs)))


@dataclass
class LossReport:
    l_diff: float
    l_s: float
    l_adv_g: float
    l_adv_d: float
    l_gen: float
    stft_cfg_index: int

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.l_diff, self.l_s, self.l_adv_g, self.l_adv_d, self.l_gen))


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return G.tensor(x, dtype=dtype)


def _check_shapes(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def diffusion_loss(x_hat, x_data) -> Tensor:
    x_hat = _as_tensor(x_hat)
    x_data = _as_tensor(x_data, x_hat)
    _check_shapes(x_hat, x_data, "diffusion_loss")
    return G.mean(G.square(x_hat - x_data))


def stft_mse(x_hat: Tensor, x_data: Tensor, cfg: SpectrogramConfig) -> Tensor:
    """MSE between 1/sqrt(n_fft)-normalized STFT magnitudes of two (B, L) batches under one config."""
    if x_hat.ndim == 1:
        x_hat, x_data = x_hat.reshape(1, -1), x_data.reshape(1, -1)
    mag_hat = stft_magnitude(x_hat, cfg, normalized=True)
    mag_ref = stft_magnitude(x_data, cfg, normalized=True)
    return G.mean(G.square(mag_hat - mag_ref))


def stft_loss(x_hat, x_data, bank: StftBank, rng: np.random.Generator) -> tuple[Tensor, int]:
    """Draw one config of ``bank`` uniformly and return (loss, chosen index)."""
    x_hat = _as_tensor(x_hat)
    x_data = _as_tensor(x_data, x_hat)
    _check_shapes(x_hat, x_data, "stft_loss")
    idx = bank.choose(rng)
    return stft_mse(x_hat, x_data, bank.configs[idx]), idx


def _mean_over(terms: Sequence[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def adv_loss_generator(scores_fake: Sequence[Tensor]) -> Tensor:
    """mean_k (1 - D_k(fake))^2, each term averaged over the batch."""
    return _mean_over([G.mean(G.square(1.0 - _as_tensor(s))) for s in scores_fake])


def adv_loss_discriminator(scores_fake_detached: Sequence[Tensor], scores_real: Sequence[Tensor]) -> Tensor:
    """mean_k D_k(sg(fake))^2 + (1 - D_k(real))^2, each term averaged over the batch."""
    if len(scores_fake_detached) != len(scores_real):
        raise ValueError("fake and real score lists differ in length")
    terms = [G.mean(G.square(_as_tensor(f)) + G.square(1.0 - _as_tensor(r)))
             for f, r in zip(scores_fake_detached, scores_real)]
    return _mean_over(terms)


def generator_weights(stage: int) -> float:
    """Weight on the adversarial term for a training stage."""
    if stage == 1:
        return 0.0
    if stage == 2:
        return 1.0
    if stage == 3:
        return ADV_WEIGHT_STAGE3
    raise ValueError(f"unknown training stage {stage}")


def total_generator_loss(l_adv_g, l_s, l_diff, stage: int):
    w = generator_weights(stage)
    base = l_s + l_diff
    if w == 0.0:
        return base
    return l_adv_g * w + base


LOG_COLUMNS = ("step", "stage", "l_diff", "l_s", "l_adv_g", "l_adv_d", "l_gen", "stft_cfg_index")


class LossLog:
    """Append-only CSV of LossReport rows."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(LOG_COLUMNS)

    def append(self, step: int, stage: int, report: LossReport):
        row = asdict(report)
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([step, stage] + [repr(float(row[c])) for c in LOG_COLUMNS[2:7]]
                                    + [row["stft_cfg_index"]])

    def truncate_after(self, step: int):
        """Drop rows beyond ``step`` (used when resuming from an earlier checkpoint)."""
        with open(self.path, newline="") as fh:
            rows = list(csv.reader(fh))
        keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= step]
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh).writerows(keep)

    @staticmethod
    def read(path) -> list[dict]:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
