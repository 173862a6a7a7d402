"""Three-stage training loop: diffusion+STFT warm-up, then adversarial fine-tuning.

Stage 1 trains the generator on l_diff + l_s only. Stage 2 adds the critics,
updated every step. Stage 3 switches to long clips, updates the critics only
on steps divisible by ``d_update_period`` and scales the adversarial term by
0.2.

All per-step randomness (batch order, crops, t, noise, STFT config) is derived
from (seed, step), so a resumed run replays exactly what an uninterrupted run
would have done.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import grad as G
from .critics import CriticConfig, CriticEnsemble
from .data import Clip, derive_rng
from .denoiser import Denoiser, DenoiserConfig
from .diffusion import TrainSchedule, make_training_pair
from .dsp import HOP
from .losses import (
    LossLog,
    LossReport,
    StftBank,
    adv_loss_discriminator,
    adv_loss_generator,
    diffusion_loss,
    stft_loss,
    total_generator_loss,
)
from .optim import Adam, NonFiniteGradient

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """Raised on a non-finite loss; the message carries the diagnostic dump."""


@dataclass(frozen=True)
class TrainConfig:
    stage1_end: int = 10000
    stage2_end: int = 20000
    total_steps: int = 30000
    batch_size: int = 4
    clip_samples_short: int = 22016
    clip_samples_long: int = 0  # 0 -> whole clip
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    d_update_period: int = 5
    seed: int = 0
    checkpoint_every: int = 1000
    t_train_max: int = 1000
    lr_schedule: str = "constant"  # constant | cosine (generator and critics alike)
    lr_min: float = 0.0

    def __post_init__(self):
        if not 0 <= self.stage1_end <= self.stage2_end <= self.total_steps:
            raise ValueError("need 0 <= stage1_end <= stage2_end <= total_steps")
        for name in ("clip_samples_short", "clip_samples_long"):
            if getattr(self, name) % HOP or getattr(self, name) < 0:
                raise ValueError(f"{name} must be a non-negative multiple of {HOP}")
        if self.clip_samples_short == 0:
            raise ValueError("clip_samples_short must be positive")
        if self.batch_size < 1 or self.d_update_period < 1 or self.checkpoint_every < 1:
            raise ValueError("batch_size, d_update_period and checkpoint_every must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant" or self.total_steps <= 1:
            return self.lr
        frac = min(step / (self.total_steps - 1), 1.0)
        return self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + math.cos(math.pi * frac))

    def stage(self, step: int) -> int:
        if step < self.stage1_end:
            return 1
        if step < self.stage2_end:
            return 2
        return 3

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k in kinds:
                kind = kinds[k] if isinstance(kinds[k], str) else kinds[k].__name__
                out[k] = {"float": float, "str": str}.get(kind, int)(v)
        return cls(**out)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------
def batch_indices(n_clips: int, batch_size: int, step: int, seed: int) -> np.ndarray:
    """Clip indices for ``step``: a fresh permutation per epoch, consumed in order and cycled."""
    out = []
    pos = step * batch_size
    while len(out) < batch_size:
        epoch, offset = divmod(pos, n_clips)
        perm = derive_rng(seed, "epoch", epoch).permutation(n_clips)
        take = min(batch_size - len(out), n_clips - offset)
        out.extend(perm[offset:offset + take])
        pos += take
    return np.asarray(out, dtype=np.int64)


def make_batch(clips: Sequence[Clip], indices, crop: int, rng: np.random.Generator):
    """Stack hop-aligned random crops of length ``crop`` (0 or >= clip length keeps whole clips)."""
    xs, mels = [], []
    lengths = {clips[i].samples.size for i in indices}
    if crop == 0 or crop >= min(lengths):
        if len(lengths) != 1:
            raise ValueError("whole-clip batches need equal clip lengths")
        crop = 0
    for i in indices:
        clip = clips[i]
        if crop:
            start = HOP * int(rng.integers(0, clip.samples.size // HOP - crop // HOP + 1))
            xs.append(clip.samples[start:start + crop])
            mels.append(clip.mel.frames[start // HOP:(start + crop) // HOP])
        else:
            xs.append(clip.samples)
            mels.append(clip.mel.frames)
    return np.stack(xs).astype(np.float32), np.stack(mels).astype(np.float32)


# ---------------------------------------------------------------------------
# one optimization step
# ---------------------------------------------------------------------------
class Trainer:
    def __init__(self, cfg: TrainConfig, model: Denoiser | None = None, critics: CriticEnsemble | None = None,
                 bank: StftBank = StftBank()):
        self.cfg = cfg
        self.model = model or Denoiser(DenoiserConfig())
        self.critics = critics or CriticEnsemble(CriticConfig())
        self.bank = bank
        self.schedule = TrainSchedule(cfg.t_train_max)
        betas = (cfg.beta1, cfg.beta2)
        self.opt_g = Adam(self.model.parameters(), cfg.lr, betas, cfg.eps)
        self.opt_d = Adam(self.critics.parameters(), cfg.lr, betas, cfg.eps)
        self.d_updates = {1: 0, 2: 0, 3: 0}
        self.skipped_updates = 0

    def wants_d_update(self, stage: int, step: int) -> bool:
        if stage == 1:
            return False
        if stage == 2:
            return True
        return step % self.cfg.d_update_period == 0

    def _apply(self, opt: Adam, what: str, step: int) -> bool:
        try:
            opt.step()
            return True
        except NonFiniteGradient as exc:
            self.skipped_updates += 1
            log.warning("step %d: skipped %s update (%s)", step, what, exc)
            return False

    def train_step(self, x_data: np.ndarray, mel: np.ndarray, stage: int, step: int,
                   rng: np.random.Generator) -> LossReport:
        x_t, t, _ = make_training_pair(x_data, rng, self.schedule)
        x_hat = self.model(x_t, mel, t)
        target = G.tensor(x_data, dtype=x_hat.dtype)
        l_diff = diffusion_loss(x_hat, target)
        l_s, cfg_idx = stft_loss(x_hat, target, self.bank, rng)

        l_adv_d_val = 0.0
        l_adv_g = None
        if stage > 1:
            if self.wants_d_update(stage, step):
                l_adv_d = adv_loss_discriminator(self.critics(x_hat.detach()), self.critics(target))
                l_adv_d_val = l_adv_d.item()
                self._check_finite(step, stage, {"l_adv_d": l_adv_d_val}, self.opt_d)
                self.opt_d.zero_grad()
                G.backward(l_adv_d)
                if self._apply(self.opt_d, "critic", step):
                    self.d_updates[stage] += 1
            l_adv_g = adv_loss_generator(self.critics(x_hat))
        l_gen = total_generator_loss(l_adv_g, l_s, l_diff, stage)

        report = LossReport(
            l_diff=l_diff.item(), l_s=l_s.item(), l_adv_g=l_adv_g.item() if l_adv_g is not None else 0.0,
            l_adv_d=l_adv_d_val, l_gen=l_gen.item(), stft_cfg_index=cfg_idx,
        )
        self.opt_g.zero_grad()
        G.backward(l_gen)
        self._check_finite(step, stage, asdict(report), self.opt_g)
        self._apply(self.opt_g, "generator", step)
        # generator backward also reached critic weights; those gradients are never applied
        self.opt_d.zero_grad()
        return report

    @staticmethod
    def _check_finite(step: int, stage: int, losses: dict, opt: Adam):
        bad = {k: v for k, v in losses.items() if isinstance(v, float) and not math.isfinite(v)}
        if bad:
            norms = opt.grad_norms()
            worst = sorted(norms.items(), key=lambda kv: -kv[1] if math.isfinite(kv[1]) else -math.inf)[:10]
            raise TrainingDiverged(
                f"non-finite loss at step {step} (stage {stage}): losses={losses} grad_norms(top)={worst}")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
def checkpoint_stem(out_dir, step: int) -> Path:
    return Path(out_dir) / f"ckpt_{step:07d}"


def save_checkpoint(trainer: Trainer, stem, step: int, extra: dict | None = None) -> Path:
    arrays = {f"gen/{k}": v for k, v in trainer.model.state_dict().items()}
    arrays.update({f"critic/{k}": v for k, v in trainer.critics.state_dict().items()})
    arrays.update(trainer.opt_g.state_arrays("opt_g"))
    arrays.update(trainer.opt_d.state_arrays("opt_d"))
    meta = {
        "step": step,
        "opt_g_step": trainer.opt_g.state.step,
        "opt_d_step": trainer.opt_d.state.step,
        "d_updates": {str(k): v for k, v in trainer.d_updates.items()},
        "denoiser": trainer.model.cfg.to_dict(),
        "train": trainer.cfg.to_dict(),
    }
    meta.update(extra or {})
    return G.save_arrays(stem, arrays, meta)


def load_checkpoint(trainer: Trainer, stem) -> int:
    arrays, meta = G.load_arrays(stem)
    trainer.model.load_state_dict({k[4:]: v for k, v in arrays.items() if k.startswith("gen/")})
    critic_state = {k[7:]: v for k, v in arrays.items() if k.startswith("critic/")}
    if critic_state:
        trainer.critics.load_state_dict(critic_state)
    trainer.opt_g.load_state_arrays(arrays, "opt_g", int(meta.get("opt_g_step", 0)))
    trainer.opt_d.load_state_arrays(arrays, "opt_d", int(meta.get("opt_d_step", 0)))
    trainer.d_updates = {int(k): int(v) for k, v in meta.get("d_updates", {}).items()} or trainer.d_updates
    return int(meta["step"])


def load_denoiser(stem) -> Denoiser:
    """Rebuild the generator alone from a checkpoint."""
    arrays, meta = G.load_arrays(stem)
    model = Denoiser(DenoiserConfig.from_dict(meta["denoiser"]))
    model.load_state_dict({k[4:]: v for k, v in arrays.items() if k.startswith("gen/")})
    return model


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------
@dataclass
class TrainResult:
    final_step: int
    checkpoints: list
    reports: list
    d_updates: dict


def run_training(cfg: TrainConfig, clips: Sequence[Clip], out_dir, model_cfg: DenoiserConfig = DenoiserConfig(),
                 critic_cfg: CriticConfig = CriticConfig(), resume=None, stop_at: int | None = None,
                 log_every: int = 50) -> TrainResult:
    """Train from step 0 (or from ``resume``) to ``cfg.total_steps`` (or ``stop_at``)."""
    if not clips:
        raise ValueError("empty dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(cfg, Denoiser(model_cfg), CriticEnsemble(critic_cfg))
    loss_log_path = out_dir / "loss_log.csv"
    start = 0
    if resume is not None:
        start = load_checkpoint(trainer, resume)
        if loss_log_path.exists():
            LossLog(loss_log_path).truncate_after(start - 1)
    elif loss_log_path.exists():
        loss_log_path.unlink()
    loss_log = LossLog(loss_log_path)

    end = cfg.total_steps if stop_at is None else min(stop_at, cfg.total_steps)
    checkpoints, reports = [], []
    for step in range(start, end):
        stage = cfg.stage(step)
        rng = derive_rng(cfg.seed, "step", step)
        trainer.opt_g.lr = trainer.opt_d.lr = cfg.lr_at(step)
        crop = cfg.clip_samples_short if stage < 3 else cfg.clip_samples_long
        idx = batch_indices(len(clips), cfg.batch_size, step, cfg.seed)
        x, mel = make_batch(clips, idx, crop, rng)
        report = trainer.train_step(x, mel, stage, step, rng)
        loss_log.append(step, stage, report)
        reports.append(report)
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d stage %d l_diff %.5f l_s %.5f l_adv_g %.4f l_adv_d %.4f",
                     step + 1, stage, report.l_diff, report.l_s, report.l_adv_g, report.l_adv_d)
        done = step + 1
        if done % cfg.checkpoint_every == 0 or done == end:
            try:
                checkpoints.append(save_checkpoint(trainer, checkpoint_stem(out_dir, done), done))
            except OSError as exc:
                raise OSError(f"checkpoint write failed at step {done}: {exc}") from exc
    return TrainResult(end, checkpoints, reports, dict(trainer.d_updates))
