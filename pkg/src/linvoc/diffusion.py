"""Straight-line noise-to-data path and its N-step Euler sampler.

Convention: the reverse-time fraction ``s = t / T`` runs from 0 (pure noise)
to 1 (clean audio), and the state on the path is

    x_t = (1 - s) * x_noise + s * x_data.

The denoiser predicts the clean waveform; the step direction is that
prediction minus the stored initial noise draw.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .dsp import HOP, MelCondition, Waveform

# f(x_t, condition, step_index) -> predicted clean waveform, same shape as x_t
Denoiser = Callable[[np.ndarray, MelCondition, int], np.ndarray]


@dataclass(frozen=True)
class DiffusionState:
    x_t: np.ndarray
    t: int
    x_noise: np.ndarray
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not 0 <= self.t <= self.n_steps:
            raise ValueError(f"step {self.t} outside [0, {self.n_steps}]")
        if np.shape(self.x_t) != np.shape(self.x_noise):
            raise ValueError("x_t and x_noise shapes differ")

    @property
    def done(self) -> bool:
        return self.t == self.n_steps


@dataclass(frozen=True)
class TrainSchedule:
    t_train_max: int = 1000

    def __post_init__(self):
        if self.t_train_max < 1:
            raise ValueError("t_train_max must be >= 1")


def _same_shape(a, b, what: str):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what}: shape mismatch {np.shape(a)} vs {np.shape(b)}")


def interpolate(x_data, x_noise, s):
    """(1 - s) * x_noise + s * x_data; ``s`` may be a scalar or broadcast per row."""
    _same_shape(x_data, x_noise, "interpolate")
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr < 0) or np.any(s_arr > 1):
        raise ValueError(f"fraction s must lie in [0, 1], got {s}")
    if s_arr.ndim:
        s_arr = s_arr.reshape(s_arr.shape + (1,) * (np.ndim(x_data) - s_arr.ndim))
    return (1.0 - s_arr) * x_noise + s_arr * x_data


def velocity(x_hat_data, x_noise):
    _same_shape(x_hat_data, x_noise, "velocity")
    return np.asarray(x_hat_data) - np.asarray(x_noise)


def euler_step(state: DiffusionState, x_hat_data) -> DiffusionState:
    """Advance one step: x_{t+1} = x_t + (x_hat - x_noise) / N."""
    if state.t >= state.n_steps:
        raise ValueError("sampler already reached the final step")
    x_next = state.x_t + velocity(x_hat_data, state.x_noise) / state.n_steps
    return replace(state, x_t=x_next, t=state.t + 1)


def step_embed_index(t: int, n_steps: int, schedule: TrainSchedule = TrainSchedule()) -> int:
    """Map inference step t of N onto the training step grid: round(t / N * T_train)."""
    if not 0 <= t < n_steps:
        raise ValueError(f"step {t} outside [0, {n_steps})")
    return int(math.floor(t / n_steps * schedule.t_train_max + 0.5))


def initial_noise(num_frames: int, seed) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal(HOP * num_frames)


def sample(f: Denoiser, c: MelCondition, n_steps: int, seed,
           schedule: TrainSchedule = TrainSchedule(), clip: bool = True) -> Waveform:
    """Generate a waveform from ``c`` with ``n_steps`` Euler steps along the straight path."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x_noise = initial_noise(c.num_frames, seed)
    state = DiffusionState(x_noise.copy(), 0, x_noise, n_steps)
    while not state.done:
        x_hat = np.asarray(f(state.x_t, c, step_embed_index(state.t, n_steps, schedule)), dtype=np.float64)
        if x_hat.shape != state.x_t.shape:
            raise ValueError(f"denoiser returned shape {x_hat.shape}, expected {state.x_t.shape}")
        state = euler_step(state, x_hat)
    out = np.clip(state.x_t, -1.0, 1.0) if clip else state.x_t
    return Waveform(out)


def make_training_pair(x_data, seed, schedule: TrainSchedule = TrainSchedule()):
    """Draw (x_t, t, x_noise) for a clip (L,) or a batch (B, L); t is uniform in [0, T_train)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x_data = np.asarray(x_data)
    lead = x_data.shape[:-1]
    t = rng.integers(0, schedule.t_train_max, size=lead)
    x_noise = rng.standard_normal(x_data.shape).astype(x_data.dtype, copy=False)
    x_t = interpolate(x_data, x_noise, t / schedule.t_train_max).astype(x_data.dtype, copy=False)
    if not lead:
        t = int(t)
    return x_t, t, x_noise
