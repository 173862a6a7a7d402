"""Signal-processing primitives: STFT, mel filterbank, log-mel conditioning, WAV I/O."""
from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .grad import Tensor, add, conv1d, pad1d, sqrt, square, tensor

SAMPLE_RATE = 22050
HOP = 256
N_MELS = 80
LOG_FLOOR = 1e-5


class WavFormatError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size == 0:
            raise ValueError("empty waveform")
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class SpectrogramConfig:
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = HOP
    window: str = "hann"

    def __post_init__(self):
        if self.hop_length < 1:
            raise ValueError("hop_length must be >= 1")
        if self.win_length > self.n_fft or self.win_length < 1:
            raise ValueError(f"win_length {self.win_length} must be in [1, n_fft={self.n_fft}]")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


MEL_CONFIG = SpectrogramConfig(1024, 1024, HOP)


@dataclass
class Spectrogram:
    magnitude: np.ndarray  # (num_frames, n_fft // 2 + 1)


@dataclass
class MelCondition:
    frames: np.ndarray  # (num_frames, 80)
    config: SpectrogramConfig = field(default=MEL_CONFIG)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MELS:
            raise ValueError(f"mel condition must be [frames x {N_MELS}], got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise ValueError("mel condition contains non-finite values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# framing / STFT
# ---------------------------------------------------------------------------
@lru_cache(maxsize=None)
def hann_window(win_length: int, n_fft: int) -> np.ndarray:
    """Periodic Hann window of ``win_length`` centred in an ``n_fft`` frame."""
    n = np.arange(win_length)
    w = 0.5 - 0.5 * np.cos(2 * np.pi * n / win_length)
    out = np.zeros(n_fft)
    left = (n_fft - win_length) // 2
    out[left:left + win_length] = w
    out.setflags(write=False)
    return out


def frame_padding(length: int, cfg: SpectrogramConfig) -> tuple[int, int, int]:
    """(left, right, num_frames) so that num_frames == ceil(length / hop)."""
    num_frames = -(-length // cfg.hop_length)
    left = (cfg.n_fft - cfg.hop_length) // 2
    right = (num_frames - 1) * cfg.hop_length + cfg.n_fft - length - left
    return left, max(right, 0), num_frames


def _check_stft_input(length: int, cfg: SpectrogramConfig):
    if length == 0:
        raise ValueError("empty waveform")
    left, right, _ = frame_padding(length, cfg)
    if max(left, right) >= length:
        raise ValueError(f"waveform of {length} samples is shorter than the n_fft={cfg.n_fft} window")


def frames(x: np.ndarray, cfg: SpectrogramConfig) -> np.ndarray:
    """Reflect-padded, windowed frames of a 1-D signal: (num_frames, n_fft)."""
    x = np.asarray(x, dtype=np.float64)
    _check_stft_input(x.size, cfg)
    left, right, n = frame_padding(x.size, cfg)
    xp = np.pad(x, (left, right), mode="reflect")
    idx = np.arange(n)[:, None] * cfg.hop_length + np.arange(cfg.n_fft)[None, :]
    return xp[idx] * hann_window(cfg.win_length, cfg.n_fft)


def stft(w: Waveform | np.ndarray, cfg: SpectrogramConfig) -> Spectrogram:
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if cfg.hop_length < 1:
        raise ValueError("hop_length must be >= 1")
    return Spectrogram(np.abs(np.fft.rfft(frames(samples, cfg), axis=-1)))


@lru_cache(maxsize=16)
def _dft_kernel(n_fft: int, win_length: int, dtype_name: str) -> np.ndarray:
    n = np.arange(n_fft)
    k = np.arange(n_fft // 2 + 1)
    ang = 2 * np.pi * np.outer(k, n) / n_fft
    win = hann_window(win_length, n_fft)
    basis = np.concatenate([np.cos(ang) * win, -np.sin(ang) * win], axis=0)
    out = basis[:, None, :].astype(dtype_name)
    out.setflags(write=False)
    return out


def stft_magnitude(x: Tensor, cfg: SpectrogramConfig, eps: float = 1e-12, normalized: bool = False) -> Tensor:
    """Differentiable STFT magnitude of a batch ``x`` (B, L) -> (B, n_bins, num_frames).

    Framing and the real DFT are one strided convolution whose kernels are the
    windowed cosine/sine rows of the DFT matrix. ``normalized`` scales the DFT
    by 1/sqrt(n_fft).
    """
    if x.ndim != 2:
        raise ValueError("stft_magnitude expects (batch, samples)")
    _check_stft_input(x.shape[-1], cfg)
    left, right, _ = frame_padding(x.shape[-1], cfg)
    xp = pad1d(x.reshape(x.shape[0], 1, x.shape[-1]), left, right, mode="reflect")
    kernel = tensor(_dft_kernel(cfg.n_fft, cfg.win_length, np.dtype(x.dtype).name), dtype=x.dtype)
    spec = conv1d(xp, kernel, stride=cfg.hop_length)
    if normalized:
        spec = spec * (1.0 / math.sqrt(cfg.n_fft))
    nb = cfg.n_bins
    re, im = spec[:, :nb], spec[:, nb:]
    return sqrt(add(add(square(re), square(im)), eps))


# ---------------------------------------------------------------------------
# mel
# ---------------------------------------------------------------------------
def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def _filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    n_bins = n_fft // 2 + 1
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if n_mels > n_bins:
        raise ValueError(f"n_mels={n_mels} exceeds the {n_bins} available frequency bins")
    bin_hz = np.linspace(0.0, sample_rate / 2, n_bins)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz[None, :] - lower) / (centre - lower)
    falling = (upper - bin_hz[None, :]) / (upper - centre)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = 1024, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular HTK-mel filters spanning 0 .. sample_rate/2, unnormalized: (n_mels, n_fft/2+1)."""
    return _filterbank(n_mels, n_fft, sample_rate).copy()


def mel_condition(w: Waveform | np.ndarray) -> MelCondition:
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    sr = w.sample_rate if isinstance(w, Waveform) else SAMPLE_RATE
    if samples.size == 0 or samples.size % HOP:
        raise ValueError(f"waveform length {samples.size} is not a positive multiple of {HOP}")
    mag = stft(samples, MEL_CONFIG).magnitude
    mel = mag @ _filterbank(N_MELS, MEL_CONFIG.n_fft, sr).T
    return MelCondition(np.log(mel + LOG_FLOOR).astype(np.float32), MEL_CONFIG)


def write_mel(cond: MelCondition, path) -> None:
    """Flat little-endian float32 blob preceded by a ``num_frames n_mels`` header line."""
    data = np.ascontiguousarray(cond.frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(f"{data.shape[0]} {data.shape[1]}\n".encode("ascii"))
        fh.write(data.tobytes())


def read_mel(path) -> MelCondition:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    n_frames, n_mels = (int(v) for v in raw[:nl].split())
    body = np.frombuffer(raw[nl + 1:], dtype="<f4")
    if body.size != n_frames * n_mels:
        raise ValueError(f"mel blob {path}: expected {n_frames * n_mels} values, found {body.size}")
    return MelCondition(body.reshape(n_frames, n_mels).copy())


# ---------------------------------------------------------------------------
# WAV I/O (16-bit PCM mono)
# ---------------------------------------------------------------------------
def quantize(samples: np.ndarray) -> np.ndarray:
    q = np.round(np.asarray(samples, dtype=np.float64) * 32768.0)
    return np.clip(q, -32768, 32767).astype("<i2")


def wav_write(w: Waveform, path) -> None:
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(quantize(w.samples).tobytes())


def wav_read(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            if channels != 1:
                raise WavFormatError(f"unsupported channel count: {channels}")
            if width != 2:
                raise WavFormatError(f"unsupported encoding: {8 * width}-bit samples")
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        if "unknown format" in str(exc):
            raise WavFormatError(f"unsupported encoding in {path}: {exc}") from None
        raise WavFormatError(f"malformed WAV header in {path}: {exc}") from None
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(data, rate)


def pad_to_hop(x: np.ndarray, hop: int = HOP) -> np.ndarray:
    n = math.ceil(x.size / hop) * hop
    return np.pad(x, (0, n - x.size))
