"""Objective evaluation: F0 tracking, MCD, V/UV error, F0 correlation, NDB/JSD, RTF."""
from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct
from scipy.stats import norm
from sklearn.cluster import KMeans

from .dsp import HOP, SAMPLE_RATE, MelCondition, Waveform, mel_condition

F0_FRAME = 1024
F0_MIN, F0_MAX = 50.0, 500.0
VOICING_THRESHOLD = 0.3
N_CEPSTRA = 13
MCD_SCALE = 10.0 / math.log(10.0)


@dataclass
class F0Track:
    f0: np.ndarray      # Hz per frame, 0 where unvoiced
    voiced: np.ndarray  # bool per frame
    hop: int = HOP

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0.shape != self.voiced.shape:
            raise ValueError("f0 and voiced flags differ in length")

    def __len__(self):
        return self.f0.size


def _samples(w) -> tuple[np.ndarray, int]:
    if isinstance(w, Waveform):
        return w.samples, w.sample_rate
    return np.asarray(w, dtype=np.float64).reshape(-1), SAMPLE_RATE


def extract_f0(w, sample_rate: int | None = None, threshold: float = VOICING_THRESHOLD,
               fmin: float = F0_MIN, fmax: float = F0_MAX) -> F0Track:
    """Normalized-autocorrelation pitch tracker, one estimate per 256-sample hop.

    Each 1024-sample frame is centred on its hop block. The lag is the first
    local peak reaching 90% of the best normalized correlation in the
    fmin..fmax range, refined by parabolic interpolation; the frame is voiced
    when that correlation is at least ``threshold``.
    """
    x, sr = _samples(w)
    sr = sample_rate or sr
    if x.size < F0_FRAME:
        raise ValueError(f"need at least {F0_FRAME} samples for F0 extraction, got {x.size}")
    n_frames = -(-x.size // HOP)
    left = (F0_FRAME - HOP) // 2
    right = (n_frames - 1) * HOP + F0_FRAME - x.size - left
    xp = np.pad(x, (left, max(right, 0)))
    idx = np.arange(n_frames)[:, None] * HOP + np.arange(F0_FRAME)[None, :]
    fr = xp[idx]
    fr = fr - fr.mean(axis=1, keepdims=True)

    lag_lo = int(math.floor(sr / fmax))
    lag_hi = int(math.ceil(sr / fmin))
    nfft = 1 << (2 * F0_FRAME - 1).bit_length()
    spec = np.fft.rfft(fr, nfft, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, : lag_hi + 2]
    sq = np.cumsum(fr * fr, axis=1)
    total = sq[:, -1:]
    lags = np.arange(lag_hi + 2)
    head = sq[:, F0_FRAME - 1 - lags]                       # energy of x[0 : N - lag]
    tail = total - np.concatenate([np.zeros((n_frames, 1)), sq[:, lags[1:] - 1]], axis=1)  # x[lag : N]
    denom = np.sqrt(np.maximum(head * tail, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 1e-12, acf / denom, 0.0)

    f0 = np.zeros(n_frames)
    voiced = np.zeros(n_frames, dtype=bool)
    for i in range(n_frames):
        if total[i, 0] < 1e-10:
            continue
        seg = r[i, lag_lo:lag_hi + 1]
        best = seg.max()
        if best < threshold:
            continue
        # first local maximum within 10% of the best, to avoid octave-down errors
        lag = None
        for j in range(1, seg.size - 1):
            if seg[j] >= 0.9 * best and seg[j] >= seg[j - 1] and seg[j] >= seg[j + 1]:
                lag = lag_lo + j
                break
        if lag is None:
            lag = lag_lo + int(np.argmax(seg))
        a, b, c = r[i, lag - 1], r[i, lag], r[i, lag + 1]
        curv = a - 2 * b + c
        shift = 0.5 * (a - c) / curv if curv < 0 else 0.0
        period = lag + float(np.clip(shift, -0.5, 0.5))
        est = sr / period
        if fmin <= est <= fmax:
            f0[i] = est
            voiced[i] = True
    return F0Track(f0, voiced)


# ---------------------------------------------------------------------------
# MCD
# ---------------------------------------------------------------------------
def mel_cepstrum(cond: MelCondition, n_coeffs: int = N_CEPSTRA) -> np.ndarray:
    """Orthonormal DCT-II of each log-mel frame, keeping coefficients 1..n (c0 dropped)."""
    return dct(np.asarray(cond.frames, dtype=np.float64), type=2, norm="ortho", axis=1)[:, 1:n_coeffs + 1]


def mcd_from_cepstra(ca: np.ndarray, cb: np.ndarray) -> float:
    if ca.shape != cb.shape:
        raise ValueError(f"cepstra shape mismatch {ca.shape} vs {cb.shape}")
    diff = ca - cb
    return float(np.mean(MCD_SCALE * np.sqrt(2.0 * np.sum(diff * diff, axis=1))))


def mcd(w_a, w_b) -> float:
    """Frame-aligned mel-cepstral distortion in dB (no time warping)."""
    xa, _ = _samples(w_a)
    xb, _ = _samples(w_b)
    if xa.size != xb.size:
        raise ValueError(f"length mismatch: {xa.size} vs {xb.size}")
    return mcd_from_cepstra(mel_cepstrum(mel_condition(xa)), mel_cepstrum(mel_condition(xb)))


# ---------------------------------------------------------------------------
# V/UV and F0 correlation
# ---------------------------------------------------------------------------
def vuv_error(t_a: F0Track, t_b: F0Track) -> float:
    if len(t_a) != len(t_b):
        raise ValueError(f"frame count mismatch: {len(t_a)} vs {len(t_b)}")
    return float(np.mean(t_a.voiced != t_b.voiced))


def f0_corr(t_a: F0Track, t_b: F0Track) -> float:
    if len(t_a) != len(t_b):
        raise ValueError(f"frame count mismatch: {len(t_a)} vs {len(t_b)}")
    both = t_a.voiced & t_b.voiced
    if both.sum() < 2:
        raise ValueError("fewer than 2 jointly voiced frames")
    a, b = t_a.f0[both], t_b.f0[both]
    if np.std(a) == 0 and np.std(b) == 0:
        return 1.0 if np.allclose(a, b) else 0.0
    if np.std(a) == 0 or np.std(b) == 0:
        return 0.0
    return float(np.clip(np.corrcoef(a, b)[0, 1], -1.0, 1.0))


# ---------------------------------------------------------------------------
# NDB / JSD
# ---------------------------------------------------------------------------
def jensen_shannon(p: np.ndarray, q: np.ndarray, smoothing: float = 1e-12) -> float:
    """Base-2 Jensen-Shannon divergence between two histograms."""
    p = np.asarray(p, dtype=np.float64) + smoothing
    q = np.asarray(q, dtype=np.float64) + smoothing
    p, q = p / p.sum(), q / q.sum()
    m = 0.5 * (p + q)
    jsd = 0.5 * np.sum(p * np.log2(p / m)) + 0.5 * np.sum(q * np.log2(q / m))
    return float(max(jsd, 0.0))


def different_bins(real_counts: np.ndarray, fake_counts: np.ndarray, alpha: float = 0.05) -> np.ndarray:
    """Two-sided two-proportion z-test per bin; True where equality is rejected at ``alpha``."""
    n_r, n_f = real_counts.sum(), fake_counts.sum()
    p_r, p_f = real_counts / n_r, fake_counts / n_f
    pooled = (real_counts + fake_counts) / (n_r + n_f)
    se = np.sqrt(pooled * (1 - pooled) * (1.0 / n_r + 1.0 / n_f))
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(se > 0, (p_r - p_f) / se, 0.0)
    return np.abs(z) > norm.ppf(1 - alpha / 2)


def ndb_jsd(real_frames: np.ndarray, fake_frames: np.ndarray, k: int = 50, alpha: float = 0.05,
            seed: int = 0) -> tuple[int, float]:
    """Bin frame-level feature vectors with k-means fitted on the real set; compare occupancies."""
    real = np.asarray(real_frames, dtype=np.float64)
    fake = np.asarray(fake_frames, dtype=np.float64)
    if real.size == 0 or fake.size == 0:
        raise ValueError("both frame sets must be non-empty")
    if k > real.shape[0]:
        raise ValueError(f"k={k} exceeds the number of real frames ({real.shape[0]})")
    km = KMeans(n_clusters=k, n_init=1, max_iter=50, random_state=seed).fit(real)
    real_counts = np.bincount(km.predict(real), minlength=k).astype(np.float64)
    fake_counts = np.bincount(km.predict(fake), minlength=k).astype(np.float64)
    ndb = int(different_bins(real_counts, fake_counts, alpha).sum())
    return ndb, jensen_shannon(real_counts / real_counts.sum(), fake_counts / fake_counts.sum())


# ---------------------------------------------------------------------------
# RTF
# ---------------------------------------------------------------------------
def real_time_factor(elapsed_s: float, n_samples: int, sample_rate: int = SAMPLE_RATE) -> float:
    return elapsed_s / (n_samples / sample_rate)


def rtf(f, c: MelCondition, n_steps: int, runs: int = 5, seed: int = 0) -> float:
    """Median wall-clock RTF of ``sample`` over ``runs`` timed runs after one warm-up run."""
    from .diffusion import sample

    sample(f, c, n_steps, seed)
    times = []
    for i in range(runs):
        t0 = time.perf_counter()
        sample(f, c, n_steps, seed + i)
        times.append(time.perf_counter() - t0)
    return real_time_factor(statistics.median(times), HOP * c.num_frames)


# ---------------------------------------------------------------------------
# pairwise report
# ---------------------------------------------------------------------------
def compare_pair(real, fake) -> dict:
    xr, _ = _samples(real)
    xf, _ = _samples(fake)
    tr, tf = extract_f0(xr), extract_f0(xf)
    try:
        corr = f0_corr(tr, tf)
    except ValueError:
        corr = float("nan")
    return {"mcd": mcd(xr, xf), "vuv": vuv_error(tr, tf), "f0corr": corr}
