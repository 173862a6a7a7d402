"""Patch-token Transformer denoiser f(x_t, mel, t) -> predicted clean waveform.

Pipeline: patchify the noisy waveform into 64-sample tokens, embed them, run
``n_layers`` blocks of (time-adaptive LN -> self-attention, time-adaptive LN ->
cross-attention onto mel hidden frames, time-adaptive LN -> conv MLP), project
tokens back to samples and refine the waveform with a location-variable
convolution post-net whose kernels are predicted per mel frame.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import grad as G
from .dsp import HOP, N_MELS, MelCondition
from .grad import Tensor
from .nn import Conv1d, Linear, Module, sinusoid

STEP_PE_DIM = 128


class TokenOverflow(ValueError):
    pass


@dataclass(frozen=True)
class DenoiserConfig:
    patch_size: int = 64
    hidden_dim: int = 256
    n_layers: int = 4
    n_heads: int = 4
    step_pe_dim: int = STEP_PE_DIM
    postconv_channels: int = 32
    lvc_kernel: int = 3
    lvc_layers: int = 2
    max_tokens: int = 3600
    mlp_ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim % self.n_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}")
        if HOP % self.patch_size:
            raise ValueError(f"patch_size {self.patch_size} must divide {HOP}")
        if self.step_pe_dim % 2:
            raise ValueError("step_pe_dim must be even")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> DenoiserConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: int(v) for k, v in d.items() if k in names})


# ---------------------------------------------------------------------------
# patching and encodings
# ---------------------------------------------------------------------------
def patchify(x, patch_size: int):
    """(..., L) -> (..., L / patch_size, patch_size); works on arrays and tensors."""
    L = x.shape[-1]
    if L % patch_size:
        raise ValueError(f"length {L} is not divisible by patch size {patch_size}")
    return x.reshape(tuple(x.shape[:-1]) + (L // patch_size, patch_size))


def depatchify(tokens):
    return tokens.reshape(tuple(tokens.shape[:-2]) + (tokens.shape[-2] * tokens.shape[-1],))


def step_encoding(t_index, dim: int = STEP_PE_DIM) -> np.ndarray:
    """pe[2i] = sin(t / 10000^(2i/dim)), pe[2i+1] = cos(t / 10000^(2i/dim)); one row per index."""
    t = np.atleast_1d(np.asarray(t_index))
    if np.any(t < 0):
        raise ValueError(f"negative step index {t_index}")
    return sinusoid(t, dim)


def token_positions(n_tokens: int) -> np.ndarray:
    return np.arange(n_tokens, dtype=np.float64)


def frame_positions(n_frames: int, patch_size: int) -> np.ndarray:
    """Mel frame centres expressed on the token axis (frame j covers samples [256j, 256j+256))."""
    per = HOP / patch_size
    return np.arange(n_frames) * per + (per - 1) / 2


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------
class StepEmbedding(Module):
    def __init__(self, rng, pe_dim: int, hidden: int):
        self.pe_dim = pe_dim
        self.proj = Linear(rng, pe_dim, hidden)

    def encode(self, t_index) -> np.ndarray:
        return step_encoding(t_index, self.pe_dim)

    def __call__(self, t_index) -> Tensor:
        pe = G.tensor(self.encode(t_index), dtype=self.proj.weight.dtype)
        return self.proj(pe)


class TALN(Module):
    """g(t_emb) * LN(x) + b(t_emb); g starts at 1 and b at 0."""

    def __init__(self, rng, hidden: int):
        self.scale = Linear(rng, hidden, hidden, zero=True)
        self.scale.bias.data[:] = 1.0
        self.shift = Linear(rng, hidden, hidden, zero=True)

    def __call__(self, x: Tensor, t_emb: Tensor) -> Tensor:
        if x.shape[-1] != t_emb.shape[-1]:
            raise ValueError(f"TALN dim mismatch {x.shape} vs {t_emb.shape}")
        g = self.scale(t_emb).reshape(t_emb.shape[0], 1, -1)
        b = self.shift(t_emb).reshape(t_emb.shape[0], 1, -1)
        return G.layer_norm(x, axis=-1) * g + b


class Attention(Module):
    def __init__(self, rng, hidden: int, n_heads: int, kv_dim: int | None = None):
        kv_dim = kv_dim or hidden
        self.n_heads = n_heads
        self.q = Linear(rng, hidden, hidden)
        self.k = Linear(rng, kv_dim, hidden)
        self.v = Linear(rng, kv_dim, hidden)
        self.out = Linear(rng, hidden, hidden, zero=True)
        self.last_weights: np.ndarray | None = None

    def _heads(self, x: Tensor) -> Tensor:
        B, N, H = x.shape
        return x.reshape(B, N, self.n_heads, H // self.n_heads).transpose(0, 2, 1, 3)

    def __call__(self, query: Tensor, context: Tensor) -> Tensor:
        B, N, H = query.shape
        q, k, v = self._heads(self.q(query)), self._heads(self.k(context)), self._heads(self.v(context))
        scores = G.matmul(q, G.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(H // self.n_heads))
        weights = G.softmax(scores, axis=-1)
        self.last_weights = weights.data
        mixed = G.matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, N, H)
        return self.out(mixed)


class ConvMLP(Module):
    """Two kernel-3 convolutions over the token axis with a GELU between."""

    def __init__(self, rng, hidden: int, ratio: int):
        self.up = Conv1d(rng, hidden, hidden * ratio, 3)
        self.down = Conv1d(rng, hidden * ratio, hidden, 3, zero=True)

    def __call__(self, x: Tensor) -> Tensor:
        h = G.swapaxes(x, 1, 2)
        h = self.down(G.gelu(self.up(h)))
        return G.swapaxes(h, 1, 2)


class AiTBlock(Module):
    def __init__(self, rng, cfg: DenoiserConfig):
        H = cfg.hidden_dim
        self.max_tokens = cfg.max_tokens
        self.norm_self = TALN(rng, H)
        self.self_attn = Attention(rng, H, cfg.n_heads)
        self.norm_cross = TALN(rng, H)
        self.cross_attn = Attention(rng, H, cfg.n_heads)
        self.norm_mlp = TALN(rng, H)
        self.mlp = ConvMLP(rng, H, cfg.mlp_ratio)

    def __call__(self, tokens: Tensor, mel_hidden: Tensor, t_emb: Tensor) -> Tensor:
        if tokens.shape[1] > self.max_tokens:
            raise TokenOverflow(f"{tokens.shape[1]} tokens exceed max_tokens={self.max_tokens}")
        h = self.norm_self(tokens, t_emb)
        tokens = tokens + self.self_attn(h, h)
        tokens = tokens + self.cross_attn(self.norm_cross(tokens, t_emb), mel_hidden)
        tokens = tokens + self.mlp(self.norm_mlp(tokens, t_emb))
        return tokens


class KernelPredictor(Module):
    """Per-frame LVC kernels and biases from mel hidden frames plus the step embedding."""

    def __init__(self, rng, hidden: int, channels: int, kernel: int):
        self.channels, self.kernel = channels, kernel
        self.cond = Linear(rng, hidden, hidden)
        self.step = Linear(rng, hidden, hidden, bias=False)
        self.to_kernel = Linear(rng, hidden, channels * channels * kernel)
        self.to_bias = Linear(rng, hidden, channels)

    def __call__(self, mel_hidden: Tensor, t_emb: Tensor) -> tuple[Tensor, Tensor]:
        B, F, H = mel_hidden.shape
        h = G.gelu(self.cond(mel_hidden) + self.step(t_emb).reshape(B, 1, H))
        C, K = self.channels, self.kernel
        kernels = self.to_kernel(h) * (1.0 / np.sqrt(C * K))
        return kernels.reshape(B, F, K * C, C), self.to_bias(h).reshape(B, F, 1, C)


def taps(x: Tensor, kernel: int, dilation: int = 1) -> Tensor:
    """Stack the ``kernel`` dilated neighbours of every position: (B, L, C) -> (B, L, kernel*C), tap-major.

    Zero padding keeps the length, so ``taps(x) @ W`` is a same-padded 1-D convolution in
    channels-last layout.
    """
    if kernel == 1:
        return x
    L = x.shape[1]
    total = dilation * (kernel - 1)
    xp = G.pad1d(x, total // 2, total - total // 2, axis=1)
    return G.concat([xp[:, k * dilation:k * dilation + L] for k in range(kernel)], axis=-1)


def lvc(x: Tensor, kernels: Tensor, bias: Tensor, hop: int = HOP, dilation: int = 1) -> Tensor:
    """Location-variable convolution: frame f's kernel filters samples [f*hop, (f+1)*hop).

    x: (B, L, C_in) with L = F * hop; kernels: (B, F, K * C_in, C_out), tap-major;
    bias: (B, F, 1, C_out). Returns (B, L, C_out).
    """
    B, L, C = x.shape
    _, F, KC, C_out = kernels.shape
    K = KC // C
    if L != F * hop or KC != K * C:
        raise ValueError(f"lvc shape mismatch: x {x.shape}, kernels {kernels.shape}, hop {hop}")
    windows = taps(x, K, dilation).reshape(B, F, hop, KC)
    out = G.matmul(windows, kernels) + bias  # (B, F, hop, C_out)
    return out.reshape(B, L, C_out)


class TapConv(Module):
    """Same-padded 1-D convolution on channels-last input, weight laid out (K * C_in, C_out)."""

    def __init__(self, rng, c_in: int, c_out: int, kernel: int = 3, dilation: int = 1, zero: bool = False):
        self.kernel, self.dilation = kernel, dilation
        self.proj = Linear(rng, kernel * c_in, c_out, zero=zero)

    def __call__(self, x: Tensor) -> Tensor:
        return self.proj(taps(x, self.kernel, self.dilation))


class PostConv(Module):
    """Conv in, ``lvc_layers`` x (LVC -> leaky ReLU -> conv, residual), conv out, plus the input.

    Runs at waveform rate in channels-last layout.
    """

    def __init__(self, rng, cfg: DenoiserConfig):
        C, K = cfg.postconv_channels, cfg.lvc_kernel
        self.inp = TapConv(rng, 1, C, 3)
        self.predictors = [KernelPredictor(rng, cfg.hidden_dim, C, K) for _ in range(cfg.lvc_layers)]
        self.convs = [TapConv(rng, C, C, 3) for _ in range(cfg.lvc_layers)]
        self.out = TapConv(rng, C, 1, 3, zero=True)

    def __call__(self, y: Tensor, mel_hidden: Tensor, t_emb: Tensor) -> Tensor:
        B, L = y.shape
        h = self.inp(y.reshape(B, L, 1))
        for i, (predict, conv) in enumerate(zip(self.predictors, self.convs)):
            kernels, bias = predict(mel_hidden, t_emb)
            h = h + conv(G.leaky_relu(lvc(h, kernels, bias, dilation=2 ** i), 0.2))
        return y + self.out(G.leaky_relu(h, 0.2)).reshape(B, L)


class Denoiser(Module):
    def __init__(self, cfg: DenoiserConfig = DenoiserConfig()):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        H, P = cfg.hidden_dim, cfg.patch_size
        self.step_embed = StepEmbedding(rng, cfg.step_pe_dim, H)
        self.patch_embed = Linear(rng, P, H)
        self.mel_proj = Linear(rng, N_MELS, H)
        self.blocks = [AiTBlock(rng, cfg) for _ in range(cfg.n_layers)]
        self.norm_out = TALN(rng, H)
        self.depatch = Linear(rng, H, P)
        self.post_conv = PostConv(rng, cfg)

    # -- pieces exposed for inspection ---------------------------------------
    def embed_mel(self, mel: Tensor) -> Tensor:
        pos = sinusoid(frame_positions(mel.shape[1], self.cfg.patch_size), self.cfg.hidden_dim)
        return self.mel_proj(mel) + G.tensor(pos, dtype=mel.dtype)

    def embed_tokens(self, x_t: Tensor) -> Tensor:
        tokens = patchify(x_t, self.cfg.patch_size)
        if tokens.shape[1] > self.cfg.max_tokens:
            raise TokenOverflow(f"{tokens.shape[1]} tokens exceed max_tokens={self.cfg.max_tokens}")
        pos = sinusoid(token_positions(tokens.shape[1]), self.cfg.hidden_dim)
        return self.patch_embed(tokens) + G.tensor(pos, dtype=x_t.dtype)

    def forward(self, x_t, mel, t_index, return_coarse: bool = False):
        """x_t: (B, L); mel: (B, F, 80); t_index: (B,) integer steps. Returns (B, L)."""
        dtype = self.patch_embed.weight.dtype
        x_t = x_t if isinstance(x_t, Tensor) else G.tensor(x_t, dtype=dtype)
        mel = mel if isinstance(mel, Tensor) else G.tensor(mel, dtype=dtype)
        if x_t.ndim != 2 or mel.ndim != 3 or mel.shape[-1] != N_MELS:
            raise ValueError(f"expected x_t (B, L) and mel (B, F, {N_MELS}); got {x_t.shape}, {mel.shape}")
        if x_t.shape[1] != HOP * mel.shape[1] or x_t.shape[0] != mel.shape[0]:
            raise ValueError(f"waveform length {x_t.shape[1]} != {HOP} x {mel.shape[1]} mel frames")
        t_index = np.broadcast_to(np.asarray(t_index), (x_t.shape[0],))
        t_emb = self.step_embed(t_index)
        tokens = self.embed_tokens(x_t)
        mel_hidden = self.embed_mel(mel)
        for block in self.blocks:
            tokens = block(tokens, mel_hidden, t_emb)
        coarse = depatchify(self.depatch(self.norm_out(tokens, t_emb)))
        out = self.post_conv(coarse, mel_hidden, t_emb)
        return (out, coarse) if return_coarse else out

    __call__ = forward

    def predict(self, x_t: np.ndarray, cond: MelCondition, t_index: int) -> np.ndarray:
        """Single-clip inference without graph recording (fits the sampler's denoiser signature)."""
        with G.no_grad():
            out = self.forward(np.asarray(x_t)[None], np.asarray(cond.frames)[None], [t_index])
        return out.data[0].astype(np.float64)
