"""Finite-difference audit of every op, architectural block and composite loss.

Each check builds a small float64 problem, reduces the output to a scalar with
a fixed random projection, and reports the worst relative error from
``grad.grad_check``. Blocks are checked at a perturbed parameter point so that
zero-initialized projections do not hide the gradients flowing through them.
"""
from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

import importlib

from . import grad as G

_T = importlib.import_module("linvoc.grad.tensor")

TOLERANCE = 1e-4
H = 1e-5
DEN_JITTER = 0.02
LOSS_LEN = 512


@dataclass
class CheckResult:
    name: str
    kind: str  # op | block | loss
    rel_err: float
    n_inputs: int
    seconds: float
    probed: int = 0
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.rel_err) and self.rel_err < TOLERANCE)


def _leaf(rng, *shape, positive=False, scale=1.0):
    x = rng.standard_normal(shape) * scale
    if positive:
        x = np.abs(x) + 0.5
    return G.tensor(x, requires_grad=True, dtype=np.float64)


def _project(out: G.Tensor, seed: int = 123) -> G.Tensor:
    """Scalar sum(out * r) for a fixed random r, scaled to keep |f| small."""
    r = np.random.default_rng(seed).standard_normal(out.shape) * 0.1
    return G.sum_(out * G.tensor(r, dtype=out.dtype))


def _jitter(module, rng, scale=0.2):
    for p in module.parameters().values():
        p.data = p.data + scale * rng.standard_normal(p.shape)
    return module


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------
def _op_cases(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    row = _leaf(rng, 4)
    pos = _leaf(rng, 3, 4, positive=True)
    m1, m2 = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
    bm1, bm2 = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 2)
    x1 = _leaf(rng, 2, 4, 11)
    w1, b1 = _leaf(rng, 6, 2, 3), _leaf(rng, 6)
    x2, w2, b2 = _leaf(rng, 2, 2, 5, 7), _leaf(rng, 3, 2, 3, 2), _leaf(rng, 3)
    seq = _leaf(rng, 2, 12)
    return {
        "add": (lambda: _project(a + row), [a, row]),
        "mul": (lambda: _project(a * b), [a, b]),
        "neg_sub": (lambda: _project(a - b * 2.0), [a, b]),
        "reciprocal": (lambda: _project(G.reciprocal(pos)), [pos]),
        "matmul": (lambda: _project(G.matmul(m1, m2)), [m1, m2]),
        "matmul_batched": (lambda: _project(G.matmul(bm1, bm2)), [bm1, bm2]),
        "conv1d": (lambda: _project(G.conv1d(x1, w1, b1, stride=2, padding=2, dilation=2, groups=2)), [x1, w1, b1]),
        "conv2d": (lambda: _project(G.conv2d(x2, w2, b2, stride=(2, 1), padding=(1, 0))), [x2, w2, b2]),
        "transpose": (lambda: _project(G.transpose(m1, (2, 0, 1))), [m1]),
        "reshape": (lambda: _project(G.reshape(m1, (6, 4)) * G.reshape(m1, (6, 4))), [m1]),
        "slice": (lambda: _project(m1[:, 1:, ::2] * 3.0), [m1]),
        "concat": (lambda: _project(G.concat([a, b * b], axis=1)), [a, b]),
        "stack": (lambda: _project(G.stack([a, b], axis=0) * G.stack([b, a], axis=0)), [a, b]),
        "pad1d_reflect": (lambda: _project(G.square(G.pad1d(seq, 3, 2, mode="reflect"))), [seq]),
        "mean": (lambda: _project(G.square(G.mean(m1, axis=1))), [m1]),
        "sum": (lambda: _project(G.square(G.sum_(m1, axis=(0, 2)))), [m1]),
        "square": (lambda: _project(G.square(a)), [a]),
        "sqrt": (lambda: _project(G.sqrt(pos)), [pos]),
        "exp": (lambda: _project(G.exp(a)), [a]),
        "log": (lambda: _project(G.log(pos)), [pos]),
        "softmax": (lambda: _project(G.softmax(m1, axis=-1)), [m1]),
        "gelu": (lambda: _project(G.gelu(a)), [a]),
        "leaky_relu": (lambda: _project(G.leaky_relu(a, 0.2)), [a]),
        "layer_norm": (lambda: _project(G.layer_norm(m1, axis=-1)), [m1]),
        "avg_pool1d": (lambda: _project(G.square(G.avg_pool1d(seq, 3))), [seq]),
    }


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------
def _tiny_denoiser_cfg():
    from .denoiser import DenoiserConfig

    return DenoiserConfig(patch_size=64, hidden_dim=8, n_layers=1, n_heads=2, step_pe_dim=8,
                          postconv_channels=4, lvc_kernel=3, lvc_layers=2, mlp_ratio=2, seed=3)


def _tiny_critic_cfg():
    from .critics import CriticConfig
    from .dsp import SpectrogramConfig

    return CriticConfig(msd_scales=(1, 2), mpd_periods=(2, 3), spectral_cfg=SpectrogramConfig(64, 64, 16),
                        widths=(3, 4, 4, 4), seed=5)


def _params(module):
    """Parameters to probe. Attention key biases are left out: softmax is invariant to a
    per-query constant shift, so their true gradient is exactly zero and the relative
    error degenerates to finite-difference noise over the 1e-8 floor."""
    return [p for n, p in module.parameters().items() if not n.endswith("k.bias")]


def _block_cases(rng):
    from .critics import PeriodCritic, ScaleCritic, SpectralCritic
    from .denoiser import AiTBlock, Attention, ConvMLP, Denoiser, KernelPredictor, PostConv, TALN
    from .dsp import stft_magnitude

    cfg = _tiny_denoiser_cfg()
    ccfg = _tiny_critic_cfg()
    mrng = np.random.default_rng(11)
    Hd = cfg.hidden_dim
    tokens, mel_h, t_emb = _leaf(rng, 2, 4, Hd), _leaf(rng, 2, 3, Hd), _leaf(rng, 2, Hd)
    taln = _jitter(TALN(mrng, Hd), mrng)
    self_attn = _jitter(Attention(mrng, Hd, 2), mrng)
    cross_attn = _jitter(Attention(mrng, Hd, 2), mrng)
    mlp = _jitter(ConvMLP(mrng, Hd, 2), mrng)
    block = _jitter(AiTBlock(mrng, cfg), mrng)
    kp = _jitter(KernelPredictor(mrng, Hd, 4, 3), mrng)
    post = _jitter(PostConv(mrng, cfg), mrng)
    coarse, mel_h1 = _leaf(rng, 1, 256, scale=0.5), _leaf(rng, 1, 1, Hd)
    den = _jitter(Denoiser(cfg), mrng, 0.1)
    x_t, mel = rng.standard_normal((1, 512)), rng.standard_normal((1, 2, 80))
    wave = _leaf(rng, 2, 256, scale=0.5)
    spec_c = _jitter(SpectralCritic(mrng, ccfg), mrng, 0.05)
    scale_c = _jitter(ScaleCritic(mrng, 2, ccfg.widths), mrng, 0.05)
    period_c = _jitter(PeriodCritic(mrng, 3, ccfg.widths), mrng, 0.05)
    from .dsp import SpectrogramConfig

    stft_cfg = SpectrogramConfig(64, 48, 16)
    return {
        "stft_magnitude": (lambda: _project(stft_magnitude(wave, stft_cfg, normalized=True)), [wave]),
        "taln": (lambda: _project(taln(tokens, t_emb)), [tokens, t_emb] + _params(taln)),
        "self_attention": (lambda: _project(self_attn(tokens, tokens)), [tokens] + _params(self_attn)),
        "cross_attention": (lambda: _project(cross_attn(tokens, mel_h)), [tokens, mel_h] + _params(cross_attn)),
        "conv_mlp": (lambda: _project(mlp(tokens)), [tokens] + _params(mlp)),
        "ait_block": (lambda: _project(block(tokens, mel_h, t_emb)), [tokens, mel_h, t_emb] + _params(block)),
        "kernel_predictor": (lambda: _project(G.concat([k.reshape(2, -1) for k in kp(mel_h, t_emb)], axis=1)),
                             [mel_h, t_emb] + _params(kp)),
        "lvc_postconv": (lambda: _project(post(coarse, mel_h1, t_emb[0:1])), [coarse, mel_h1] + _params(post)),
        "denoiser": (lambda: _project(den(x_t, mel, [500])), _params(den)),
        "spectral_critic": (lambda: _project(spec_c(wave)), [wave] + _params(spec_c)),
        "scale_critic": (lambda: _project(scale_c(wave)), [wave] + _params(scale_c)),
        "period_critic": (lambda: _project(period_c(wave)), [wave] + _params(period_c)),
    }


# ---------------------------------------------------------------------------
# composite losses
# ---------------------------------------------------------------------------
def _loss_cases(rng):
    from .critics import CriticEnsemble
    from .denoiser import Denoiser
    from .diffusion import make_training_pair
    from .losses import (StftBank, adv_loss_discriminator, adv_loss_generator, diffusion_loss, stft_mse,
                         total_generator_loss)

    mrng = np.random.default_rng(17)
    # a small, smooth operating point keeps leaky-ReLU kinks in the critics away from the probes
    den = _jitter(Denoiser(_tiny_denoiser_cfg()), mrng, DEN_JITTER)
    critics = _jitter(CriticEnsemble(_tiny_critic_cfg()), mrng, 0.05)
    x_data = 0.5 * np.sin(np.arange(LOSS_LEN) * 0.2)[None]
    mel = rng.standard_normal((1, LOSS_LEN // 256, 80))
    x_t, t, _ = make_training_pair(x_data, np.random.default_rng(0))
    stft_cfg = StftBank().configs[0]
    target = G.tensor(x_data, dtype=np.float64)

    def l_gen():
        x_hat = den(x_t, mel, t)
        l_adv = adv_loss_generator(critics(x_hat))
        return total_generator_loss(l_adv, stft_mse(x_hat, target, stft_cfg), diffusion_loss(x_hat, target), 3)

    fake = _leaf(rng, 1, LOSS_LEN, scale=0.3)

    def l_disc():
        return adv_loss_discriminator(critics(G.detach(fake)), critics(target))

    return {
        "generator_loss": (l_gen, _params(den)),
        "discriminator_loss": (l_disc, _params(critics)),
    }


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------
def all_checks(seed: int = 0) -> dict[str, tuple[str, Callable, list]]:
    """name -> (kind, f, inputs). Built under 64-bit precision."""
    rng = np.random.default_rng(seed)
    out = {}
    with G.precision(np.float64):
        for kind, cases in (("op", _op_cases(rng)), ("block", _block_cases(rng)), ("loss", _loss_cases(rng))):
            for name, (f, inputs) in cases.items():
                out[name] = (kind, f, inputs)
    return out


def run_checks(names=None, max_probes: int = 4, seed: int = 0) -> list[CheckResult]:
    checks = all_checks(seed)
    if names:
        unknown = set(names) - set(checks)
        if unknown:
            raise KeyError(f"unknown checks: {sorted(unknown)}")
    results = []
    with G.precision(np.float64):
        for name, (kind, f, inputs) in checks.items():
            if names and name not in names:
                continue
            t0 = time.perf_counter()
            stats = {}
            try:
                err = G.grad_check(f, inputs, h=H, max_probes=max_probes, seed=seed, stats=stats)
            except G.GradError:
                err = float("inf")
            if not stats.get("probed"):
                err = float("inf")  # nothing was actually compared
            results.append(CheckResult(name, kind, err, len(inputs), time.perf_counter() - t0,
                                       stats.get("probed", 0), stats.get("skipped", 0) + stats.get("unresolved", 0)))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'check':<22} {'kind':<6} {'inputs':>6} {'probes':>6} {'skipped':>7} {'max rel err':>12} "
             f"{'time s':>7}  status"]
    for r in results:
        lines.append(f"{r.name:<22} {r.kind:<6} {r.n_inputs:>6} {r.probed:>6} {r.skipped:>7} {r.rel_err:>12.3e} "
                     f"{r.seconds:>7.2f}  "
                     f"{'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# self-test fixture
# ---------------------------------------------------------------------------
@contextlib.contextmanager
def corrupted_rule(op_name: str, factor: float = 1.5):
    """Temporarily scale the backward rule of ``op_name`` by ``factor`` (forward unchanged)."""
    from . import grad as pkg

    original = getattr(_T, op_name)

    def broken(*args, **kwargs):
        out = original(*args, **kwargs)
        return _T._record(out.data, (out,), lambda g: (g * factor,))

    had_pkg = hasattr(pkg, op_name)
    setattr(_T, op_name, broken)
    if had_pkg:
        setattr(pkg, op_name, broken)
    try:
        yield
    finally:
        setattr(_T, op_name, original)
        if had_pkg:
            setattr(pkg, op_name, original)
