"""Command-line entry point: synth-data, train, sample, eval, gradcheck, bench-rtf.

Any config key can be overridden on the command line either as
``--set key=value`` (before the subcommand) or directly as ``--key value``
after it (e.g. ``linvoc train --out run --train.lr 1e-3``).
Log verbosity comes from the ``LINVOC_LOG_LEVEL`` environment variable.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .data import Clip, derive_rng, synth_dataset
from .dsp import (HOP, SAMPLE_RATE, MelCondition, Waveform, WavFormatError, mel_condition, pad_to_hop, quantize,
                  read_mel, wav_read, wav_write, write_mel)

log = logging.getLogger("linvoc")


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------
def write_dataset(clips, out_dir) -> list[dict]:
    """WAV + mel + manifest per clip. The mel is computed from the 16-bit audio actually written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for clip in clips:
        stem = f"clip_{clip.index:04d}"
        q = quantize(clip.samples).astype(np.float64) / 32768.0
        wav_write(Waveform(q), out_dir / f"{stem}.wav")
        write_mel(mel_condition(q), out_dir / f"{stem}.mel")
        entries.append({"name": stem, "wav": f"{stem}.wav", "mel": f"{stem}.mel", "f0": clip.f0,
                        "samples": int(clip.samples.size)})
    return entries


def load_dataset(data_dir) -> list[Clip]:
    """Every ``*.wav`` in ``data_dir`` (sorted), paired with ``<stem>.mel`` when present."""
    data_dir = Path(data_dir)
    wavs = sorted(data_dir.glob("*.wav"))
    if not wavs:
        raise FileNotFoundError(f"no .wav files in {data_dir}")
    clips = []
    for i, path in enumerate(wavs):
        samples = pad_to_hop(wav_read(path).samples)
        mel_path = path.with_suffix(".mel")
        mel = read_mel(mel_path) if mel_path.exists() else mel_condition(samples)
        if mel.num_frames * HOP != samples.size:
            raise ValueError(f"{mel_path}: {mel.num_frames} frames do not match {samples.size} samples")
        clips.append(Clip(samples.astype(np.float32), mel, 0.0, i))
    return clips


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_synth_data(args, cfg: ExperimentConfig) -> int:
    spec = cfg.data
    clips = synth_dataset(spec)
    out = Path(args.out)
    manifest = {"spec": spec.to_dict(), "clips": write_dataset(clips, out)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    print(f"wrote {len(clips)} clips to {out}")
    return 0


def cmd_train(args, cfg: ExperimentConfig) -> int:
    from .train import run_training

    clips = load_dataset(args.data) if args.data else synth_dataset(cfg.data)
    result = run_training(cfg.train, clips, args.out, cfg.model, cfg.critic, resume=args.resume,
                          stop_at=args.stop_at, log_every=args.log_every)
    (Path(args.out) / "config.cfg").write_text(cfg.dumps())
    last = result.reports[-1] if result.reports else None
    print(f"trained to step {result.final_step}; critic updates per stage {result.d_updates}")
    if last is not None:
        print(f"last step: l_diff {last.l_diff:.6f} l_s {last.l_s:.6f} l_gen {last.l_gen:.6f}")
    if result.checkpoints:
        print(f"checkpoint: {result.checkpoints[-1].with_suffix('')}")
    return 0


def cmd_sample(args, cfg: ExperimentConfig) -> int:
    from .diffusion import sample
    from .metrics import real_time_factor
    from .train import load_denoiser

    model = load_denoiser(args.checkpoint)
    cond = read_mel(args.mel)
    t0 = time.perf_counter()
    wav = sample(model.predict, cond, args.steps, args.seed)
    elapsed = time.perf_counter() - t0
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    wav_write(wav, args.out)
    print(f"wrote {args.out}: {len(wav)} samples ({len(wav) / SAMPLE_RATE:.3f} s), "
          f"{args.steps} steps, RTF {real_time_factor(elapsed, len(wav)):.4f}")
    return 0


def evaluate_dirs(real_dir, fake_dir, ndb_k: int = 50, seed: int = 0) -> tuple[list[dict], dict]:
    from .metrics import compare_pair, ndb_jsd

    real_dir, fake_dir = Path(real_dir), Path(fake_dir)
    names = sorted(p.name for p in real_dir.glob("*.wav"))
    missing = [n for n in names if not (fake_dir / n).exists()]
    if not names:
        raise FileNotFoundError(f"no .wav files in {real_dir}")
    if missing:
        raise FileNotFoundError(f"{fake_dir} lacks {missing[:3]}")
    rows, real_frames, fake_frames = [], [], []
    for name in names:
        xr = wav_read(real_dir / name).samples
        xf = wav_read(fake_dir / name).samples
        row = {"clip": Path(name).stem, **compare_pair(xr, xf)}
        rows.append(row)
        real_frames.append(mel_condition(pad_to_hop(xr)).frames)
        fake_frames.append(mel_condition(pad_to_hop(xf)).frames)
    real_frames, fake_frames = np.concatenate(real_frames), np.concatenate(fake_frames)
    k = min(ndb_k, real_frames.shape[0])
    if k < ndb_k:
        log.warning("only %d real frames; NDB uses k=%d bins instead of %d", real_frames.shape[0], k, ndb_k)
    ndb, jsd = ndb_jsd(real_frames, fake_frames, k=k, seed=seed)
    summary = {
        "clip": "ALL",
        "mcd": float(np.mean([r["mcd"] for r in rows])),
        "vuv": float(np.mean([r["vuv"] for r in rows])),
        "f0corr": float(np.nanmean([r["f0corr"] for r in rows])) if any(np.isfinite(r["f0corr"]) for r in rows)
        else float("nan"),
        "ndb": ndb,
        "jsd": jsd,
    }
    return rows, summary


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    rows, summary = evaluate_dirs(args.real, args.fake, args.ndb_k, cfg.seed)
    cols = ["clip", "mcd", "vuv", "f0corr", "ndb", "jsd"]
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    with open(args.report, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows + [summary]:
            w.writerow({c: r.get(c, "") for c in cols})
    print(f"mcd {summary['mcd']:.4f} dB  vuv {summary['vuv']:.4f}  f0corr {summary['f0corr']:.4f}  "
          f"ndb {summary['ndb']}  jsd {summary['jsd']:.6f}")
    return 0


def cmd_gradcheck(args, cfg: ExperimentConfig) -> int:
    import contextlib

    from .gradcheck import corrupted_rule, format_report, run_checks

    ctx = corrupted_rule(args.corrupt) if args.corrupt else contextlib.nullcontext()
    with ctx:
        results = run_checks(args.only or None, max_probes=args.max_probes)
    print(format_report(results))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_bench_rtf(args, cfg: ExperimentConfig) -> int:
    from .denoiser import Denoiser
    from .metrics import rtf
    from .train import load_denoiser

    model = load_denoiser(args.checkpoint) if args.checkpoint else Denoiser(cfg.model)
    frames = max(1, int(round(args.seconds * SAMPLE_RATE / HOP)))
    mel = derive_rng(cfg.seed, "bench-mel").standard_normal((frames, 80)).astype(np.float32) - 4.0
    cond = MelCondition(mel)
    for n in args.steps:
        value = rtf(model.predict, cond, n, runs=args.runs, seed=cfg.seed)
        print(f"steps {n:>4}  audio {frames * HOP / SAMPLE_RATE:.3f} s  RTF {value:.5f}")
    return 0


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linvoc", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="write a synthetic WAV + mel dataset")
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", help="run the three-stage training loop")
    s.add_argument("--data", help="dataset directory (default: synthesize from the config in memory)")
    s.add_argument("--out", required=True, help="run directory for checkpoints and loss_log.csv")
    s.add_argument("--resume", help="checkpoint stem to continue from")
    s.add_argument("--stop-at", type=int, help="stop after this many total steps")
    s.add_argument("--log-every", type=int, default=50)

    s = sub.add_parser("sample", help="vocode a mel file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mel", required=True)
    s.add_argument("--steps", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", help="objective metrics between two WAV directories")
    s.add_argument("--real", required=True)
    s.add_argument("--fake", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--ndb-k", type=int, default=50)

    s = sub.add_parser("gradcheck", help="finite-difference check of every op, block and loss")
    s.add_argument("--only", nargs="*", help="run only these checks")
    s.add_argument("--max-probes", type=int, default=4)
    s.add_argument("--corrupt", help="self-test: scale the backward rule of this op")

    s = sub.add_parser("bench-rtf", help="time sampling at several step counts")
    s.add_argument("--steps", type=int, nargs="+", default=[3, 100])
    s.add_argument("--seconds", type=float, default=1.0)
    s.add_argument("--runs", type=int, default=5)
    s.add_argument("--checkpoint")
    return p


def _overrides(args, extra: list[str]) -> dict[str, str]:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"{tok} needs a value")
            value = extra[i + 1]
            i += 2
        out[key] = value
    return out


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench-rtf": cmd_bench_rtf,
}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("LINVOC_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config, _overrides(args, extra))
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"# command: {args.command}")
    for k, v in sorted(vars(args).items()):
        if k not in ("command", "set", "config"):
            print(f"# arg {k} = {v}")
    print(cfg.dumps(), end="")
    try:
        return COMMANDS[args.command](args, cfg)
    except (FileNotFoundError, ValueError, WavFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
