"""Experiment configuration: one flat ``key = value`` namespace over every component.

Keys are ``section.field`` (``model.hidden_dim``, ``train.lr``, ``critic.widths``,
``data.n_clips``) plus the root ``seed``. Component seeds that are not set
explicitly are derived from the root seed by name, so one number pins the
whole experiment while any single component can still be re-seeded alone.
Precedence: defaults < config file < command-line overrides.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .critics import CriticConfig
from .data import SynthDatasetSpec, derive_seed
from .denoiser import DenoiserConfig
from .dsp import HOP, SpectrogramConfig
from .train import TrainConfig

SECTIONS = {
    "model": DenoiserConfig,
    "train": TrainConfig,
    "critic": CriticConfig,
    "data": SynthDatasetSpec,
}


class ConfigError(ValueError):
    pass


def _sub_seed(root: int, name: str) -> int:
    return int(derive_seed(root, name).generate_state(1)[0] & 0x7FFFFFFF)


def _default_values() -> dict[str, str]:
    out = {"seed": "0"}
    for section, cls in SECTIONS.items():
        inst = cls()
        for f in dataclasses.fields(cls):
            if f.name == "seed":
                continue
            out[f"{section}.{f.name}"] = _format(getattr(inst, f.name))
    return out


def _format(value) -> str:
    if isinstance(value, SpectrogramConfig):
        return f"{value.n_fft},{value.win_length},{value.hop_length}"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse(cls, name: str, text: str):
    default = getattr(cls(), name)
    try:
        if isinstance(default, SpectrogramConfig):
            n_fft, win, hop = (int(v) for v in text.split(","))
            return SpectrogramConfig(n_fft, win, hop)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.split(",") if v.strip())
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r} ({exc})") from None


def parse_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


class ExperimentConfig:
    """Resolved key/value view plus typed component configs."""

    def __init__(self, values: dict[str, str] | None = None):
        self.values = _default_values()
        self.update(values or {})

    def update(self, values: dict[str, str]):
        for key, value in values.items():
            section = key.split(".", 1)[0]
            known = key in self.values or (
                section in SECTIONS and key.endswith(".seed") and key.count(".") == 1)
            if not known:
                raise ConfigError(f"unknown config key {key!r}")
            self.values[key] = str(value)
        self._validate()

    @classmethod
    def load(cls, path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
        cfg = cls()
        if path is not None:
            cfg.update(parse_text(Path(path).read_text()))
        cfg.update(overrides or {})
        return cfg

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def _build(self, section: str):
        cls = SECTIONS[section]
        kwargs = {}
        for f in dataclasses.fields(cls):
            key = f"{section}.{f.name}"
            if f.name == "seed":
                kwargs["seed"] = int(self.values[key]) if key in self.values else _sub_seed(self.seed, section)
            else:
                kwargs[f.name] = _parse(cls, f.name, self.values[key])
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {exc}") from None

    @property
    def model(self) -> DenoiserConfig:
        return self._build("model")

    @property
    def train(self) -> TrainConfig:
        return self._build("train")

    @property
    def critic(self) -> CriticConfig:
        return self._build("critic")

    @property
    def data(self) -> SynthDatasetSpec:
        return self._build("data")

    def _validate(self):
        for section in SECTIONS:
            self._build(section)
        if HOP % self.model.patch_size:
            raise ConfigError("model.patch_size must divide 256")

    def resolved(self) -> dict[str, str]:
        """Every key with its effective value, derived seeds included."""
        out = dict(self.values)
        for section in SECTIONS:
            out.setdefault(f"{section}.seed", str(self._build(section).seed))
        return dict(sorted(out.items()))

    def dumps(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in self.resolved().items()) + "\n"
