"""Run configuration for the command-line experiments.

A config file is one JSON object; every key is optional. Unknown keys are
rejected with the line they appear on, so typos do not silently fall back to
defaults. Quantizer defaults are levels [5, 5, 5, 5, 5] with alpha = 2; the
model defaults to the desk-scale preset (set ``"model": {"preset": "large"}``
for 256 + 256 channels).
"""

import json
import re
from dataclasses import dataclass, field, fields, replace

from sehilo.channel import ChannelConfig
from sehilo.fsq import DEFAULT_EPSILON, QuantizerConfig
from sehilo.hilo import HiLoConfig

SNR_GRID_DB = (10.0, 7.5, 5.0, 2.5, 0.0, -2.5, -5.0)
ROUNDTRIP_LEVEL_SETS = ((3,), (4,), (5, 5), (5, 5, 5, 5, 5), (8, 6, 5))


class ConfigError(ValueError):
    pass


@dataclass
class QuantizerSection:
    levels: list = field(default_factory=lambda: [5, 5, 5, 5, 5])
    alpha: float = 2.0
    epsilon: float = DEFAULT_EPSILON

    def build(self, alpha=None):
        return QuantizerConfig(tuple(self.levels), self.alpha if alpha is None else alpha,
                               self.epsilon)


@dataclass
class ModelSection:
    preset: str = "desk"
    init_seed: int = 0
    overrides: dict = field(default_factory=dict)

    def build(self, d_fsq):
        kw = dict(self.overrides, d_fsq=d_fsq)
        if self.preset == "desk":
            return HiLoConfig(**kw)
        if self.preset == "large":
            return HiLoConfig.large(**kw)
        raise ConfigError(f"unknown model preset {self.preset!r} (expected desk or large)")


@dataclass
class ChannelSection:
    """Noise axis for sweep / hilo-noise: SNR grid in dB, or fixed sigmas."""

    mode: str = "snr_db"
    snr_grid: list = field(default_factory=lambda: list(SNR_GRID_DB))
    sigma_grid: list = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0, 1.5, 2.0])
    include_noiseless: bool = True

    def grid(self):
        if self.mode == "snr_db":
            return list(self.snr_grid)
        if self.mode == "fixed_sigma":
            return list(self.sigma_grid)
        raise ConfigError(f"channel mode must be snr_db or fixed_sigma, got {self.mode!r}")

    def make(self, value, seed):
        if self.mode == "snr_db":
            return ChannelConfig(snr_db=float(value), seed=seed)
        if value == 0:
            return None
        return ChannelConfig(fixed_sigma=float(value), seed=seed)


@dataclass
class TheorySection:
    sigmas: list = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0])
    levels_grid: list = field(default_factory=lambda: [[3], [5], [7], [5, 5, 5, 5, 5]])
    alphas: list = field(default_factory=lambda: [1.0, 2.0, 4.0])
    span: float = None  # when set, alpha = span / (m - 1) per level set


@dataclass
class MCSection:
    sigmas: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])
    trials: int = 1_000_000
    workers: int = 1


@dataclass
class SweepSection:
    n_images: int = 64
    n_decode: int = 4
    image_shape: list = field(default_factory=lambda: [32, 32, 3])
    workers: int = 1


@dataclass
class RoundtripSection:
    frames: int = 10_000
    max_tokens: int = 64
    level_sets: list = field(default_factory=lambda: [list(s) for s in ROUNDTRIP_LEVEL_SETS])
    truncate_every: int = 100


@dataclass
class ForwardSection:
    snr_hi: float = None
    snr_lo: float = None


@dataclass
class RunConfig:
    seed: int = None
    quantizer: QuantizerSection = field(default_factory=QuantizerSection)
    model: ModelSection = field(default_factory=ModelSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    theory: TheorySection = field(default_factory=TheorySection)
    mc: MCSection = field(default_factory=MCSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    roundtrip: RoundtripSection = field(default_factory=RoundtripSection)
    forward: ForwardSection = field(default_factory=ForwardSection)

    def quantizer_config(self, alpha=None):
        return self.quantizer.build(alpha)

    def model_config(self):
        return self.model.build(len(self.quantizer.levels))


_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig) if f.name != "seed"}


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(msg, text, key, source):
    line = _line_of(text, key)
    where = f"{source}:{line}" if line else source
    raise ConfigError(f"{where}: {msg}")


def config_from_dict(data, text=None, source="<config>"):
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    cfg = RunConfig()
    for key, value in data.items():
        if key == "seed":
            if value is not None and not isinstance(value, int):
                _fail("seed must be an integer", text, key, source)
            cfg.seed = value
            continue
        if key not in _SECTIONS:
            _fail(f"unknown key {key!r}", text, key, source)
        if not isinstance(value, dict):
            _fail(f"section {key!r} must be an object", text, key, source)
        section = getattr(cfg, key)
        known = {f.name for f in fields(section)}
        updates = {}
        for sub, v in value.items():
            if key == "model" and sub not in known:
                updates.setdefault("overrides", dict(section.overrides))[sub] = v
                continue
            if sub not in known:
                _fail(f"unknown key {key}.{sub}", text, sub, source)
            updates[sub] = v
        setattr(cfg, key, replace(section, **updates))
    try:
        cfg.quantizer_config()
        cfg.model_config()
        cfg.channel.grid()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return config_from_dict(data, text, str(path))
