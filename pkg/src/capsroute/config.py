"""Experiment configuration.

A :class:`RunConfig` is a flat set of typed fields.  It can be written to and
read from a plain ``key = value`` text file (``#`` starts a comment), and its
canonical text form is hashed for checkpoint provenance.

Presets
-------
``mnist``       the reference capsule network: 256 conv channels, 32 primary
                capsule channels of dimension 8, 28x28 input.
``cifar10``     3x32x32 input center-cropped to 24x24, SAME padding on both
                convolutions, giving a 12x12 primary grid; 8 or 64 primary
                capsule channels (``prim_channels``).
``multimnist``  36x36 two-digit canvases.
``desk_mnist``  reduced model for CPU runs: 32 conv channels, 2 primary
                capsule channels (6x6 grid, 72 capsules).
``desk_cifar``  reduced CIFAR-10 model: 32 conv channels, 2 primary channels
                on the 12x12 grid (288 capsules).
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

__all__ = ["RunConfig", "PRESETS", "load_config", "ConfigError"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str = "desk_mnist"
    dataset: str = "mnist"

    # architecture
    input_channels: int = 1
    input_size: int = 28
    crop: int = 0
    conv1_channels: int = 32
    kernel_size: int = 9
    conv1_padding: str = "valid"
    conv2_padding: str = "valid"
    prim_channels: int = 2
    prim_dim: int = 8
    digit_dim: int = 16
    num_classes: int = 10
    routing_iters: int = 3
    digit_init_std: float = 0.5

    # primary-capsule activation
    activation: str = "squash"
    pa_n: int = 6
    ci_bar: float = 6.5
    ci_power: int = 3

    # optimisation
    learning_rate: float = 1e-3
    lr_decay_rate: float = 0.96
    lr_decay_steps: int = 2000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    max_steps: int = 5000
    m_plus: float = 0.9
    m_minus: float = 0.1
    lambda_down: float = 0.5

    # regularisation
    weight_decay: float = 0.0
    dropout_keep: float = 1.0
    dropout_mode: str = "capsule"

    # data handling
    augment_shift: int = 2
    random_crop: bool = False
    random_flip: bool = False
    train_subset: int = 0
    test_subset: int = 0
    seed: int = 0

    # bookkeeping and evaluation
    checkpoint_every: int = 1500
    log_every: int = 100
    eval_every: int = 0
    eval_checkpoints: int = 40
    checkpoint_average: str = "metric"

    # analysis
    top: int = 1000
    coeff_top: int = 100
    threshold: float = 0.15
    map_reduce: str = "max"

    data_dir: str = field(default="", metadata={"hashed": False})
    run_root: str = field(default="runs", metadata={"hashed": False})

    def __post_init__(self):
        self.validate()

    @property
    def model_input_size(self) -> int:
        return self.crop if self.crop else self.input_size

    def validate(self) -> None:
        checks = [
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (0.0 < self.dropout_keep <= 1.0, "dropout_keep must lie in (0, 1]"),
            (self.weight_decay >= 0.0, "weight_decay must be >= 0"),
            (0.0 < self.m_minus < self.m_plus <= 1.0, "need 0 < m_minus < m_plus <= 1"),
            (self.lambda_down >= 0.0, "lambda_down must be >= 0"),
            (self.routing_iters >= 1, "routing_iters must be >= 1"),
            (self.pa_n >= 1, "pa_n must be >= 1"),
            (self.ci_bar > 0.0, "ci_bar must be > 0"),
            (self.activation in ("squash", "ci", "pa"), "activation must be squash, ci or pa"),
            (self.conv1_padding in ("valid", "same"), "conv1_padding must be valid or same"),
            (self.conv2_padding in ("valid", "same"), "conv2_padding must be valid or same"),
            (self.dropout_mode in ("capsule", "element"), "dropout_mode must be capsule or element"),
            (self.checkpoint_average in ("metric", "weights"), "checkpoint_average must be metric or weights"),
            (self.map_reduce in ("max", "mean"), "map_reduce must be max or mean"),
            (self.learning_rate >= 0.0, "learning_rate must be >= 0"),
            (self.crop <= self.input_size, "crop cannot exceed input_size"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    # serialisation -----------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self, hashed_only: bool = False) -> str:
        lines = []
        for f in fields(self):
            if hashed_only and not f.metadata.get("hashed", True):
                continue
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text(hashed_only=True).encode()).hexdigest()[:16]

    def replace(self, **overrides) -> "RunConfig":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **overrides)

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "RunConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        base = dict(PRESETS[name])
        base.update(overrides)
        base["preset"] = name
        return cls(**_coerce_all(base))

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        values = dict(values)
        preset = values.pop("preset", None)
        if preset is not None:
            return cls.from_preset(str(preset), **values)
        return cls(**_coerce_all(values))


PRESETS: dict[str, dict] = {
    "mnist": dict(dataset="mnist", conv1_channels=256, prim_channels=32, digit_init_std=0.01),
    "multimnist": dict(
        dataset="multimnist", input_size=36, conv1_channels=256, prim_channels=32,
        digit_init_std=0.01, augment_shift=0,
    ),
    "cifar10": dict(
        dataset="cifar10", input_channels=3, input_size=32, crop=24, conv1_channels=256,
        conv1_padding="same", conv2_padding="same", prim_channels=64,
        digit_init_std=0.01, augment_shift=0,
    ),
    "desk_mnist": dict(dataset="mnist", conv1_channels=32, prim_channels=2, batch_size=32),
    "desk_cifar": dict(
        dataset="cifar10", input_channels=3, input_size=32, crop=24, conv1_channels=32,
        conv1_padding="same", conv2_padding="same", prim_channels=2, batch_size=32,
        augment_shift=0,
    ),
}


def _coerce(name: str, raw):
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    kind = types[name]
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from exc
    return raw


def _coerce_all(values: dict) -> dict:
    return {k: _coerce(k, v) for k, v in values.items()}


def parse_config_text(text: str) -> dict:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Read a config file (if any) and apply ``overrides`` on top."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_mapping(values)
