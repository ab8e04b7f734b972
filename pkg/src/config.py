"""
Stage Configuration
===================

Flat `key = value` configuration files (with `#` comments), parsed with
python-dotenv and converted to a typed StageConfig.
"""

from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional, Union

import hashlib
from pathlib import Path

from dotenv import dotenv_values


class ConfigError(Exception):
    """Unknown key, ill-typed value or violated constraint"""


LIPSCHITZ_MODES = ("gradient_penalty", "weight_clipping")
PAIR_FORMS = ("literal", "classic")


@dataclass(frozen=True)
class StageConfig:
    latent_dim: int = 16
    layers: int = 3
    node_width: int = 32
    edge_width: int = 32
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    batch_size: int = 32
    critic_steps: int = 2
    lipschitz: str = "gradient_penalty"
    penalty_weight: float = 10.0
    clip_value: float = 0.01
    tau_start: float = 1.0
    tau_end: float = 0.3
    tau_decay: float = 0.999
    gumbel_noise: bool = True
    max_steps: int = 5000
    seed: int = 0
    checkpoint_every: int = 1000
    atom_types: int = 21
    pair_form: str = "literal"
    shared_latent: bool = False
    sample_outputs: bool = False

    def __post_init__(self):
        for name in ("latent_dim", "layers", "node_width", "edge_width", "batch_size", "critic_steps",
                     "max_steps", "checkpoint_every", "atom_types"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("learning_rate", "penalty_weight", "clip_value", "tau_start", "tau_end", "tau_decay"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError(f"Adam betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.tau_end > self.tau_start:
            raise ConfigError(f"tau_end {self.tau_end} exceeds tau_start {self.tau_start}")
        if self.tau_decay > 1:
            raise ConfigError(f"tau_decay must be at most 1, got {self.tau_decay}")
        if self.lipschitz not in LIPSCHITZ_MODES:
            raise ConfigError(f"lipschitz must be one of {LIPSCHITZ_MODES}, got {self.lipschitz!r}")
        if self.pair_form not in PAIR_FORMS:
            raise ConfigError(f"pair_form must be one of {PAIR_FORMS}, got {self.pair_form!r}")

    def temperature(self, step: int) -> float:
        """Exponentially annealed Gumbel-softmax temperature"""
        return max(self.tau_end, self.tau_start * self.tau_decay ** step)

    def replace(self, **changes) -> "StageConfig":
        return StageConfig(**{**asdict(self), **changes})


_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def _convert(name: str, kind: type, text: Optional[str]) -> Any:
    if text is None:
        raise ConfigError(f"{name} has no value")
    text = text.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{name} = {text!r} is not a valid {kind.__name__}") from None


def parse_config(values: Dict[str, Optional[str]]) -> StageConfig:
    """Typed StageConfig from raw string values"""
    types = {f.name: f.type for f in fields(StageConfig)}
    kinds = {"int": int, "float": float, "bool": bool, "str": str}
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
    converted = {}
    for name, text in values.items():
        kind = types[name]
        kind = kinds[kind] if isinstance(kind, str) else kind
        converted[name] = _convert(name, kind, text)
    return StageConfig(**converted)


def load_config(path: Optional[Union[str, Path]] = None, **overrides) -> StageConfig:
    """
    Load a config file; missing keys keep their defaults

    Args:
        path: `key = value` file, or None for defaults only
        overrides: Values taking precedence over the file (e.g. seed from the CLI)
    """
    values: Dict[str, Optional[str]] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        values = dict(dotenv_values(path))
    config = parse_config(values)
    return config.replace(**overrides) if overrides else config


def dump_config(config: StageConfig) -> str:
    """Effective configuration as `key = value` lines"""
    lines = []
    for name, value in asdict(config).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name} = {value!r}" if isinstance(value, float) else f"{name} = {value}")
    return "\n".join(lines) + "\n"


def config_digest(config: StageConfig) -> bytes:
    """SHA-256 of the rendered configuration"""
    return hashlib.sha256(dump_config(config).encode("utf-8")).digest()
