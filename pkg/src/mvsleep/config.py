"""Run configuration: key=value files merged with CLI values over dataclass defaults."""

import hashlib
import types
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Literal, Union, get_args, get_origin

import numpy as np

from .epoching import DataConfig
from .losses import LossConfig
from .pretrainer import LinearEvalConfig, PretrainConfig
from .svm import SvmConfig
from .views import AugmentConfig, StftConfig

DATA_DIR_ENV = "MVSLEEP_DATA_DIR"

# Section name -> config dataclass; file keys are "<section>.<field>"
_SECTIONS: dict[str, type] = {
    "data": DataConfig,
    "augment": AugmentConfig,
    "stft": StftConfig,
    "loss": LossConfig,
    "pretrain": PretrainConfig,
    "linear_eval": LinearEvalConfig,
    "svm": SvmConfig,
}

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


class ConfigError(ValueError):
    """Malformed config file, unknown key or invalid value."""


def derive_seed(seed: int, stage: str) -> int:
    """Stable per-stage seed derived from the global seed."""
    sequence = np.random.SeedSequence([seed, zlib.crc32(stage.encode("utf-8"))])
    return int(sequence.generate_state(1)[0])


def known_keys() -> set[str]:
    keys = {"seed"}
    for section, cls in _SECTIONS.items():
        keys.update(f"{section}.{f.name}" for f in fields(cls))
    return keys


def load_config_file(path: Path | None) -> dict[str, str]:
    """
    Parse a line-based key=value file.

    Blank lines and `#` comments are skipped; keys must be known and unique.
    """
    if path is None:
        return {}
    if not path.exists():
        raise FileNotFoundError(f"Config file {path} does not exist.")
    values: dict[str, str] = {}
    allowed = known_keys()
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in allowed:
            raise ConfigError(f"{path}:{number}: unknown config key '{key}'")
        if key in values:
            raise ConfigError(f"{path}:{number}: duplicate config key '{key}'")
        values[key] = value
    return values


def _coerce_value(key: str, value: Any, annotation: Any) -> Any:
    """Coerce a raw (usually string) value to a field's declared type."""
    origin = get_origin(annotation)
    if origin in (Union, types.UnionType):
        members = [a for a in get_args(annotation) if a is not type(None)]
        if value is None or (isinstance(value, str) and value.lower() in ("", "none")):
            return None
        return _coerce_value(key, value, members[0])
    if origin is Literal:
        if value not in get_args(annotation):
            raise ConfigError(
                f"Invalid value for '{key}': {value!r} (choose from {list(get_args(annotation))})"
            )
        return value
    if not isinstance(value, str):
        return value
    try:
        if annotation is bool:
            lowered = value.lower()
            if lowered not in _TRUE | _FALSE:
                raise ValueError(value)
            return lowered in _TRUE
        if annotation is int:
            return int(value)
        if annotation is float:
            return float(value)
    except ValueError as e:
        raise ConfigError(f"Invalid value for '{key}': {value!r}") from e
    return value


def _build_section(
    section: str, values: dict[str, Any], seed: int
) -> Any:
    cls = _SECTIONS[section]
    kwargs: dict[str, Any] = {}
    for f in fields(cls):
        key = f"{section}.{f.name}"
        if key in values:
            kwargs[f.name] = _coerce_value(key, values[key], f.type)
        elif f.name == "seed":
            kwargs["seed"] = derive_seed(seed, section)
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(f"Invalid [{section}] configuration: {e}") from e


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of a run, resolved with priority CLI > config file > defaults."""

    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    linear_eval: LinearEvalConfig = field(default_factory=LinearEvalConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)

    @classmethod
    def from_cli_and_config(
        cls,
        cli_values: dict[str, Any],
        file_config: dict[str, str],
    ) -> "RunConfig":
        """
        Merge with priority: CLI > Config file > Dataclass defaults.

        cli_values: dotted keys, where None means "not provided by user".
        file_config: dotted keys from `load_config_file`.

        Section seeds not set explicitly are derived from the global seed.
        """
        unknown = (set(cli_values) | set(file_config)) - known_keys()
        if unknown:
            raise ConfigError(f"Unknown config keys: {sorted(unknown)}")
        merged: dict[str, Any] = dict(file_config)
        merged.update({k: v for k, v in cli_values.items() if v is not None})
        seed = _coerce_value("seed", merged.get("seed", 0), int)
        sections = {name: _build_section(name, merged, seed) for name in _SECTIONS}
        return cls(seed=seed, **sections)

    @classmethod
    def load(cls, path: Path | None, cli_values: dict[str, Any] | None = None) -> "RunConfig":
        return cls.from_cli_and_config(cli_values or {}, load_config_file(path))

    def resolved(self) -> dict[str, Any]:
        values: dict[str, Any] = {"seed": self.seed}
        for section in _SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                values[f"{section}.{f.name}"] = getattr(obj, f.name)
        return values

    def to_lines(self) -> list[str]:
        return [f"{key}={value}" for key, value in sorted(self.resolved().items())]

    def config_hash(self) -> str:
        digest = hashlib.sha256("\n".join(self.to_lines()).encode("utf-8"))
        return digest.hexdigest()[:16]

    def with_section(self, section: str, **changes: Any) -> "RunConfig":
        """Copy with fields of one section replaced."""
        return replace(self, **{section: replace(getattr(self, section), **changes)})
