"""Run configuration: model dims, training protocol, ablation toggles, paths.

Config files are flat ``key = value`` text with ``#`` comments. CLI flags
override file values. Defaults reproduce the reference training protocol:
30 epochs, batch size 32, learning-rate grid {5e-5, 1e-5}, asymmetry weight
0.01, all margins 1, patient-wise 5-fold cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    """Malformed config file or unknown key."""


@dataclass
class RunConfig:
    # model dimensions
    d_model: int = 64
    heads: int = 4
    blocks: int = 2
    patch_size: int = 8
    image_size: int = 32
    ffn_hidden: int = 128
    max_exams: int = 4

    # component toggles (the ablation axes)
    side_encoding: bool = True
    temporal_encoding: bool = True
    asymmetry_loss: bool = True

    # design-choice switches
    side_embedding_shared: bool = True
    asym_on: str = "spatial"  # which embeddings the asymmetry distances use

    # training protocol
    epochs: int = 30
    batch_size: int = 32
    learning_rates: tuple = (5e-5, 1e-5)
    lambda_: float = 0.01
    m1: float = 1.0
    m2: float = 1.0
    m1_prime: float = 1.0
    m2_prime: float = 1.0
    k_folds: int = 5
    seed: int = 20250809
    jobs: int = 0  # 0 = one worker per available CPU, capped at fold count

    # cohort generation
    n_cases: int = 400
    n_controls: int = 1600
    noise_std: float = 0.03
    blob_base: float = 0.10
    blob_growth: float = 0.35
    blob_sigma: float = 2.5
    benign_blobs: int = 2
    min_exams: int = 2

    # paths
    dataset: str = "cohort.jsonl"
    out: str = "out"

    def margins(self) -> tuple:
        return (self.m1, self.m2, self.m1_prime, self.m2_prime)

    def validate(self) -> None:
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.d_model % 2 != 0:
            raise ConfigError("d_model must be even for the temporal embedding")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not a multiple of patch_size {self.patch_size}")
        if self.asym_on not in ("spatial", "temporal"):
            raise ConfigError(f"asym_on must be 'spatial' or 'temporal', got {self.asym_on!r}")
        if not (1 <= self.min_exams <= self.max_exams):
            raise ConfigError("min_exams must lie in [1, max_exams]")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be at least 2")


_KEY_ALIASES = {"lambda": "lambda_"}
_FIELD_TO_KEY = {"lambda_": "lambda"}


def _parse_value(field_type, raw: str, key: str):
    raw = raw.strip()
    if field_type is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if field_type is int:
        return int(raw)
    if field_type is float:
        return float(raw)
    if field_type is tuple:
        return tuple(float(v) for v in raw.split(",") if v.strip())
    return raw


_FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse flat ``key = value`` text into a RunConfig, starting from ``base``."""
    cfg = base if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        name = _KEY_ALIASES.get(key, key)
        if name not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        setattr(cfg, name, _parse_value(_FIELD_TYPES[name], raw, key))
    cfg.validate()
    return cfg


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), base=base)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical ``key = value`` form; parsing it back round-trips exactly."""
    lines = []
    for f in fields(RunConfig):
        key = _FIELD_TO_KEY.get(f.name, f.name)
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(repr(v) for v in value)
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def config_to_dict(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def config_from_dict(d: dict) -> RunConfig:
    cfg = RunConfig()
    for f in fields(RunConfig):
        if f.name in d:
            v = d[f.name]
            setattr(cfg, f.name, tuple(v) if isinstance(getattr(cfg, f.name), tuple) else v)
    cfg.validate()
    return cfg
