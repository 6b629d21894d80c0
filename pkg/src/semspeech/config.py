"""Experiment configuration: one JSON document plus ``key=value`` overrides."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dims import ModelDims
from .errors import ConfigError
from .tokenizer import DEFAULT_BUDGET
from .training import TrainingConfig

PATH_KEYS = ("manifest", "wav_root", "planted_manifest", "lm_text", "lexicon", "vocab", "output_dir")
MODEL_SIZES = ("paper", "toy")
MCD_VARIANTS = ("literal", "classical")


@dataclass
class ExperimentConfig:
    manifest: str | None = None
    wav_root: str | None = None  # defaults to the manifest's directory
    planted_manifest: str | None = None
    lm_text: str | None = None
    lexicon: str | None = None
    vocab: str | None = None  # built by ``prepare`` when absent
    output_dir: str = "out"
    model_size: str = "paper"
    dims: dict = field(default_factory=dict)  # overrides on top of model_size
    train_ratio: float = 0.9
    channels: list = field(default_factory=lambda: ["awgn"])
    snr_db: list = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0])
    beam: int = 5
    lm_weight: float = 0.2
    mcd_variant: str = "literal"
    vocab_budget: int = DEFAULT_BUDGET
    lexicon_fallback: bool = True  # letter-to-sound for subwords missing from the lexicon
    eval_batch: int = 16
    seed: int = 0
    training: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model_size not in MODEL_SIZES:
            raise ConfigError(f"model_size must be one of {MODEL_SIZES}, got {self.model_size!r}")
        if self.mcd_variant not in MCD_VARIANTS:
            raise ConfigError(f"mcd_variant must be one of {MCD_VARIANTS}, got {self.mcd_variant!r}")
        if not 0.0 < self.train_ratio < 1.0:
            raise ConfigError(f"train_ratio must lie in (0, 1), got {self.train_ratio}")
        if self.beam < 1:
            raise ConfigError(f"beam must be >= 1, got {self.beam}")
        if not 0.0 <= self.lm_weight < 1.0:
            raise ConfigError(f"lm_weight must lie in [0, 1), got {self.lm_weight}")
        if self.eval_batch < 1:
            raise ConfigError(f"eval_batch must be >= 1, got {self.eval_batch}")
        if not self.channels or any(c not in ("awgn", "rayleigh") for c in self.channels):
            raise ConfigError(f"channels must be a non-empty list of awgn/rayleigh, got {self.channels}")
        try:
            self.snr_db = [float(s) for s in self.snr_db]
        except (TypeError, ValueError) as e:
            raise ConfigError(f"snr_db must be a list of numbers: {e}") from None
        if not self.snr_db or any(math.isnan(s) or s == -math.inf for s in self.snr_db):
            raise ConfigError(f"snr_db must be a non-empty list of finite values or inf, got {self.snr_db}")
        # validate eagerly so a bad key fails before any work starts
        self.model_dims()
        self.training_config()

    def model_dims(self) -> ModelDims:
        base = ModelDims.toy() if self.model_size == "toy" else ModelDims()
        return ModelDims.from_dict({**base.to_dict(), **self.dims})

    def training_config(self) -> TrainingConfig:
        names = {f.name for f in fields(TrainingConfig)}
        unknown = set(self.training) - names
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return TrainingConfig(**{"seed": self.seed, **self.training})

    def path(self, key: str) -> Path | None:
        value = getattr(self, key)
        return Path(value) if value is not None else None

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    @property
    def wav_dir(self) -> Path:
        if self.wav_root is not None:
            return Path(self.wav_root)
        if self.manifest is None:
            raise ConfigError("config has no manifest")
        return Path(self.manifest).parent

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _set_dotted(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {p} is not a section")
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` with a JSON value; bare words are taken as strings."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def from_dict(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    doc = dict(doc)
    if base_dir is not None:
        for key in PATH_KEYS:
            if doc.get(key) is not None:
                doc[key] = str((base_dir / doc[key]).resolve()) if not Path(doc[key]).is_absolute() else doc[key]
    try:
        return ExperimentConfig(**doc)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Read ``path`` (relative paths resolve against its directory) and apply
    ``key=value`` overrides, which resolve against the working directory."""
    doc: dict = {}
    if path is not None:
        p = Path(path)
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}:{e.lineno}: invalid JSON: {e.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: config must be a JSON object")
        doc = from_dict(doc, p.resolve().parent).to_dict()
    for item in overrides:
        key, value = parse_override(item)
        _set_dotted(doc, key, value)
    return from_dict(doc, Path.cwd())
