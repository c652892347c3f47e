"""Flat experiment configuration: `key.path = JSON value` lines.

A config file is a sequence of lines, each `key = value` where the key is a
dotted path and the value is a JSON fragment (`"gpt"`, `256`, `true`,
`[0.05, 0.1]`). Blank lines and `#` comments are ignored. The same syntax
drives `--override key=value` on the command line, where a value that fails
JSON parsing is taken as a bare string for convenience.

Namespaces:
  (top level)  experiment, data_path, output_dir, checkpoint, steps,
               batch_size, eval_interval, analysis_batch, seeds
  model.*      ModelConfig fields (model.arch, model.d_model, ...)
  quant.*      quant.enabled plus QuantConfig fields; enabled=false or an
               absent section means full precision
  corr.*, scaling.*, landscape.*, sweep.*, mlp.*
               experiment-specific knobs, validated by their runners

Unknown keys are rejected by name. Serialization (`to_text`) round-trips
losslessly through the parser.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace

from ..errors import ConfigError
from ..fpquant import QuantConfig
from ..models import ModelConfig

EXPERIMENTS = ("train", "analyze-snr", "correlation", "scaling-curve",
               "landscape", "lr-sweep", "mlp-align")

_TOP_KEYS = ("experiment", "data_path", "output_dir", "checkpoint", "steps",
             "batch_size", "eval_interval", "analysis_batch", "seeds")
_NAMESPACES = ("model", "quant", "corr", "scaling", "landscape", "sweep", "mlp")

_MODEL_FIELDS = {f.name for f in fields(ModelConfig)} - {"quant"}
_QUANT_FIELDS = {f.name for f in fields(QuantConfig)}


def parse_value(text: str):
    """JSON fragment; bare words fall back to strings (CLI convenience)."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip()


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    if isinstance(value, bool):
        return "true" if value else "false"
    return json.dumps(value)


def parse_config_text(text: str) -> dict:
    """Flat key -> parsed value mapping, with line-numbered errors."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            out[key] = json.loads(value.strip())
        except json.JSONDecodeError as e:
            raise ConfigError(
                f"line {lineno}: value for {key!r} is not a JSON fragment: {e}"
            ) from e
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs: experiment name, model, quantizer, knobs."""

    experiment: str
    model: ModelConfig
    quant: QuantConfig | None = None
    data_path: str | None = None
    output_dir: str = "runs"
    checkpoint: str | None = None
    steps: int = 200
    batch_size: int = 4
    eval_interval: int = 50
    analysis_batch: int = 8
    seeds: tuple = (0, 1, 2, 3, 4)
    extras: tuple = ()  # sorted (key, value) pairs from the experiment namespaces

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        for name in ("steps", "batch_size", "eval_interval", "analysis_batch"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive int, got {v!r}")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ConfigError("seeds must not be empty")
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "extras", tuple(sorted(dict(self.extras).items())))

    # ------------------------------------------------------------- access

    def model_config(self) -> ModelConfig:
        """The model config with this experiment's quantizer installed."""
        return replace(self.model, quant=self.quant)

    def extra(self, key: str, default=None):
        return dict(self.extras).get(key, default)

    # -------------------------------------------------------- persistence

    def to_text(self) -> str:
        lines = [f"experiment = {_format_value(self.experiment)}"]
        for name in ("data_path", "output_dir", "checkpoint"):
            value = getattr(self, name)
            if value is not None:
                lines.append(f"{name} = {_format_value(value)}")
        for name in ("steps", "batch_size", "eval_interval", "analysis_batch"):
            lines.append(f"{name} = {_format_value(getattr(self, name))}")
        lines.append(f"seeds = {_format_value(list(self.seeds))}")
        model = self.model.to_dict()
        model.pop("quant", None)
        for key in sorted(model):
            lines.append(f"model.{key} = {_format_value(model[key])}")
        if self.quant is None:
            lines.append("quant.enabled = false")
        else:
            lines.append("quant.enabled = true")
            quant = self.quant.to_dict()
            for key in sorted(quant):
                if key == "element_codebook":
                    continue
                lines.append(f"quant.{key} = {_format_value(quant[key])}")
        for key, value in self.extras:
            lines.append(f"{key} = {_format_value(value)}")
        return "\n".join(lines) + "\n"


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from flat keys, rejecting unknown names."""
    mapping = dict(mapping)
    top: dict = {}
    model_kw: dict = {}
    quant_kw: dict = {}
    quant_enabled = False
    extras: dict = {}

    for key, value in mapping.items():
        if key in _TOP_KEYS:
            top[key] = value
            continue
        root, _, rest = key.partition(".")
        if root == "model":
            if rest not in _MODEL_FIELDS:
                raise ConfigError(f"unknown model field {rest!r} in key {key!r}")
            model_kw[rest] = value
        elif root == "quant":
            if rest == "enabled":
                if not isinstance(value, bool):
                    raise ConfigError(f"quant.enabled must be true or false, got {value!r}")
                quant_enabled = value
            elif rest == "element_codebook":
                raise ConfigError("the element codebook is fixed and not configurable")
            elif rest in _QUANT_FIELDS:
                quant_kw[rest] = value
            else:
                raise ConfigError(f"unknown quant field {rest!r} in key {key!r}")
        elif root in _NAMESPACES:
            if not rest:
                raise ConfigError(f"key {key!r} is a bare namespace")
            extras[key] = tuple(value) if isinstance(value, list) else value
        else:
            raise ConfigError(f"unknown config key {key!r}")

    if "experiment" not in top:
        raise ConfigError("config must set 'experiment'")
    if "arch" not in model_kw:
        raise ConfigError("config must set 'model.arch'")
    if "seeds" in top:
        if not isinstance(top["seeds"], list):
            raise ConfigError(f"seeds must be a list, got {top['seeds']!r}")
        top["seeds"] = tuple(top["seeds"])
    if quant_kw and not quant_enabled:
        raise ConfigError("quant.* fields given but quant.enabled is not true")

    if "betas" in model_kw:
        model_kw["betas"] = tuple(model_kw["betas"])
    try:
        model = ModelConfig(**model_kw)
        quant = QuantConfig(**quant_kw) if quant_enabled else None
    except TypeError as e:
        raise ConfigError(str(e)) from e
    return ExperimentConfig(model=model, quant=quant, extras=tuple(extras.items()), **top)


def load_config(path: str, overrides=None) -> ExperimentConfig:
    """Parse a config file, apply `key=value` overrides, and validate paths."""
    with open(path, "r", encoding="utf-8") as fh:
        mapping = parse_config_text(fh.read())
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        mapping[key.strip()] = parse_value(value)
    cfg = config_from_mapping(mapping)
    check_paths(cfg)
    return cfg


def check_paths(cfg: ExperimentConfig) -> None:
    """Every referenced input path must exist at load time."""
    import os

    paths = []
    if cfg.data_path is not None:
        paths.append(("data_path", cfg.data_path))
    if cfg.checkpoint is not None:
        paths.append(("checkpoint", cfg.checkpoint))
    for key, value in cfg.extras:
        if key.endswith(("checkpoint_gpt", "checkpoint_ngpt")):
            paths.append((key, value))
    for name, p in paths:
        if not os.path.exists(p):
            raise ConfigError(f"{name} does not exist: {p}")
