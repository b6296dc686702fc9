"""Flat ``key = value`` experiment configuration.

One pair per line; ``#`` starts a comment; blank lines are ignored. Lists
are comma separated, optional values accept ``none``, booleans are
``true``/``false``. Unknown keys are an error.
"""

import os
import typing
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from .federation import FedConfig
from .sequence_data import DEFAULT_SIZE_MENU

DATA_DIR_ENV = "FEDSEQ_DATA_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    run_id: str = "run"
    source: str = "synthetic"
    idx_images: str = ""
    idx_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    construction: str = "vl"
    size_menu: tuple = DEFAULT_SIZE_MENU
    examples_per_client: int = 1000
    test_size: int = 1000
    dataset: str = ""
    out_dir: str = ""
    checkpoints: bool = False
    # federated training
    n_clients: int = 5
    local_epochs: int = 1
    batch_size: int = 32
    rounds: int = 30
    strategy: str = "vl"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    hidden: int = 64
    local_steps_cap: Optional[int] = None
    persist_optimizer: bool = False
    clip_norm: Optional[float] = None
    divergence_ref: str = "post"
    threads: int = 1
    eval_batch: int = 256

    def __post_init__(self):
        if self.source not in ("synthetic", "idx"):
            raise ConfigError(f"source must be 'synthetic' or 'idx', got {self.source!r}")
        if self.construction not in ("vl", "fl"):
            raise ConfigError(f"construction must be 'vl' or 'fl', got {self.construction!r}")
        if not self.size_menu or min(self.size_menu) < 1:
            raise ConfigError(f"size_menu sides must be >= 1, got {self.size_menu}")
        if self.examples_per_client < 1 or self.test_size < 1:
            raise ConfigError("examples_per_client and test_size must be positive")
        self.size_menu = tuple(int(s) for s in self.size_menu)
        try:
            self.fed()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def fed(self):
        values = asdict(self)
        return FedConfig(**{k: values[k] for k in FedConfig.field_names()})

    def data_dir(self):
        if self.out_dir:
            return Path(self.out_dir)
        return Path(os.environ.get(DATA_DIR_ENV, "data"))

    def dataset_path(self):
        if self.dataset:
            return Path(self.dataset)
        return self.data_dir() / f"{self.run_id}_{self.construction}_seed{self.seed}.npz"

    def resolve(self, path):
        p = Path(path)
        if p.is_absolute() or p.exists():
            return p
        return Path(os.environ.get(DATA_DIR_ENV, ".")) / p


def _base_type(tp):
    if typing.get_origin(tp) is typing.Union:
        return [a for a in typing.get_args(tp) if a is not type(None)][0], True
    return tp, False


def _hints():
    return typing.get_type_hints(ExperimentConfig)


def _coerce(key, raw, tp):
    base, optional = _base_type(tp)
    text = raw.strip()
    if optional and text.lower() == "none":
        return None
    try:
        if base is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if base is int:
            return int(text)
        if base is float:
            return float(text)
        if base is tuple:
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text, **overrides):
    hints = _hints()
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in hints:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, hints[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def format_config(cfg):
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path, **overrides):
    return parse_config(Path(path).read_text(), **overrides)
