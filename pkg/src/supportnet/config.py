"""Plain key = value config files with [section] headers.

Deliberately not INI-via-configparser: parsing by hand keeps error
messages line-numbered and the accepted grammar tiny (sections, comments
with '#', one key = value per line).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .core_math import SeededRng
from .data import Dataset, load_idx, synthetic_blobs
from .engine import METHODS, MethodConfig
from .errors import ConfigError

ENV_DATA_DIR = "SUPPORTNET_DATA_DIR"

_MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class RunConfig:
    """Parsed config file: data recipe plus a MethodConfig template."""

    source: str = "synthetic"
    data_dir: str | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    schedule: list[list[int]] = field(default_factory=lambda: [[0, 1], [2, 3]])
    data_seed: int = 777
    synthetic_classes: int = 4
    synthetic_dim: int = 16
    synthetic_train_per_class: int = 200
    synthetic_test_per_class: int = 100
    synthetic_separation: float = 3.0
    methods: list[str] = field(default_factory=list)  # for `compare`
    method: MethodConfig = field(default_factory=MethodConfig)

    def resolve_path(self, name: str) -> str:
        configured = getattr(self, name)
        if configured:
            return configured
        base = self.data_dir or os.environ.get(ENV_DATA_DIR) or "."
        return os.path.join(base, _MNIST_FILES[name])


def _parse_schedule(text: str, line: int) -> list[list[int]]:
    groups = []
    for part in text.split("|"):
        part = part.strip()
        if not part:
            raise ConfigError("empty schedule group", line)
        try:
            groups.append([int(c) for c in part.split(",")])
        except ValueError:
            raise ConfigError(f"bad schedule group '{part}'", line) from None
    return groups


def _parse_bool(text: str, line: int) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got '{text}'", line)


# section -> key -> (target attribute, converter); converters take (text, line)
_SCHEMA = {
    "data": {
        "source": ("source", lambda v, l: v),
        "data_dir": ("data_dir", lambda v, l: v),
        "train_images": ("train_images", lambda v, l: v),
        "train_labels": ("train_labels", lambda v, l: v),
        "test_images": ("test_images", lambda v, l: v),
        "test_labels": ("test_labels", lambda v, l: v),
        "schedule": ("schedule", _parse_schedule),
        "data_seed": ("data_seed", lambda v, l: int(v)),
        "classes": ("synthetic_classes", lambda v, l: int(v)),
        "dim": ("synthetic_dim", lambda v, l: int(v)),
        "train_per_class": ("synthetic_train_per_class", lambda v, l: int(v)),
        "test_per_class": ("synthetic_test_per_class", lambda v, l: int(v)),
        "separation": ("synthetic_separation", lambda v, l: float(v)),
    },
    "model": {
        "hidden": ("hidden_dims", lambda v, l: tuple(int(d) for d in v.split(","))),
        "activation": ("activation", lambda v, l: v),
        "new_row_stdev": ("new_row_stdev", lambda v, l: float(v)),
    },
    "method": {
        "name": ("method", lambda v, l: v),
        "methods": ("methods", lambda v, l: [m.strip() for m in v.split(",")]),
        "budget": ("budget", lambda v, l: int(v)),
        "lambda_f": ("lambda_f", lambda v, l: float(v)),
        "lambda_ewc": ("lambda_ewc", lambda v, l: float(v)),
        "uniform_sampling": ("uniform_sampling", _parse_bool),
    },
    "optimizer": {
        "lr": ("learning_rate", lambda v, l: float(v)),
        "lr_decay": ("lr_decay", lambda v, l: float(v)),
        "momentum": ("momentum", lambda v, l: float(v)),
        "batch_size": ("batch_size", lambda v, l: int(v)),
        "epochs": ("epochs", lambda v, l: int(v)),
        "all_data_epochs": ("all_data_epochs", lambda v, l: int(v)),
        "seed": ("seed", lambda v, l: int(v)),
        "svm_c": ("svm_c", lambda v, l: float(v)),
        "svm_tol": ("svm_tol", lambda v, l: float(v)),
        "svm_max_epochs": ("svm_max_epochs", lambda v, l: int(v)),
        "fisher_samples_per_point": ("fisher_samples_per_point", lambda v, l: int(v)),
        "fisher_sample_cap": ("fisher_sample_cap", lambda v, l: int(v)),
    },
}

_RUN_CONFIG_KEYS = {
    "source", "data_dir", "train_images", "train_labels", "test_images",
    "test_labels", "schedule", "data_seed", "synthetic_classes", "synthetic_dim",
    "synthetic_train_per_class", "synthetic_test_per_class",
    "synthetic_separation", "methods",
}


def parse_config(text: str) -> RunConfig:
    """Parse a config string; raises ConfigError with a line number."""
    run = RunConfig()
    method_kwargs: dict = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got '{line}'", lineno)
        if section is None:
            raise ConfigError("key outside any [section]", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key '{key}' in [{section}]", lineno)
        target, convert = _SCHEMA[section][key]
        try:
            parsed = convert(value, lineno)
        except ConfigError:
            raise
        except Exception:
            raise ConfigError(f"bad value '{value}' for {key}", lineno) from None
        if target in _RUN_CONFIG_KEYS:
            setattr(run, target, parsed)
        else:
            method_kwargs[target] = parsed
    try:
        run.method = MethodConfig(**method_kwargs)
    except Exception as exc:
        raise ConfigError(str(exc)) from exc
    if run.source not in ("mnist", "idx", "synthetic"):
        raise ConfigError(f"unknown data source '{run.source}'")
    for m in run.methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method '{m}' in methods list")
    return run


def load_config(path) -> RunConfig:
    with open(path) as f:
        return parse_config(f.read())


def load_datasets(run: RunConfig) -> tuple[Dataset, Dataset]:
    """Materialize the train/test pair a config describes."""
    if run.source in ("mnist", "idx"):
        train = load_idx(
            run.resolve_path("train_images"), run.resolve_path("train_labels"), "train"
        )
        test = load_idx(
            run.resolve_path("test_images"), run.resolve_path("test_labels"), "test"
        )
        return train, test
    train = synthetic_blobs(
        run.synthetic_classes,
        run.synthetic_dim,
        run.synthetic_train_per_class,
        run.synthetic_separation,
        SeededRng(run.data_seed, 1),
        "train",
    )
    test = synthetic_blobs(
        run.synthetic_classes,
        run.synthetic_dim,
        run.synthetic_test_per_class,
        run.synthetic_separation,
        SeededRng(run.data_seed, 2),
        "test",
    )
    return train, test
