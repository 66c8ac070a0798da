"""Flat ``key = value`` run configuration.

One option per line, ``#`` starts a comment, blank lines are ignored, keys
may use ``-`` or ``_``. Every key is also a command-line flag
(``width_multiple`` <-> ``--width-multiple``); flags override file values,
which override the defaults listed in :data:`OPTIONS`. Unknown keys are an
error.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError
from .imagedata import SplitMode, SplitSpec
from .model import UNetConfig
from .training import TrainConfig
from .transforms import ResizePolicy

RUN_DIR_ENV = "CELLSEG_RUN_DIR"


def parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return "" if value is None else str(value)


@dataclass(frozen=True)
class Option:
    key: str
    parse: Callable[[str], Any]
    default: Any
    help: str
    group: str

    @property
    def flag(self) -> str:
        return "--" + self.key.replace("_", "-")


_OPTIONS = [
    # data
    Option("images", str, None, "directory of input images", "data"),
    Option("masks", str, None, "directory of ground-truth masks (same filename stems)", "data"),
    Option("mask_threshold", float, 0.0, "raw mask values above this are foreground", "data"),
    # preprocessing
    Option("height", int, 256, "resize target height in pixels", "resize"),
    Option("width_multiple", int, 16, "resized width is snapped to a multiple of this", "resize"),
    # model
    Option("in_channels", int, 3, "UNet input channels (grayscale images are replicated)", "model"),
    Option("out_channels", int, 1, "UNet output channels (masks are replicated)", "model"),
    Option("depth", int, 4, "number of downsampling steps", "model"),
    Option("base_filters", int, 64, "channels after the first encoder block", "model"),
    Option("batch_norm", parse_bool, False, "batch normalization after each 3x3 conv", "model"),
    # training
    Option("seed", int, 0, "seed for weight init, batch order and splits", "train"),
    Option("learning_rate", float, 1e-4, "Adam learning rate", "train"),
    Option("batch_size", int, 2, "mini-batch size", "train"),
    Option("epochs", int, 100, "training epochs", "train"),
    Option("adam_beta1", float, 0.9, "Adam first-moment decay", "train"),
    Option("adam_beta2", float, 0.999, "Adam second-moment decay", "train"),
    Option("adam_epsilon", float, 1e-8, "Adam denominator epsilon", "train"),
    Option("loss", str, "bce", "loss function (bce)", "train"),
    Option("checkpoint_every", int, 0, "write a checkpoint every N epochs (0 = final only)", "train"),
    # evaluation
    Option("threshold", float, 0.5, "probability threshold for a positive pixel", "eval"),
    Option("average", str, "pooled", "precision/recall/F1 averaging: pooled or image", "eval"),
    # splitting / benchmark
    Option("split", str, None, "split mode: random_fraction or by_sequence "
           "(default: by_sequence when train_data and test_data are set, else random_fraction)", "bench"),
    Option("test_fraction", float, 0.2, "test share for random splits", "bench"),
    Option("data", str, None, "dataset root with images/ and masks/ (random split)", "bench"),
    Option("train_data", str, None, "sequence-1 root with images/ and masks/ (by_sequence)", "bench"),
    Option("test_data", str, None, "sequence-2 root with images/ and masks/ (by_sequence)", "bench"),
    Option("name", str, None, "dataset name used in reports", "bench"),
    Option("seeds", parse_int_list, None, "comma-separated run seeds (default 1..n_runs)", "bench"),
    Option("n_runs", int, 5, "number of benchmark runs", "bench"),
    Option("workers", int, 1, "parallel benchmark processes", "bench"),
    # synthetic data
    Option("n", int, 16, "number of synthetic frames", "synth"),
    Option("width", int, 256, "synthetic frame width in pixels", "synth"),
    Option("cells_min", int, 3, "fewest cells per synthetic frame", "synth"),
    Option("cells_max", int, 5, "most cells per synthetic frame", "synth"),
    Option("radius_min", float, None, "smallest cell semi-axis in px (default 3/32 of the frame)", "synth"),
    Option("radius_max", float, None, "largest cell semi-axis in px (default 3/16 of the frame)", "synth"),
    Option("foreground", float, 0.8, "mean cell intensity in [0, 1]", "synth"),
    Option("background", float, 0.2, "mean background intensity in [0, 1]", "synth"),
    Option("noise_sigma", float, 0.05, "standard deviation of additive Gaussian noise", "synth"),
    Option("out", str, None, "synthetic dataset root (gets images/ and masks/)", "synth"),
    Option("force", parse_bool, False, "overwrite an existing dataset", "synth"),
    # outputs
    Option("out_dir", str, None, f"output directory (default: ${RUN_DIR_ENV} or ./runs, timestamped)", "io"),
    Option("checkpoint", str, None, "model checkpoint file", "io"),
    Option("csv", str, None, "write the metrics CSV row to this file", "io"),
    Option("figure", str, None, "write an input | prediction | truth comparison PNG here", "io"),
]

OPTIONS: dict[str, Option] = {o.key: o for o in _OPTIONS}


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        raw_key, raw_value = stripped.split("=", 1)
        key = normalize_key(raw_key)
        if key not in OPTIONS:
            raise ConfigError(f"{source}:{lineno}: unknown key {raw_key.strip()!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = OPTIONS[key].parse(raw_value.strip())
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def load_config_file(path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def resolve(file_values: dict[str, Any] | None = None, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """Defaults, then file values, then non-None overrides."""
    values = {k: o.default for k, o in OPTIONS.items()}
    values.update(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return values


def dump_config(values: dict[str, Any], keys=None) -> str:
    keys = keys if keys is not None else [k for k in OPTIONS if values.get(k) is not None]
    return "".join(f"{k} = {format_value(values[k])}\n" for k in keys)


def model_config(v: dict[str, Any]) -> UNetConfig:
    return UNetConfig(in_channels=v["in_channels"], out_channels=v["out_channels"], depth=v["depth"],
                      base_filters=v["base_filters"], seed=v["seed"], batch_norm=v["batch_norm"])


def train_config(v: dict[str, Any]) -> TrainConfig:
    return TrainConfig(learning_rate=v["learning_rate"], batch_size=v["batch_size"], epochs=v["epochs"],
                       adam_beta1=v["adam_beta1"], adam_beta2=v["adam_beta2"],
                       adam_epsilon=v["adam_epsilon"], loss=v["loss"], seed=v["seed"],
                       checkpoint_every=v["checkpoint_every"])


def resize_policy(v: dict[str, Any]) -> ResizePolicy:
    return ResizePolicy(target_height=v["height"], width_multiple=v["width_multiple"])


def split_spec(v: dict[str, Any]) -> SplitSpec:
    name = v.get("split")
    if name is None:
        paired = v.get("train_data") and v.get("test_data")
        name = "by_sequence" if paired else "random_fraction"
    try:
        mode = SplitMode(name)
    except ValueError as exc:
        raise ConfigError(f"unknown split mode {name!r}") from exc
    return SplitSpec(mode, v["test_fraction"], v["seed"])


def default_run_dir(prefix: str) -> Path:
    import time

    base = Path(os.environ.get(RUN_DIR_ENV, "runs"))
    return base / f"{prefix}-{time.strftime('%Y%m%d-%H%M%S')}"
