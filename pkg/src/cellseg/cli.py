"""``cellseg`` command line: synth, train, eval, predict, bench.

Exit codes: 0 success, 1 usage/configuration error, 2 data or checkpoint
error, 3 runtime failure. Tables go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, config
from .errors import CellSegError, CheckpointError, ConfigError, DataError

log = logging.getLogger("cellseg")

DATA = ["images", "masks", "mask_threshold"]
RESIZE = ["height", "width_multiple"]
MODEL = ["in_channels", "out_channels", "depth", "base_filters", "batch_norm"]
TRAIN = ["seed", "learning_rate", "batch_size", "epochs", "adam_beta1", "adam_beta2",
         "adam_epsilon", "loss", "checkpoint_every"]
EVAL = ["threshold", "average"]
BENCH = ["split", "test_fraction", "data", "train_data", "test_data", "name", "seeds", "n_runs", "workers"]
SYNTH = ["n", "height", "width", "seed", "out", "force", "cells_min", "cells_max", "radius_min",
         "radius_max", "foreground", "background", "noise_sigma"]

COMMAND_KEYS = {
    "synth": SYNTH,
    "train": DATA + RESIZE + MODEL + TRAIN + ["out_dir"],
    "eval": ["checkpoint"] + DATA + EVAL + ["csv"] + RESIZE + MODEL,
    "predict": ["checkpoint", "images", "masks", "mask_threshold", "out_dir", "threshold", "figure"] + RESIZE,
    "bench": BENCH + DATA[2:] + RESIZE + MODEL + TRAIN + EVAL + ["out_dir"],
}

HELP_OVERRIDES = {
    ("synth", "height"): "synthetic frame height in pixels",
    ("synth", "seed"): "generator seed",
    ("eval", "height"): "resize height (default: the policy stored in the checkpoint)",
    ("eval", "width_multiple"): "width multiple (default: the policy stored in the checkpoint)",
    ("predict", "height"): "resize height (default: the policy stored in the checkpoint)",
    ("predict", "width_multiple"): "width multiple (default: the policy stored in the checkpoint)",
}
FLAG_ALIASES = {"n": ["-n"]}


class UsageError(ConfigError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_options(sub: argparse.ArgumentParser, command: str):
    for key in COMMAND_KEYS[command]:
        opt = config.OPTIONS[key]
        text = HELP_OVERRIDES.get((command, key), opt.help)
        if opt.default is not None and (command, key) not in HELP_OVERRIDES:
            text += f" (default: {config.format_value(opt.default)})"
        flags = [opt.flag] + FLAG_ALIASES.get(key, [])
        if opt.parse is config.parse_bool:
            sub.add_argument(*flags, dest=key, action=argparse.BooleanOptionalAction, default=None, help=text)
        elif opt.parse is config.parse_int_list:
            sub.add_argument(*flags, dest=key, type=config.parse_int_list, default=None, metavar="LIST", help=text)
        else:
            sub.add_argument(*flags, dest=key, type=opt.parse, default=None, help=text)


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="cellseg", description="UNet cell segmentation toolkit")
    parser.add_argument("--version", action="version", version=f"cellseg {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=Parser)
    descriptions = {
        "synth": "write a synthetic image/mask dataset",
        "train": "train a UNet and write model.ckpt plus logs",
        "eval": "score a checkpoint on a labelled dataset",
        "predict": "write predicted mask PNGs for a directory of images",
        "bench": "multi-seed train/eval benchmark from a spec file",
    }
    for command, text in descriptions.items():
        sub = subs.add_parser(command, help=text, description=text)
        if command == "bench":
            sub.add_argument("--spec", "--config", dest="config_file", help="benchmark spec file (key = value)")
        else:
            sub.add_argument("--config", dest="config_file", help="key = value config file; flags override it")
        sub.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        _add_options(sub, command)
    return parser


def _gather(args) -> tuple[dict, dict]:
    """Return (resolved values, explicitly set values)."""
    file_values = {}
    if args.config_file:
        file_values = config.load_config_file(args.config_file)
        base = Path(args.config_file).resolve().parent
        for key in ("images", "masks", "data", "train_data", "test_data", "out_dir", "checkpoint", "out",
                    "csv", "figure"):
            if file_values.get(key) and not Path(file_values[key]).is_absolute():
                file_values[key] = str(base / file_values[key])
    cli = {k: getattr(args, k) for k in COMMAND_KEYS[args.command] if getattr(args, k, None) is not None}
    explicit = {**file_values, **cli}
    return config.resolve(file_values, cli), explicit


def _require(values: dict, *keys: str):
    missing = [config.OPTIONS[k].flag for k in keys if not values.get(k)]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


# ---------------------------------------------------------------- commands


def cmd_synth(values: dict, explicit: dict) -> int:
    from .synthdata import SynthConfig, generate, write_dataset

    _require(values, "out")
    radius = None
    if values["radius_min"] is not None or values["radius_max"] is not None:
        side = min(values["height"], values["width"])
        radius = (values["radius_min"] if values["radius_min"] is not None else side * 3 / 32,
                  values["radius_max"] if values["radius_max"] is not None else side * 3 / 16)
    cfg = SynthConfig(n_images=values["n"], height=values["height"], width=values["width"],
                      cells_per_image=(values["cells_min"], values["cells_max"]), radius=radius,
                      foreground=values["foreground"], background=values["background"],
                      noise_sigma=values["noise_sigma"], seed=values["seed"])
    paths = write_dataset(generate(cfg), values["out"], force=values["force"])
    print(f"wrote {len(paths)} files under {values['out']}")
    return 0


def cmd_train(values: dict, explicit: dict) -> int:
    from .imagedata import load_dataset
    from .pipeline import prepare, train_to_dir

    _require(values, "images", "masks")
    out_dir = Path(values["out_dir"]) if values["out_dir"] else config.default_run_dir("train")
    policy = config.resize_policy(values)
    model_cfg = config.model_config(values)
    train_cfg = config.train_config(values)
    ds = load_dataset(values["images"], values["masks"], mask_threshold=values["mask_threshold"])
    ds = prepare(ds, policy, model_cfg.in_channels)
    out_dir.mkdir(parents=True, exist_ok=True)
    keys = [k for k in COMMAND_KEYS["train"] if values.get(k) is not None]
    (out_dir / "config.txt").write_text(config.dump_config(values, keys))
    _, history = train_to_dir(ds, model_cfg, train_cfg, policy, out_dir)
    final = f", final loss {history.losses[-1]:.6f}" if history.losses else ""
    print(f"trained {len(history)} epochs on {len(ds)} images{final}")
    print(f"checkpoint: {out_dir / 'model.ckpt'}")
    return 0


def _checkpoint_model(values: dict, explicit: dict):
    from .checkpoint import read_checkpoint
    from .errors import ConfigMismatchError
    from .pipeline import policy_from_extra

    model, extra = read_checkpoint(values["checkpoint"])
    diffs = [f"{k}: checkpoint {getattr(model.config, k)} vs requested {explicit[k]}"
             for k in MODEL if k in explicit and explicit[k] != getattr(model.config, k)]
    if diffs:
        raise ConfigMismatchError(f"checkpoint {values['checkpoint']} does not match: " + "; ".join(diffs))
    policy = policy_from_extra(extra)
    if "height" in explicit or "width_multiple" in explicit:
        from .transforms import ResizePolicy

        policy = ResizePolicy(explicit.get("height", policy.target_height),
                              explicit.get("width_multiple", policy.width_multiple))
    return model, policy


def cmd_eval(values: dict, explicit: dict) -> int:
    from .imagedata import load_dataset
    from .metrics import evaluate
    from .pipeline import prepare, write_metrics_csv

    _require(values, "checkpoint", "images", "masks")
    model, policy = _checkpoint_model(values, explicit)
    ds = load_dataset(values["images"], values["masks"], mask_threshold=values["mask_threshold"])
    ds = prepare(ds, policy, model.config.in_channels)
    report = evaluate(model, ds, values["threshold"], average=values["average"])
    text = write_metrics_csv([report.csv_row(ds.name, model.config.seed)], values["csv"])
    print(report.table(f"{ds.name}: {values['checkpoint']}"))
    if not values["csv"]:
        print()
        print(text, end="")
    return 0


def cmd_predict(values: dict, explicit: dict) -> int:
    from .imagedata import load_dataset
    from .pipeline import predict_images, prepare

    _require(values, "checkpoint", "images")
    model, policy = _checkpoint_model(values, explicit)
    out_dir = Path(values["out_dir"]) if values["out_dir"] else config.default_run_dir("predict")
    written = predict_images(model, policy, values["images"], out_dir, values["threshold"])
    print(f"wrote {len(written)} masks to {out_dir}")
    if values["figure"]:
        from .bench import render_comparison

        _require(values, "masks")
        ds = prepare(load_dataset(values["images"], values["masks"], mask_threshold=values["mask_threshold"]),
                     policy, model.config.in_channels)
        print(f"figure: {render_comparison(model, list(ds), values['figure'], values['threshold'])}")
    return 0


def cmd_bench(values: dict, explicit: dict) -> int:
    from .bench import run_benchmark, spec_from_values, summary_table

    spec = spec_from_values(values)
    run_dir = Path(values["out_dir"]) if values["out_dir"] else config.default_run_dir(f"bench-{spec.name}")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "spec.txt").write_text(config.dump_config(values))
    result = run_benchmark(spec, run_dir)
    print(summary_table(spec.name, result))
    print(f"run directory: {run_dir}")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        values, explicit = _gather(args)
        return COMMANDS[args.command](values, explicit)
    except ConfigError as exc:
        print(f"cellseg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError) as exc:
        print(f"cellseg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except CellSegError as exc:
        print(f"cellseg {args.command}: error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - last-resort one-line diagnostic
        print(f"cellseg {args.command}: unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
