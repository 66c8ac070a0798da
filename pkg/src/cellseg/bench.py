"""Multi-seed benchmark protocol and qualitative comparison figures.

Run directory layout (``run_benchmark(spec, run_dir)``)::

    run_dir/
      spec.txt            resolved benchmark configuration
      runs.csv            one metrics row per completed run (schema: metrics.CSV_FIELDS)
      aggregate.csv       statistic,precision,recall,f1,auroc,miou,n_runs (mean + sample std)
      summary.txt         human-readable table
      failures.txt        only if some run failed: "seed<TAB>error"
      seed_<s>/           model.ckpt, train.log, history.csv, metrics.csv, comparison.png

Per seed ``s``: random splits use split seed ``s``; model init and batch order
use seed ``s`` as well. By-sequence benchmarks train on sequence 1 and test on
sequence 2 for every seed.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import CellSegError, ConfigError
from .imagedata import SegmentationDataset, SplitMode, SplitSpec, load_dataset_root, split
from .metrics import METRIC_NAMES, MetricsReport, evaluate, predict_dataset
from .model import UNetConfig, UNetModel
from .pipeline import prepare, train_to_dir, write_metrics_csv
from .training import TrainConfig
from .transforms import ResizePolicy

log = logging.getLogger(__name__)

AGGREGATE_FIELDS = ("statistic",) + METRIC_NAMES + ("n_runs",)


@dataclass
class BenchmarkSpec:
    name: str
    data: str | None = None
    train_data: str | None = None
    test_data: str | None = None
    split: SplitSpec | None = None  # None: by_sequence for a sequence pair, else random_fraction
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    model_cfg: UNetConfig = field(default_factory=UNetConfig)
    policy: ResizePolicy = field(default_factory=ResizePolicy)
    seeds: list[int] | None = None
    n_runs: int = 5
    threshold: float = 0.5
    average: str = "pooled"
    workers: int = 1
    mask_threshold: float = 0.0

    def __post_init__(self):
        if self.split is None:
            paired = self.train_data and self.test_data
            self.split = SplitSpec(SplitMode.BY_SEQUENCE if paired else SplitMode.RANDOM_FRACTION)
        if self.seeds is None:
            self.seeds = list(range(1, self.n_runs + 1))
        self.seeds = list(self.seeds)
        if len(self.seeds) != self.n_runs:
            raise ConfigError(f"{len(self.seeds)} seeds given for n_runs={self.n_runs}")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if self.split.mode is SplitMode.BY_SEQUENCE:
            if not (self.train_data and self.test_data):
                raise ConfigError("by_sequence benchmarks need train_data and test_data")
        elif not self.data:
            raise ConfigError("random_fraction benchmarks need data")


@dataclass
class BenchmarkResult:
    runs: list[tuple[int, MetricsReport]]
    mean: dict[str, float]
    std: dict[str, float]
    failures: list[tuple[int, str]]
    run_dir: Path | None = None


def aggregate(reports: Sequence[MetricsReport]) -> tuple[dict[str, float], dict[str, float]]:
    """Arithmetic mean and sample standard deviation per metric (0 std for one run).

    Sums use ``math.fsum`` so the result does not depend on run order.
    """
    n = len(reports)
    if n == 0:
        raise CellSegError("no completed runs to aggregate")
    mean, std = {}, {}
    for name in METRIC_NAMES:
        values = [getattr(r, name) for r in reports]
        mu = math.fsum(values) / n
        mean[name] = mu
        std[name] = math.sqrt(math.fsum((v - mu) ** 2 for v in values) / (n - 1)) if n > 1 else 0.0
    return mean, std


def _load_splits(spec: BenchmarkSpec):
    kw = {"mask_threshold": spec.mask_threshold}
    if spec.split.mode is SplitMode.BY_SEQUENCE:
        seq1 = load_dataset_root(spec.train_data, sequence_tag="01", **kw)
        seq2 = load_dataset_root(spec.test_data, sequence_tag="02", **kw)
        return prepare(seq1, spec.policy, spec.model_cfg.in_channels), \
            prepare(seq2, spec.policy, spec.model_cfg.in_channels)
    return prepare(load_dataset_root(spec.data, **kw), spec.policy, spec.model_cfg.in_channels), None


def run_single(spec: BenchmarkSpec, seed: int, full: SegmentationDataset,
               other: SegmentationDataset | None, run_dir: Path | None) -> MetricsReport:
    train_ds, test_ds = split(full, replace(spec.split, seed=seed), other)
    model_cfg = replace(spec.model_cfg, seed=seed)
    train_cfg = replace(spec.train_cfg, seed=seed)
    out = run_dir / f"seed_{seed}" if run_dir is not None else None
    if out is not None:
        model, _ = train_to_dir(train_ds, model_cfg, train_cfg, spec.policy, out)
    else:
        from .model import build_unet
        from .training import train

        model, _ = train(build_unet(model_cfg), train_ds, train_cfg)
    report = evaluate(model, test_ds, spec.threshold, average=spec.average)
    if out is not None:
        write_metrics_csv([report.csv_row(spec.name, seed)], out / "metrics.csv")
        render_comparison(model, list(test_ds)[:3], out / "comparison.png", spec.threshold)
    return report


def _run_job(args):
    spec, seed, full, other, run_dir = args
    try:
        return seed, run_single(spec, seed, full, other, run_dir), None
    except Exception as exc:  # recorded per run; aggregation continues
        return seed, None, f"{type(exc).__name__}: {exc}"


def run_benchmark(spec: BenchmarkSpec, run_dir=None) -> BenchmarkResult:
    run_dir = Path(run_dir) if run_dir is not None else None
    full, other = _load_splits(spec)
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(spec, seed, full, other, run_dir) for seed in spec.seeds]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            outcomes = list(pool.map(_run_job, jobs))
    else:
        outcomes = [_run_job(job) for job in jobs]
    runs = [(seed, rep) for seed, rep, err in outcomes if rep is not None]
    failures = [(seed, err) for seed, _, err in outcomes if err is not None]
    for seed, err in failures:
        warnings.warn(f"benchmark run with seed {seed} failed: {err}")
    if not runs:
        raise CellSegError("every benchmark run failed: " + "; ".join(e for _, e in failures))
    if failures:
        warnings.warn(f"aggregating {len(runs)} of {len(spec.seeds)} runs")
    mean, std = aggregate([r for _, r in runs])
    result = BenchmarkResult(runs, mean, std, failures, run_dir)
    if run_dir is not None:
        write_metrics_csv([r.csv_row(spec.name, s) for s, r in runs], run_dir / "runs.csv")
        (run_dir / "aggregate.csv").write_text(aggregate_csv(mean, std, len(runs)))
        (run_dir / "summary.txt").write_text(summary_table(spec.name, result) + "\n")
        if failures:
            (run_dir / "failures.txt").write_text("".join(f"{s}\t{e}\n" for s, e in failures))
    return result


def aggregate_csv(mean: dict, std: dict, n_runs: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(AGGREGATE_FIELDS)
    writer.writerow(["mean"] + [mean[m] for m in METRIC_NAMES] + [n_runs])
    writer.writerow(["std"] + [std[m] for m in METRIC_NAMES] + [n_runs])
    return buf.getvalue()


def summary_table(name: str, result: BenchmarkResult) -> str:
    head = f"{'dataset':<16}" + "".join(f"{m:>18}" for m in ("precision", "recall", "f1", "auroc", "miou"))
    row = f"{name:<16}" + "".join(f"{result.mean[m]:>10.4f} ± {result.std[m]:<5.3f}" for m in METRIC_NAMES)
    return "\n".join([head, row, f"({len(result.runs)} runs, seeds {[s for s, _ in result.runs]})"])


# ---------------------------------------------------------------- figures

GUTTER = 4


def _to_gray_u8(px: np.ndarray) -> np.ndarray:
    """``H x W x C`` in [0, 1] -> uint8 RGB."""
    rgb = np.repeat(px, 3, axis=2) if px.shape[2] == 1 else px[:, :, :3]
    return np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)


def _mask_u8(mask: np.ndarray) -> np.ndarray:
    return np.repeat((mask.astype(np.uint8) * 255)[:, :, None], 3, axis=2)


def render_comparison(model: UNetModel, samples, out_path, threshold: float = 0.5) -> Path:
    """PNG grid, one row per ``(image, mask)`` sample: input | prediction | ground truth.

    Prediction is channel 0 of the model output thresholded at ``threshold``
    (``prob >= threshold`` is foreground, drawn white). Panels are separated by
    a 4 px white gutter. Output bytes depend only on the inputs.
    """
    samples = list(samples)
    if not samples:
        raise ConfigError("render_comparison needs at least one sample")
    ds = SegmentationDataset(tuple(samples))
    probs = [predict_dataset(model, ds.subset([i]), 1)[0] for i in range(len(ds))]
    rows = []
    for (image, mask), prob in zip(samples, probs):
        pred = prob[0] >= threshold
        panels = [_to_gray_u8(image.pixels), _mask_u8(pred), _mask_u8(mask.pixels)]
        h = image.height
        gap = np.full((h, GUTTER, 3), 255, np.uint8)
        rows.append(np.concatenate([panels[0], gap, panels[1], gap, panels[2]], axis=1))
    width = max(r.shape[1] for r in rows)
    canvas = []
    for i, r in enumerate(rows):
        if i:
            canvas.append(np.full((GUTTER, width, 3), 255, np.uint8))
        pad = np.full((r.shape[0], width - r.shape[1], 3), 255, np.uint8)
        canvas.append(np.concatenate([r, pad], axis=1))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.concatenate(canvas, axis=0)).save(out_path)
    return out_path


def spec_from_values(v: dict) -> BenchmarkSpec:
    """Build a BenchmarkSpec from resolved config values (see ``cellseg.config``)."""
    from . import config

    n_runs = v["n_runs"] if v.get("seeds") is None else len(v["seeds"])
    name = v.get("name") or Path(v.get("data") or v.get("train_data") or "benchmark").name
    return BenchmarkSpec(name=name, data=v.get("data"), train_data=v.get("train_data"),
                         test_data=v.get("test_data"), split=config.split_spec(v),
                         train_cfg=config.train_config(v), model_cfg=config.model_config(v),
                         policy=config.resize_policy(v), seeds=v.get("seeds"), n_runs=n_runs,
                         threshold=v["threshold"], average=v["average"], workers=v["workers"],
                         mask_threshold=v["mask_threshold"])
