"""Few-call pipeline: load -> preprocess -> train -> evaluate -> predict."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import read_checkpoint, save_checkpoint
from .imagedata import ImageSample, SegmentationDataset, index_dir, load_dataset, read_array
from .metrics import CSV_FIELDS, MetricsReport, evaluate
from .model import UNetConfig, UNetModel, build_unet
from .training import TrainConfig, TrainHistory, train
from .transforms import (ResizePolicy, match_channels, nearest_resize, normalize_image,
                         preprocess_dataset, resize_image)

CHECKPOINT_NAME = "model.ckpt"


def prepare(ds: SegmentationDataset, policy: ResizePolicy, in_channels: int) -> SegmentationDataset:
    return preprocess_dataset(ds, policy, in_channels)


def policy_extra(policy: ResizePolicy) -> dict:
    return {"resize": asdict(policy)}


def policy_from_extra(extra: dict, fallback: ResizePolicy | None = None) -> ResizePolicy:
    if "resize" in extra:
        return ResizePolicy(**extra["resize"])
    return fallback or ResizePolicy()


def write_metrics_csv(rows: list[dict], path=None) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def train_to_dir(train_ds: SegmentationDataset, model_cfg: UNetConfig, train_cfg: TrainConfig,
                 policy: ResizePolicy, out_dir, *, echo=None) -> tuple[UNetModel, TrainHistory]:
    """Train on an already preprocessed dataset and write checkpoint + logs to ``out_dir``.

    Files: ``model.ckpt``, ``train.log`` (one line per epoch), ``history.csv``
    and ``epoch_XXXX.ckpt`` snapshots when ``checkpoint_every`` is set.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    extra = policy_extra(policy)
    log_path = out_dir / "train.log"
    with log_path.open("w") as log_file:
        def on_epoch(epoch, loss, seconds):
            line = f"epoch {epoch:4d}/{train_cfg.epochs} loss {loss:.6f} seconds {seconds:.3f}"
            log_file.write(line + "\n")
            log_file.flush()
            if echo is not None:
                echo(line)

        model, history = train(build_unet(model_cfg), train_ds, train_cfg, checkpoint_dir=out_dir,
                               checkpoint_extra=extra, on_epoch=on_epoch)
    save_checkpoint(model, out_dir / CHECKPOINT_NAME, extra)
    (out_dir / "history.csv").write_text(history.to_csv())
    return model, history


def load_for_eval(checkpoint, images_dir, masks_dir, *, mask_threshold: float = 0.0,
                  policy: ResizePolicy | None = None):
    model, extra = read_checkpoint(checkpoint)
    policy = policy or policy_from_extra(extra)
    ds = load_dataset(images_dir, masks_dir, mask_threshold=mask_threshold)
    return model, prepare(ds, policy, model.config.in_channels), policy


def evaluate_checkpoint(checkpoint, images_dir, masks_dir, threshold: float = 0.5, **kwargs) -> MetricsReport:
    average = kwargs.pop("average", "pooled")
    model, ds, _ = load_for_eval(checkpoint, images_dir, masks_dir, **kwargs)
    return evaluate(model, ds, threshold, average=average)


def predict_images(model: UNetModel, policy: ResizePolicy, images_dir, out_dir,
                   threshold: float = 0.5) -> list[Path]:
    """Write one 0/255 PNG mask per input image, at the input's original size."""
    images_dir, out_dir = Path(images_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for stem, path in index_dir(images_dir).items():
        original = ImageSample(stem, read_array(path))
        img = match_channels(resize_image(normalize_image(original), policy), model.config.in_channels)
        prob = model.forward(img.pixels.transpose(2, 0, 1)[None].astype(model.dtype))[0, 0]
        mask = (prob >= threshold).astype(np.uint8)
        mask = nearest_resize(mask, original.height, original.width)
        target = out_dir / f"{stem}.png"
        Image.fromarray(mask * np.uint8(255)).save(target)
        written.append(target)
    return written
