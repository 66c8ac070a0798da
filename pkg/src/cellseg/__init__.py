"""Cell segmentation toolkit: paired image/mask datasets, numpy UNet, training and metrics."""

__version__ = "0.1.0"

from .imagedata import (ImageSample, MaskSample, SegmentationDataset, SplitMode, SplitSpec,
                        iterate_batches, load_dataset, split_by_sequence, split_random)
from .metrics import ConfusionCounts, MetricsReport, auroc, confusion_counts, evaluate
from .model import UNetConfig, UNetModel, build_unet, forward, parameter_count
from .training import TrainConfig, TrainHistory, bce_loss, train
from .transforms import ResizePolicy, binarize_mask, normalize_image, resize_image, resize_mask
from .checkpoint import load_checkpoint, save_checkpoint
