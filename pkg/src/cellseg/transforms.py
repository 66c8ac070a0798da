"""Deterministic preprocessing: min-max normalization, resizing, mask binarization.

Resizing keeps the aspect ratio: the output height is ``target_height`` and
the width is ``round_half_up(W * target_height / H / width_multiple) *
width_multiple`` (at least ``width_multiple``). Both the width formula and the
rounding are evaluated in exact rational arithmetic.

Sampling convention (pixel centres, "align corners off"): output index ``o``
along an axis of input length ``n_in`` and output length ``n_out`` reads the
source coordinate ``s = (o + 0.5) * n_in / n_out - 0.5``, clamped to
``[0, n_in - 1]``.

* images, bilinear: ``i0 = floor(s)``, ``i1 = min(i0 + 1, n_in - 1)``,
  ``v = (1 - (s - i0)) * x[i0] + (s - i0) * x[i1]``, applied to rows then columns.
* masks, nearest: ``i = min(floor((o + 0.5) * n_in / n_out), n_in - 1)``.

No antialiasing filter is applied when downscaling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction
from math import floor

import numpy as np

from .imagedata import ImageSample, MaskSample, SegmentationDataset
from .errors import ConfigError


@dataclass(frozen=True)
class ResizePolicy:
    target_height: int = 256
    width_multiple: int = 16
    image_interpolation: str = "bilinear"
    mask_interpolation: str = "nearest"

    def __post_init__(self):
        if self.target_height < 1 or self.width_multiple < 1:
            raise ConfigError("target_height and width_multiple must be positive")
        if self.image_interpolation != "bilinear" or self.mask_interpolation != "nearest":
            raise ConfigError("only bilinear image / nearest mask interpolation are supported")

    def output_size(self, height: int, width: int, *, warn: bool = True) -> tuple[int, int]:
        if height < 1 or width < 1:
            raise ConfigError(f"cannot resize a {height}x{width} image")
        units = Fraction(width * self.target_height, height * self.width_multiple)
        n = floor(units + Fraction(1, 2))
        if n < 1:
            if warn:
                warnings.warn(f"resized width for {height}x{width} falls below {self.width_multiple}; "
                              f"using {self.width_multiple}", stacklevel=3)
            n = 1
        return self.target_height, n * self.width_multiple


def normalize_image(img: ImageSample) -> ImageSample:
    """Per-image min-max scaling to ``[0, 1]``; constant images become all zeros."""
    px = img.pixels
    lo, hi = px.min(), px.max()
    if hi == lo:
        return ImageSample(img.id, np.zeros_like(px))
    return ImageSample(img.id, (px - lo) / (hi - lo))


def _source_coords(n_in: int, n_out: int):
    s = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    s = np.clip(s, 0, n_in - 1)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, s - i0


def bilinear_resize(px: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize an ``H x W x C`` array."""
    r0, r1, fr = _source_coords(px.shape[0], height)
    c0, c1, fc = _source_coords(px.shape[1], width)
    rows = px[r0] * (1 - fr)[:, None, None] + px[r1] * fr[:, None, None]
    return rows[:, c0] * (1 - fc)[None, :, None] + rows[:, c1] * fc[None, :, None]


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    return np.minimum(np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.intp), n_in - 1)


def nearest_resize(px: np.ndarray, height: int, width: int) -> np.ndarray:
    return px[nearest_indices(px.shape[0], height)][:, nearest_indices(px.shape[1], width)]


def resize_image(img: ImageSample, policy: ResizePolicy = ResizePolicy()) -> ImageSample:
    h, w = policy.output_size(img.height, img.width)
    if (h, w) == (img.height, img.width):
        return img
    return ImageSample(img.id, bilinear_resize(img.pixels, h, w))


def resize_mask(mask: MaskSample, policy: ResizePolicy = ResizePolicy(),
                size: tuple[int, int] | None = None) -> MaskSample:
    h, w = size if size is not None else policy.output_size(mask.height, mask.width)
    if (h, w) == (mask.height, mask.width):
        return mask
    return MaskSample(mask.id, nearest_resize(mask.pixels, h, w))


def binarize_mask(raw, threshold: float = 0.0, *, id: str = "") -> MaskSample:
    """Foreground is ``raw > threshold``; instance label images collapse to 0/1."""
    raw = np.asarray(raw)
    if raw.ndim == 3 and raw.shape[-1] == 1:
        raw = raw[..., 0]
    return MaskSample(id, (raw > threshold).astype(np.uint8))


def match_channels(img: ImageSample, channels: int) -> ImageSample:
    """Replicate grayscale to ``channels`` or average RGB down to one channel."""
    if img.channels == channels:
        return img
    if img.channels == 1:
        return ImageSample(img.id, np.repeat(img.pixels, channels, axis=2))
    if channels == 1:
        return ImageSample(img.id, img.pixels.mean(axis=2, keepdims=True))
    raise ConfigError(f"cannot map {img.channels}-channel image '{img.id}' to {channels} channels")


def preprocess_sample(image: ImageSample, mask: MaskSample, policy: ResizePolicy,
                      in_channels: int | None = None):
    """Pipeline default order: normalize, resize, then channel matching."""
    image = resize_image(normalize_image(image), policy)
    mask = resize_mask(mask, size=(image.height, image.width))
    if in_channels is not None:
        image = match_channels(image, in_channels)
    return image, mask


def preprocess_dataset(ds: SegmentationDataset, policy: ResizePolicy = ResizePolicy(),
                       in_channels: int | None = None) -> SegmentationDataset:
    pairs = tuple(preprocess_sample(img, mask, policy, in_channels) for img, mask in ds)
    return SegmentationDataset(pairs, ds.name, ds.sequence_tag)
