"""Paired image/mask datasets: loading, splitting and batching.

On-disk contract: ``images_dir`` and ``masks_dir`` hold files with the same
filename stem (``a.png`` pairs with ``a.tif``). PNG and 8/16-bit TIFF are
read; pixel values are kept at their raw integer scale (converted to
float64), so a 16-bit frame keeps values up to 65535 until normalized.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import floor
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import tifffile
from PIL import Image, UnidentifiedImageError

from . import rng
from .errors import ConfigError, DataError, MissingMaskError, ShapeError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".tif", ".tiff")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ImageSample:
    id: str
    pixels: np.ndarray  # H x W x C

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3) or px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeError(f"image '{self.id}' must be H x W x {{1,3}}, got shape {px.shape}")
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True, eq=False)
class MaskSample:
    id: str
    pixels: np.ndarray  # H x W, uint8 in {0, 1}

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ShapeError(f"mask '{self.id}' must be single-channel H x W, got shape {px.shape}")
        if not np.isin(px, (0, 1)).all():
            raise DataError(f"mask '{self.id}' is not binary; apply binarize_mask first")
        object.__setattr__(self, "pixels", _freeze(px.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class SegmentationDataset:
    pairs: tuple[tuple[ImageSample, MaskSample], ...]
    name: str = ""
    sequence_tag: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        seen = set()
        for image, mask in self.pairs:
            if image.id != mask.id:
                raise DataError(f"pair ids differ: image '{image.id}' vs mask '{mask.id}'")
            if image.id in seen:
                raise DataError(f"duplicate sample id '{image.id}' in dataset '{self.name}'")
            seen.add(image.id)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, index):
        return self.pairs[index]

    @property
    def ids(self) -> list[str]:
        return [image.id for image, _ in self.pairs]

    def subset(self, indices: Sequence[int], name: str | None = None) -> "SegmentationDataset":
        return SegmentationDataset(tuple(self.pairs[i] for i in indices),
                                   self.name if name is None else name, self.sequence_tag)


class SplitMode(str, enum.Enum):
    RANDOM_FRACTION = "random_fraction"
    BY_SEQUENCE = "by_sequence"


@dataclass(frozen=True)
class SplitSpec:
    mode: SplitMode = SplitMode.RANDOM_FRACTION
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", SplitMode(self.mode))
        if self.mode is SplitMode.RANDOM_FRACTION and not 0 < self.test_fraction < 1:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")


# ---------------------------------------------------------------- loading


def read_array(path: Path) -> np.ndarray:
    """Decode one PNG/TIFF file to a raw-valued float64 array (H x W or H x W x C)."""
    path = Path(path)
    try:
        if path.suffix.lower() in (".tif", ".tiff"):
            arr = tifffile.imread(path)
            if arr.ndim == 3 and arr.shape[0] in (3, 4) and arr.shape[-1] not in (3, 4):
                arr = np.moveaxis(arr, 0, -1)
        else:
            with Image.open(path) as im:
                if im.mode == "P":
                    im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                elif im.mode == "LA":
                    im = im.convert("L")
                arr = np.array(im)
    except (OSError, ValueError, UnidentifiedImageError, tifffile.TiffFileError) as exc:
        raise DataError(f"cannot read image file {path}: {exc}") from exc
    if arr.ndim == 3 and arr.shape[-1] == 4:
        arr = arr[..., :3]
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[-1] != 3):
        raise DataError(f"unsupported image layout {arr.shape} in {path}")
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    return arr.astype(np.float64)


def index_dir(directory: Path) -> dict[str, Path]:
    files: dict[str, Path] = {}
    for p in sorted(directory.iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            if p.stem in files:
                raise DataError(f"two files share the stem '{p.stem}' in {directory}")
            files[p.stem] = p
    return files


def _load_pair(stem: str, image_path: Path, mask_path: Path):
    img = read_array(image_path)
    raw_mask = read_array(mask_path)
    if raw_mask.ndim != 2:
        raise DataError(f"mask {mask_path} must be single-channel, got shape {raw_mask.shape}")
    if img.shape[:2] != raw_mask.shape:
        raise ShapeError(f"image {image_path} is {img.shape[0]}x{img.shape[1]} but mask "
                         f"{mask_path} is {raw_mask.shape[0]}x{raw_mask.shape[1]}")
    return ImageSample(stem, img), raw_mask


def load_dataset(images_dir, masks_dir, *, name: str | None = None,
                 sequence_tag: str | None = None, binarize: bool = True,
                 mask_threshold: float = 0.0, workers: int = 1) -> SegmentationDataset:
    """Pair files by stem and decode them, sorted lexicographically by stem.

    Masks are binarized (``raw > mask_threshold``) on load unless
    ``binarize=False``, in which case they must already be 0/1.
    """
    from .transforms import binarize_mask

    images_dir, masks_dir = Path(images_dir), Path(masks_dir)
    for d in (images_dir, masks_dir):
        if not d.is_dir():
            raise DataError(f"directory does not exist: {d}")
    images = index_dir(images_dir)
    masks = index_dir(masks_dir)
    if not images:
        raise DataError(f"no PNG/TIFF images found in {images_dir}")
    for stem in images:
        if stem not in masks:
            raise MissingMaskError(stem, str(masks_dir))
    stems = sorted(images)
    jobs = [(s, images[s], masks[s]) for s in stems]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            loaded = list(pool.map(lambda job: _load_pair(*job), jobs))
    else:
        loaded = [_load_pair(*job) for job in jobs]
    pairs = []
    for image, raw in loaded:
        mask = binarize_mask(raw, mask_threshold, id=image.id) if binarize else MaskSample(image.id, raw)
        pairs.append((image, mask))
    extra = set(masks) - set(images)
    if extra:
        log.info("ignoring %d masks without images in %s", len(extra), masks_dir)
    return SegmentationDataset(tuple(pairs), name if name is not None else images_dir.parent.name,
                               sequence_tag)


def load_dataset_root(root, **kwargs) -> SegmentationDataset:
    """Load ``<root>/images`` + ``<root>/masks``."""
    root = Path(root)
    kwargs.setdefault("name", root.name)
    return load_dataset(root / "images", root / "masks", **kwargs)


# ---------------------------------------------------------------- splitting


def n_test_samples(n: int, fraction: float) -> int:
    """``round_half_up(n * fraction)``, with ``fraction`` read as its shortest decimal."""
    return floor(n * Fraction(repr(float(fraction))) + Fraction(1, 2))


def split_random(ds: SegmentationDataset, spec: SplitSpec):
    """Seeded random train/test split.

    The sample order is shuffled with :func:`cellseg.rng.permutation` (SplitMix64
    Fisher-Yates) seeded by ``spec.seed``; the first ``round_half_up(n *
    test_fraction)`` shuffled indices form the test set. Both halves keep the
    original dataset order.
    """
    if spec.mode is not SplitMode.RANDOM_FRACTION:
        raise ConfigError(f"split_random needs mode random_fraction, got {spec.mode.value}")
    if len(ds) == 0:
        raise DataError("cannot split an empty dataset")
    order = rng.permutation(len(ds), spec.seed)
    k = n_test_samples(len(ds), spec.test_fraction)
    test_idx = sorted(order[:k])
    train_idx = sorted(order[k:])
    return ds.subset(train_idx), ds.subset(test_idx)


def split_by_sequence(seq1: SegmentationDataset, seq2: SegmentationDataset):
    if len(seq1) == 0 or len(seq2) == 0:
        raise DataError("both sequences must be nonempty")
    return seq1, seq2


def split(ds: SegmentationDataset, spec: SplitSpec, other: SegmentationDataset | None = None):
    if spec.mode is SplitMode.BY_SEQUENCE:
        if other is None:
            raise ConfigError("by_sequence split needs a second dataset")
        return split_by_sequence(ds, other)
    return split_random(ds, spec)


# ---------------------------------------------------------------- batching


def check_uniform_shape(ds: SegmentationDataset) -> tuple[int, int, int]:
    shapes: dict[tuple, list[str]] = {}
    for image, mask in ds:
        if mask.pixels.shape != image.pixels.shape[:2]:
            raise ShapeError(f"sample '{image.id}': mask {mask.pixels.shape} != image "
                             f"{image.pixels.shape[:2]}")
        shapes.setdefault(image.pixels.shape, []).append(image.id)
    if len(shapes) > 1:
        ref = max(shapes, key=lambda s: len(shapes[s]))
        odd = [i for s, ids in shapes.items() if s != ref for i in ids]
        raise ShapeError(f"samples differ in shape from {ref}: {', '.join(odd)}")
    return next(iter(shapes))


def epoch_order(n: int, shuffle: bool, seed: int, epoch: int = 0) -> list[int]:
    if not shuffle:
        return list(range(n))
    return rng.permutation(n, rng.derive_seed(seed, epoch))


@dataclass
class BatchIterator:
    """Re-iterable batch stream; each pass is one epoch with its own order."""

    ds: SegmentationDataset
    batch_size: int
    shuffle: bool = False
    seed: int = 0
    mask_channels: int = 1
    dtype: type = np.float32
    epoch: int = 0
    _shape: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        self._shape = check_uniform_shape(self.ds) if len(self.ds) else (0, 0, 0)

    def __len__(self) -> int:
        return -(-len(self.ds) // self.batch_size)

    def batches(self, epoch: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        order = epoch_order(len(self.ds), self.shuffle, self.seed, epoch)
        for start in range(0, len(order), self.batch_size):
            idx = order[start:start + self.batch_size]
            images = np.stack([self.ds[i][0].pixels.transpose(2, 0, 1) for i in idx]).astype(self.dtype)
            masks = np.stack([self.ds[i][1].pixels for i in idx])[:, None].astype(self.dtype)
            if self.mask_channels > 1:
                masks = np.repeat(masks, self.mask_channels, axis=1)
            yield images, masks

    def __iter__(self):
        yield from self.batches(self.epoch)
        self.epoch += 1


def iterate_batches(ds: SegmentationDataset, batch_size: int, shuffle: bool = False,
                    seed: int = 0, epoch: int = 0, mask_channels: int = 1):
    """List of ``(images N x C x H x W, masks N x K x H x W)`` batches for one epoch."""
    return list(BatchIterator(ds, batch_size, shuffle, seed, mask_channels).batches(epoch))
