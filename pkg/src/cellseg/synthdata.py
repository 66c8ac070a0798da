"""Synthetic microscopy-like frames with exact ground truth.

Each frame is a flat background with a few filled, rotated ellipses ("cells")
at a foreground level, plus optional Gaussian noise. The mask is the union of
the ellipse interiors, rasterized at pixel centres, so it is exact regardless
of noise. Image values are clipped to [0, 1] and quantized to multiples of
1/255 so that an 8-bit PNG stores them losslessly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError
from .imagedata import IMAGE_SUFFIXES, ImageSample, MaskSample, SegmentationDataset
from .rng import numpy_rng


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 16
    height: int = 256
    width: int = 256
    cells_per_image: tuple[int, int] = (3, 5)
    radius: tuple[float, float] | None = None  # default (3/32, 3/16) * min(height, width)
    foreground: float = 0.8
    background: float = 0.2
    noise_sigma: float = 0.05
    seed: int = 0
    channels: int = 1

    def __post_init__(self):
        if self.radius is None:
            side = min(self.height, self.width)
            object.__setattr__(self, "radius", (side * 3 / 32, side * 3 / 16))
        lo, hi = self.cells_per_image
        rlo, rhi = self.radius
        if self.n_images < 1 or self.height < 1 or self.width < 1:
            raise ConfigError("n_images, height and width must be positive")
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad cells_per_image range {self.cells_per_image}")
        if not 0 < rlo <= rhi:
            raise ConfigError(f"bad radius range {self.radius}")
        if rhi >= min(self.height, self.width) / 2:
            raise ConfigError(f"radius {rhi} does not fit a {self.height}x{self.width} frame "
                              f"(needs radius < {min(self.height, self.width) / 2})")
        if not (0 <= self.foreground <= 1 and 0 <= self.background <= 1):
            raise ConfigError("foreground/background means must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")


def render_cells(cfg: SynthConfig, index: int):
    """Return ``(image H x W x C, mask H x W)`` for frame ``index``."""
    gen = numpy_rng(cfg.seed, index)
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.zeros((h, w), dtype=bool)
    n_cells = int(gen.integers(cfg.cells_per_image[0], cfg.cells_per_image[1] + 1))
    for _ in range(n_cells):
        a, b = gen.uniform(cfg.radius[0], cfg.radius[1], size=2)
        theta = gen.uniform(0, np.pi)
        r = max(a, b)
        cy = gen.uniform(r, h - 1 - r)
        cx = gen.uniform(r, w - 1 - r)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        mask |= (u / a) ** 2 + (v / b) ** 2 <= 1.0
    image = np.where(mask, cfg.foreground, cfg.background)
    if cfg.noise_sigma > 0:
        image = image + gen.normal(0.0, cfg.noise_sigma, size=image.shape)
    image = np.round(np.clip(image, 0.0, 1.0) * 255) / 255
    if cfg.channels == 3:
        image = np.repeat(image[:, :, None], 3, axis=2)
    return image, mask.astype(np.uint8)


def generate(cfg: SynthConfig = SynthConfig()) -> SegmentationDataset:
    """Deterministic dataset; frame ``i`` draws from its own sub-seed ``(seed, i)``."""
    pairs = []
    for i in range(cfg.n_images):
        image, mask = render_cells(cfg, i)
        sid = f"synth_{i:04d}"
        pairs.append((ImageSample(sid, image), MaskSample(sid, mask)))
    return SegmentationDataset(tuple(pairs), name=f"synth-seed{cfg.seed}")


def write_dataset(ds: SegmentationDataset, root, *, force: bool = False) -> list[Path]:
    """Write ``<root>/images/<id>.png`` (8-bit) and ``<root>/masks/<id>.png`` (0/255)."""
    root = Path(root)
    images_dir, masks_dir = root / "images", root / "masks"
    existing = [p for d in (images_dir, masks_dir) if d.is_dir()
                for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES]
    if existing and not force:
        raise DataError(f"{root} already holds a dataset ({len(existing)} image files); "
                        "use force to overwrite")
    try:
        for p in existing:
            p.unlink()
        images_dir.mkdir(parents=True, exist_ok=True)
        masks_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for image, mask in ds:
            px = np.round(image.pixels * 255).astype(np.uint8)
            px = px[:, :, 0] if px.shape[2] == 1 else px
            ip = images_dir / f"{image.id}.png"
            mp = masks_dir / f"{mask.id}.png"
            Image.fromarray(px).save(ip)
            Image.fromarray(mask.pixels * np.uint8(255)).save(mp)
            paths += [ip, mp]
    except OSError as exc:
        raise DataError(f"cannot write dataset under {root}: {exc}") from exc
    return paths
