import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from cellseg.imagedata import ImageSample, MaskSample, SegmentationDataset  # noqa: E402
from cellseg.model import UNetConfig  # noqa: E402


def make_ds(n, h=16, w=16, c=1, prefix="s", seed=0):
    gen = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        sid = f"{prefix}{i:02d}"
        pairs.append((ImageSample(sid, gen.random((h, w, c))),
                      MaskSample(sid, (gen.random((h, w)) > 0.5).astype(np.uint8))))
    return SegmentationDataset(tuple(pairs), name="toy")


@pytest.fixture
def toy_ds():
    return make_ds


@pytest.fixture
def tiny_cfg():
    return UNetConfig(in_channels=1, out_channels=1, depth=1, base_filters=2, seed=5)


def write_png(path, arr):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def pytest_terminal_summary(terminalreporter):
    lines = [value for rep in terminalreporter.stats.get("passed", []) + terminalreporter.stats.get("failed", [])
             for key, value in getattr(rep, "user_properties", []) if key == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for text in sorted(lines):
            terminalreporter.write_line(text)
