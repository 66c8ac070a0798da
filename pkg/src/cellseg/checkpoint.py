"""Binary checkpoint container for :class:`~cellseg.model.UNetModel`.

Byte layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"CSEGCKPT"
    8       4     format version, uint32 (currently 1)
    12      8     manifest length M, uint64
    20      M     manifest, UTF-8 JSON with sorted keys
    20+M    D     tensor data: float32 little-endian arrays, C order, concatenated
    20+M+D  4     CRC-32 (zlib) of bytes [0, 20+M+D)

The manifest holds ``config`` (the UNetConfig fields), ``extra`` (free-form
metadata such as the resize policy used in training) and ``tensors``, a list
of ``{"name", "kind", "shape", "offset", "nbytes"}`` entries where ``kind`` is
``"param"`` or ``"buffer"`` and ``offset`` counts from the start of the data
section. ``D`` is the sum of ``nbytes``. Nothing time-dependent is written,
so saving the same model twice yields identical files.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CheckpointVersionError, ConfigMismatchError, CorruptCheckpointError
from .model import UNetConfig, UNetModel, layer_shapes

MAGIC = b"CSEGCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")
_DTYPE = np.dtype("<f4")


def save_checkpoint(model: UNetModel, path, extra: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    tensors, blobs, offset = [], [], 0
    for kind, group in (("param", model.params), ("buffer", model.buffers)):
        for name, arr in group.items():
            data = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
            tensors.append({"name": name, "kind": kind, "shape": list(arr.shape),
                            "offset": offset, "nbytes": len(data)})
            blobs.append(data)
            offset += len(data)
    manifest = json.dumps({"config": model.config.to_dict(), "extra": extra or {},
                           "tensors": tensors}, sort_keys=True).encode()
    body = _HEADER.pack(MAGIC, VERSION, len(manifest)) + manifest + b"".join(blobs)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    return path


def read_checkpoint(path) -> tuple[UNetModel, dict[str, Any]]:
    """Load a checkpoint, returning the model and its ``extra`` metadata."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CorruptCheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _HEADER.size + 4:
        raise CorruptCheckpointError(f"checkpoint {path} is truncated ({len(raw)} bytes)")
    magic, version, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path} is not a cellseg checkpoint")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint {path} has format version {version}, "
                                     f"this build reads version {VERSION}")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if _HEADER.size + mlen > len(body) or zlib.crc32(body) != crc:
        raise CorruptCheckpointError(f"checkpoint {path} is truncated or corrupt (checksum mismatch)")
    try:
        manifest = json.loads(body[_HEADER.size:_HEADER.size + mlen])
        config = UNetConfig.from_dict(manifest["config"])
        data = memoryview(body)[_HEADER.size + mlen:]
        params, buffers = {}, {}
        for t in manifest["tensors"]:
            chunk = data[t["offset"]:t["offset"] + t["nbytes"]]
            arr = np.frombuffer(chunk, dtype=_DTYPE).reshape(t["shape"]).astype(np.float32)
            (params if t["kind"] == "param" else buffers)[t["name"]] = arr
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"checkpoint {path} has a malformed manifest: {exc}") from exc
    expected = layer_shapes(config)
    if {k: tuple(v.shape) for k, v in params.items()} != expected:
        raise CorruptCheckpointError(f"checkpoint {path} tensors do not match its config")
    return UNetModel(config, params, buffers), manifest.get("extra", {})


def load_checkpoint(path, expected: UNetConfig | None = None) -> UNetModel:
    """Load a model; with ``expected``, refuse checkpoints whose architecture differs.

    The init ``seed`` is not part of the comparison.
    """
    model, _ = read_checkpoint(path)
    if expected is not None:
        got, want = model.config.to_dict(), expected.to_dict()
        got.pop("seed"), want.pop("seed")
        diffs = [f"{k}: checkpoint {got[k]} vs requested {want[k]}" for k in want if got[k] != want[k]]
        if diffs:
            raise ConfigMismatchError(f"checkpoint {path} does not match the requested model ("
                                      + "; ".join(diffs) + ")")
    return model
