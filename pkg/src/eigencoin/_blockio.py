"""Two-part model container: a JSON manifest followed by packed array blocks.

Layout: 8-byte magic, little-endian uint64 manifest length, UTF-8 manifest
JSON, then each block as row-major little-endian float64 bytes in manifest
order. The manifest's "blocks" list declares name and shape for every block,
so files are self-describing and round-trip bit for bit.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .errors import ModelFormatError

MAGIC = b"ECMODEL1"
SCALAR = "<f8"


def write_blocks(path, manifest: dict, blocks: List[Tuple[str, np.ndarray]]) -> None:
    """Serialize manifest plus named arrays; block descriptors are added here."""
    manifest = dict(manifest)
    manifest["byte_order"] = "little-endian"
    manifest["scalar"] = "float64"
    manifest["layout"] = "row-major"
    manifest["blocks"] = [{"name": name, "shape": list(arr.shape)} for name, arr in blocks]
    body = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(body)))
        fh.write(body)
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype=SCALAR).tobytes())


def read_blocks(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    """Parse a container written by write_blocks."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise ModelFormatError(f"{path}: not a model container")
    (length,) = struct.unpack("<Q", raw[8:16])
    if 16 + length > len(raw):
        raise ModelFormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16:16 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: bad manifest JSON ({exc})") from exc
    if manifest.get("byte_order") != "little-endian" or manifest.get("scalar") != "float64":
        raise ModelFormatError(f"{path}: unsupported scalar encoding")
    offset = 16 + length
    arrays: Dict[str, np.ndarray] = {}
    for spec in manifest.get("blocks", []):
        shape = tuple(int(s) for s in spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise ModelFormatError(f"{path}: truncated block {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(raw, dtype=SCALAR, count=count,
                                             offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise ModelFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return manifest, arrays
