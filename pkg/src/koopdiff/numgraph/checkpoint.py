"""Parameter checkpoints: a flat binary container plus a JSON manifest.

Container layout (all integers little-endian)::

    b"NGCKPT01"  uint32 count
    repeated count times:
        uint16 name_len, name (utf-8), uint8 ndim, uint32 dims[ndim],
        float64 payload[prod(dims)] (little-endian, row-major)

The manifest (``manifest.json`` next to ``params.bin``) records the format
version, the SHA-256 of the container and any caller metadata such as module
dimensions and RNG seeds.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"NGCKPT01"
FORMAT_VERSION = 1
PARAMS_FILE = "params.bin"
MANIFEST_FILE = "manifest.json"


class ChecksumError(ValueError):
    pass


def encode_params(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def decode_params(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise ValueError("not a parameter container (bad magic)")
    (count,) = struct.unpack_from("<I", blob, 8)
    pos = 12
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(blob):
        raise ValueError("trailing bytes in parameter container")
    return out


def save_checkpoint(directory, params: Mapping[str, np.ndarray], meta: Mapping | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = encode_params(params)
    (directory / PARAMS_FILE).write_bytes(blob)
    manifest = {
        "version": FORMAT_VERSION,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "parameters": {k: list(np.shape(v)) for k, v in params.items()},
        **(dict(meta) if meta else {}),
    }
    (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    blob = (directory / PARAMS_FILE).read_bytes()
    manifest = json.loads((directory / MANIFEST_FILE).read_text())
    if manifest.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise ChecksumError(f"checksum mismatch for {directory / PARAMS_FILE}")
    return decode_params(blob), manifest
