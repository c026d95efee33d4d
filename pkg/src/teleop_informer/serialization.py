"""Flat binary container for named float64 arrays.

Layout (all integers little-endian)::

    magic        8 bytes   b"TIWIN001" windows, b"TICKPT01" checkpoints, b"TITRL001" trials
    header_len   uint64
    header       header_len bytes of UTF-8 JSON:
                   {"meta": {...}, "arrays": [{"name", "shape", "offset"}, ...]}
    body         concatenated little-endian float64 arrays, row-major,
                 each starting at its "offset" relative to the body start
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

WINDOWS_MAGIC = b"TIWIN001"
CHECKPOINT_MAGIC = b"TICKPT01"
TRIAL_MAGIC = b"TITRL001"


def write_arrays(path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def read_arrays(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != magic:
        raise ParseError(f"{path}: bad magic {raw[:8]!r}, expected {magic!r}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    body = memoryview(raw)[16 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        shape = tuple(e["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=e["offset"])
        arrays[e["name"]] = arr.reshape(shape).astype(np.float64)
    return header["meta"], arrays
