"""Run manifests: enough recorded context to reproduce an output directory."""

from __future__ import annotations

import hashlib
import json
import os
import platform
import sys
import tempfile
from pathlib import Path

import numpy as np

from .channel import RNG_ALGORITHM

MANIFEST_NAME = "manifest.json"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=_default).encode()
    return hashlib.sha256(blob).hexdigest()


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (tuple, set)):
        return list(o)
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def versions() -> dict:
    from importlib import metadata
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "package": own}


def write_json_atomic(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=_default)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(out_dir, command: str, config: dict, seed: int | None, results: dict | None = None,
                   outputs: list | None = None) -> Path:
    """Write ``manifest.json`` into ``out_dir``; call this after every other output."""
    payload = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "rng": RNG_ALGORITHM,
        "versions": versions(),
        "results": results or {},
        "outputs": sorted(str(o) for o in (outputs or [])),
    }
    path = Path(out_dir) / MANIFEST_NAME
    write_json_atomic(path, payload)
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path) as fh:
        return json.load(fh)
