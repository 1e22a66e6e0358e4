"""Named-array checkpoint container.

Files are numpy ``.npz`` archives (a zip of ``.npy`` members, whose byte
layout is numpy's documented NPY format). Each parameter is stored under its
slash-separated name as a float64 C-order array, so shape and data travel
together. The reserved member ``__meta__`` holds a JSON string with the
format tag and free-form metadata.
"""

from __future__ import annotations

import json
import os
from typing import Any, Mapping

import numpy as np

FORMAT = "distgame-ckpt"
VERSION = 1
_META_KEY = "__meta__"


class CheckpointError(ValueError):
    pass


def save_arrays(path: str | os.PathLike, arrays: Mapping[str, Any], meta: Mapping | None = None) -> None:
    payload = {}
    for name, value in arrays.items():
        if name == _META_KEY:
            raise CheckpointError(f"{_META_KEY} is reserved")
        data = getattr(value, "data", value)
        payload[name] = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    header = {"format": FORMAT, "version": VERSION, "meta": dict(meta or {})}
    payload[_META_KEY] = np.array(json.dumps(header, sort_keys=True))
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **payload)
    os.replace(tmp, path)


def load_arrays(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as archive:
        if _META_KEY not in archive.files:
            raise CheckpointError(f"{path}: missing {_META_KEY} member")
        header = json.loads(str(archive[_META_KEY]))
        if header.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version", 0) > VERSION:
            raise CheckpointError(f"{path}: version {header['version']} is newer than {VERSION}")
        arrays = {k: archive[k] for k in archive.files if k != _META_KEY}
    return arrays, header.get("meta", {})
