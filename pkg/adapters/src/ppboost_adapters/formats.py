"""Standalone writers/readers for the toolkit file formats.

Duplicated here on purpose: the adapter talks to the primary toolkit only
through files, so it carries its own minimal serialization code instead of
importing the toolkit. Conformance is enforced by tests that parse these
outputs with the toolkit's own readers.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import numpy.lib.format as npformat


def write_npy_f32(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(array, dtype=np.float32))
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fp:
        npformat.write_array(fp, arr, version=(1, 0))
    os.replace(tmp, os.fspath(path))


def read_npy(path) -> np.ndarray:
    with open(path, "rb") as fp:
        version = npformat.read_magic(fp)
        if version != (1, 0):
            raise ValueError(f"{path}: unsupported NPY version {version}")
        shape, fortran, dtype = npformat.read_array_header_1_0(fp)
        if fortran:
            raise ValueError(f"{path}: Fortran order not supported")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.fromfile(fp, dtype=dtype, count=count)
        return data.reshape(shape)


def write_manifest(path, entries: list[dict]) -> None:
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w") as fp:
        fp.write(json.dumps(entries, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, os.fspath(path))


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path) as fp:
        for line in fp:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def append_jsonl(path, obj: dict) -> None:
    with open(path, "a") as fp:
        fp.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
