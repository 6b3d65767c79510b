"""Columnar container: a numpy ``.npz`` archive plus a versioned JSON header.

Every persisted table (transaction log, panel, feature matrices, trial
outputs, checkpoints) goes through :func:`save_columns` so the files share
one layout and can be inspected with ``numpy.load`` alone.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np

FORMAT = "nextbuy-columnar"
VERSION = 1
_HEADER_KEY = "__header__"


def save_columns(path, columns, header, kind):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"format": FORMAT, "version": VERSION, "kind": kind, **header}
    payload = {_HEADER_KEY: np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, values in columns.items():
        arr = np.asarray(values)
        if arr.dtype == object:
            arr = arr.astype(str)
        payload[name] = arr
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **payload)
    os.replace(tmp, path)


def load_columns(path, kind=None):
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data[_HEADER_KEY]).decode())
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        if header.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported version {header.get('version')}")
        if kind is not None and header.get("kind") != kind:
            raise ValueError(f"{path}: expected kind {kind!r}, found {header.get('kind')!r}")
        columns = {k: data[k] for k in data.files if k != _HEADER_KEY}
    return columns, header


def file_digest(path, chunk=1 << 20):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while block := fh.read(chunk):
            h.update(block)
    return h.hexdigest()
