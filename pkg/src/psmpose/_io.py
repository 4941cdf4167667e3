"""Byte-reproducible array containers and atomic writes."""

import hashlib
import io
import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write an ``.npz``-compatible zip whose bytes depend only on the content."""
    path = Path(path)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        if meta is not None:
            info = zipfile.ZipInfo("__meta__.json", date_time=_EPOCH)
            zf.writestr(info, json.dumps(meta, sort_keys=True, indent=1))
        for name in sorted(arrays):
            arr_buf = io.BytesIO()
            np.lib.format.write_array(arr_buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_EPOCH), arr_buf.getvalue())
    atomic_write_bytes(path, buf.getvalue())


def load_arrays(path) -> tuple[dict, dict | None]:
    arrays, meta = {}, None
    with zipfile.ZipFile(path) as zf:
        for name in zf.namelist():
            data = zf.read(name)
            if name == "__meta__.json":
                meta = json.loads(data)
            elif name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(data), allow_pickle=False)
    return arrays, meta


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
