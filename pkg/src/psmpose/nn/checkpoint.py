"""Checkpoint container: named parameter arrays, optional optimizer moments and
a JSON header with the model config and a format version."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .._io import load_arrays, save_arrays
from .optim import OptimizerState

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    params: dict[str, np.ndarray]
    optimizer: OptimizerState | None = None
    meta: dict = field(default_factory=dict)

    def save(self, path: str | os.PathLike) -> None:
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        header = {
            "format_version": CHECKPOINT_VERSION,
            "kind": self.kind,
            "config": self.config,
            "meta": self.meta,
        }
        if self.optimizer is not None:
            header["optimizer"] = self.optimizer.hyper()
            arrays.update({f"opt_m/{k}": v for k, v in self.optimizer.m.items()})
            arrays.update({f"opt_v/{k}": v for k, v in self.optimizer.v.items()})
        save_arrays(path, arrays, header)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Checkpoint":
        try:
            arrays, header = load_arrays(path)
        except (OSError, ValueError) as exc:
            raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from None
        if header is None or header.get("format_version") != CHECKPOINT_VERSION:
            found = None if header is None else header.get("format_version")
            raise CheckpointError(f"{path}: format_version {found!r}, expected {CHECKPOINT_VERSION}")
        params = {k[len("param/") :]: v for k, v in arrays.items() if k.startswith("param/")}
        opt = None
        if "optimizer" in header:
            opt = OptimizerState(**header["optimizer"])
            opt.m = {k[len("opt_m/") :]: v for k, v in arrays.items() if k.startswith("opt_m/")}
            opt.v = {k[len("opt_v/") :]: v for k, v in arrays.items() if k.startswith("opt_v/")}
        return cls(header["kind"], header["config"], params, opt, header.get("meta", {}))


def checksum(params: dict[str, np.ndarray], names=None) -> str:
    """SHA-256 over the named arrays (sorted by name, raw bytes)."""
    h = hashlib.sha256()
    for k in sorted(params if names is None else names):
        a = np.ascontiguousarray(params[k])
        h.update(k.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()
