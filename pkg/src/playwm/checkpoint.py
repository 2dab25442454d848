"""Shared checkpoint container for every trained network.

Layout: magic "PWCK", version u32, header-length u32, JSON header, then raw
float64 parameter blobs in the order listed by the header. Pure function of
its contents, no timestamps, so equal-seed runs write identical bytes.
"""

from __future__ import annotations

import json
import os

import numpy as np

MAGIC = b"PWCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str, kind: str, header: dict, params: dict[str, np.ndarray]) -> None:
    names = sorted(params)
    head = {
        "kind": kind,
        "header": header,
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    head_bytes = json.dumps(head, sort_keys=True).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array([VERSION, len(head_bytes)], dtype="<u4").tobytes())
        fh.write(head_bytes)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[str, dict, dict[str, np.ndarray]]:
    if not os.path.exists(path):
        raise CheckpointError(f"missing checkpoint: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    version, head_len = np.frombuffer(blob[4:12], dtype="<u4")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    head = json.loads(blob[12:12 + int(head_len)].decode())
    off = 12 + int(head_len)
    params: dict[str, np.ndarray] = {}
    for spec in head["params"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
        params[spec["name"]] = arr.copy()
        off += arr.nbytes
    return head["kind"], head["header"], params
