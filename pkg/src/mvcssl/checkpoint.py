"""Versioned binary checkpoint container.

Layout (all little-endian):

    bytes 0-7    magic ``MVCCKPT1``
    bytes 8-15   uint64 header length H
    bytes 16-..  H bytes of UTF-8 JSON header
    then         raw tensor data, row-major, in header order

The JSON header holds ``{"version", "config", "meta", "tensors"}`` where
``tensors`` is a list of ``{"name", "dtype", "shape", "offset", "nbytes"}``
with offsets relative to the start of the data section. Serialization is
canonical (sorted keys, fixed separators, tensors sorted by name), so
save -> load -> save is bitwise idempotent.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import CheckpointVersionError, FormatError

MAGIC = b"MVCCKPT1"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": (np.float32, torch.float32),
    "float64": (np.float64, torch.float64),
    "int64": (np.int64, torch.int64),
    "uint8": (np.uint8, torch.uint8),
}


@dataclass
class Checkpoint:
    """Named tensors plus JSON-able config and metadata (rng states, step)."""

    config: dict
    tensors: dict[str, torch.Tensor]
    meta: dict = field(default_factory=dict)

    def save(self, path) -> None:
        names = sorted(self.tensors)
        index, blobs, offset = [], [], 0
        for name in names:
            t = self.tensors[name].detach().cpu().contiguous()
            dtype = str(t.dtype).removeprefix("torch.")
            if dtype not in _DTYPES:
                raise FormatError(f"unsupported tensor dtype {dtype} for {name}")
            blob = t.numpy().astype(_DTYPES[dtype][0], copy=False).tobytes()
            index.append(
                {
                    "name": name,
                    "dtype": dtype,
                    "shape": list(t.shape),
                    "offset": offset,
                    "nbytes": len(blob),
                }
            )
            blobs.append(blob)
            offset += len(blob)
        header = json.dumps(
            {
                "version": FORMAT_VERSION,
                "config": self.config,
                "meta": self.meta,
                "tensors": index,
            },
            sort_keys=True,
            separators=(",", ":"),
        ).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for blob in blobs:
                fh.write(blob)

    @staticmethod
    def load(path) -> "Checkpoint":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != MAGIC:
                raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen).decode())
            if header["version"] != FORMAT_VERSION:
                raise CheckpointVersionError(
                    f"{path}: checkpoint version {header['version']} != {FORMAT_VERSION}"
                )
            data = fh.read()
        tensors = {}
        for entry in header["tensors"]:
            np_dtype, _ = _DTYPES[entry["dtype"]]
            raw = data[entry["offset"] : entry["offset"] + entry["nbytes"]]
            arr = np.frombuffer(raw, dtype=np_dtype).reshape(entry["shape"]).copy()
            tensors[entry["name"]] = torch.from_numpy(arr)
        return Checkpoint(header["config"], tensors, header["meta"])
