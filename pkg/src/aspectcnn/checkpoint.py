"""Single-file binary checkpoints.

Layout: 8-byte magic ``ACNNCKPT``, u32 format version, u64 manifest length,
the manifest as UTF-8 JSON, then raw little-endian tensors at the offsets the
manifest lists. Everything (config, hashes, rng states, history) lives in
the manifest, so two saves of the same state are byte-identical.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ACNNCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    meta: dict                                   # config, hashes, rng, history, ...
    tensors: dict = field(default_factory=dict)  # "group/name" -> ndarray

    def group(self, prefix: str) -> dict:
        pre = prefix + "/"
        return {k[len(pre):]: v for k, v in self.tensors.items() if k.startswith(pre)}

    def save(self, path):
        index, offset = [], 0
        blobs = []
        for name, arr in self.tensors.items():
            dt = np.dtype(arr.dtype).newbyteorder("<")
            raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
            index.append({"name": name, "dtype": dt.str, "shape": list(arr.shape),
                          "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
        manifest = json.dumps({"format_version": VERSION, "meta": self.meta, "tensors": index},
                              sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, len(manifest)))
            fh.write(manifest)
            for raw in blobs:
                fh.write(raw)

    @classmethod
    def load(cls, path, vocab_hash: str | None = None, embedding_hash: str | None = None) -> "Checkpoint":
        data = Path(path).read_bytes()
        if len(data) < _HEADER.size:
            raise CheckpointError(f"{path}: truncated header")
        magic, version, mlen = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
        if version != VERSION:
            raise CheckpointError(f"{path}: format_version {version} unsupported (expected {VERSION})")
        manifest = json.loads(data[_HEADER.size:_HEADER.size + mlen].decode("utf-8"))
        meta = manifest["meta"]
        for fld, expected in (("vocab_hash", vocab_hash), ("embedding_hash", embedding_hash)):
            if expected is not None and meta.get(fld) != expected:
                raise CheckpointError(f"{path}: {fld} mismatch: checkpoint has {meta.get(fld)!r}, "
                                      f"data has {expected!r}")
        base = _HEADER.size + mlen
        tensors = {}
        for ent in manifest["tensors"]:
            start = base + ent["offset"]
            buf = data[start:start + ent["nbytes"]]
            if len(buf) != ent["nbytes"]:
                raise CheckpointError(f"{path}: tensor {ent['name']} truncated")
            arr = np.frombuffer(buf, dtype=np.dtype(ent["dtype"])).reshape(ent["shape"])
            tensors[ent["name"]] = arr.astype(arr.dtype.newbyteorder("="))
        return cls(meta, tensors)
