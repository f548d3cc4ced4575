"""Checkpoint files: a JSON manifest followed by a float32 payload.

Layout::

    b"LGCKPT\\n"                     magic
    uint32 LE                        manifest byte length
    manifest                         UTF-8 JSON, human readable
    payload                          little-endian float32 tensors, contiguous, row-major

The manifest holds the format version, the bundle configuration (vocabulary
included), a tensor directory ``name -> {shape, offset, nbytes}`` with
offsets relative to the payload start, and the BLAKE2b-64 hex digest of the
payload.  Tensors are written in bundle order.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .model.bundle import ModelBundle
from .numerics.tensor import Tensor

MAGIC = b"LGCKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def payload_checksum(payload: bytes) -> str:
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


def encode_checkpoint(bundle: ModelBundle, extra: dict | None = None) -> bytes:
    directory = {}
    chunks = []
    offset = 0
    for name, t in bundle.params.items():
        raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        directory[name] = {"shape": list(t.data.shape), "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": bundle.config_dict(),
        "tensors": directory,
        "payload_bytes": len(payload),
        "checksum": payload_checksum(payload),
        "extra": extra or {},
    }
    head = json.dumps(manifest, indent=1).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def read_manifest(blob: bytes) -> tuple[dict, bytes]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    start = len(MAGIC) + 4
    if len(blob) < start:
        raise CheckpointError("truncated checkpoint header")
    (n,) = struct.unpack("<I", blob[len(MAGIC):start])
    if len(blob) < start + n:
        raise CheckpointError("truncated checkpoint manifest")
    try:
        manifest = json.loads(blob[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable manifest: {e}") from e
    return manifest, blob[start + n:]


def decode_checkpoint(blob: bytes) -> tuple[ModelBundle, dict]:
    manifest, payload = read_manifest(blob)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError(f"truncated payload: {len(payload)} of {manifest['payload_bytes']} bytes")
    if payload_checksum(payload) != manifest["checksum"]:
        raise CheckpointError("payload checksum mismatch")
    bundle = ModelBundle.from_config_dict(manifest["config"])
    for name, entry in manifest["tensors"].items():
        shape = tuple(entry["shape"])
        if 4 * int(np.prod(shape, dtype=np.int64)) != entry["nbytes"]:
            raise CheckpointError(f"tensor {name}: shape {shape} disagrees with {entry['nbytes']} bytes")
        end = entry["offset"] + entry["nbytes"]
        if entry["offset"] < 0 or end > len(payload):
            raise CheckpointError(f"tensor {name} extends past the payload")
        data = np.frombuffer(payload[entry["offset"]:end], dtype="<f4").reshape(shape).astype(np.float32)
        bundle.params[name] = Tensor(data, requires_grad=True, name=name)
    return bundle, manifest.get("extra", {})


def save_checkpoint(bundle: ModelBundle, path, extra: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(bundle, extra))


def load_checkpoint(path) -> ModelBundle:
    return decode_checkpoint(Path(path).read_bytes())[0]
