"""Bit-exact weight serialization.

File layout: 8-byte magic ``CPWEIGHT``, a 4-byte little-endian header
length, a JSON header, then the raw little-endian float32 tensor payloads
concatenated in manifest order.  The header records tensor names/shapes,
an architecture hash, arbitrary training metadata, and a SHA-256 checksum
of the payload.  Loading verifies the checksum, and fails loudly when the
caller's architecture hash does not match the stored one.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_MAGIC = b"CPWEIGHT"
FORMAT_VERSION = "covplan-weights/1"


def architecture_hash(description: dict) -> str:
    """Stable hash of an architecture description (any JSON-able dict)."""
    blob = json.dumps(description, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class WeightStore:
    """Ordered named parameter tensors plus their manifest."""

    tensors: dict[str, np.ndarray]
    manifest: dict = field(default_factory=dict)

    @property
    def arch_hash(self) -> str:
        return self.manifest.get("arch_hash", "")


def save_weights(store: WeightStore, path) -> None:
    payload = b""
    table = []
    for name, arr in store.tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape)})
        payload += data.tobytes()
    header = {
        "format": FORMAT_VERSION,
        "arch_hash": store.manifest.get("arch_hash", ""),
        "meta": {k: v for k, v in store.manifest.items() if k != "arch_hash"},
        "tensors": table,
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def load_weights(path, expected_arch_hash: str | None = None) -> WeightStore:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a covplan weight file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen])
    if header.get("format") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported weight format {header.get('format')!r}")
    payload = raw[12 + hlen :]
    if hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise ValueError(f"{path}: payload checksum mismatch (corrupt file)")
    if expected_arch_hash is not None and header["arch_hash"] != expected_arch_hash:
        raise ValueError(
            f"{path}: architecture hash mismatch (file {header['arch_hash'][:12]}..., "
            f"expected {expected_arch_hash[:12]}...)"
        )
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(shape)
        tensors[entry["name"]] = arr.copy()
        offset += n * 4
    manifest = {"arch_hash": header["arch_hash"], **header["meta"]}
    return WeightStore(tensors=tensors, manifest=manifest)
