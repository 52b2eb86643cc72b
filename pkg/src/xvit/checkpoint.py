"""Binary checkpoint format for model parameters.

Layout (all integers little-endian):

    bytes 0..3    magic "XVIT"
    bytes 4..7    format version, u32 (currently 1)
    bytes 8..11   header length in bytes, u32
    bytes 12..15  CRC32 of the header bytes, u32
    bytes 16..    header: compact JSON {config, tensors: [{name, shape,
                  dtype, offset}, ...]} in enumeration order
    then          raw little-endian tensor payloads; the payload base is the
                  header end rounded up to 64, and every offset (relative to
                  that base) is 64-byte aligned

The CRC exists so that any corrupted header byte is rejected loudly instead
of silently steering the payload parse. Saving is fully deterministic, so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ModelParams, _build_params
from .tensor import Tensor

__all__ = ["save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

MAGIC = b"XVIT"
FORMAT_VERSION = 1
_ALIGN = 64
_DTYPE_TAGS = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _dtype_tag(dt: np.dtype) -> str:
    return "f32" if dt == np.float32 else "f64"


def _align(n: int) -> int:
    return (n + _ALIGN - 1) // _ALIGN * _ALIGN


def save_checkpoint(mp: ModelParams, cfg: ModelConfig, path) -> None:
    entries = []
    offset = 0
    tensors = mp.named_tensors()
    for name, t in tensors:
        entries.append({"name": name, "shape": list(t.shape),
                        "dtype": _dtype_tag(t.dtype), "offset": offset})
        offset = _align(offset + t.nbytes)
    header = json.dumps({"config": asdict(cfg), "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    base = _align(len(MAGIC) + 12 + len(header))
    blob = bytearray(base + offset)
    blob[0:4] = MAGIC
    blob[4:8] = FORMAT_VERSION.to_bytes(4, "little")
    blob[8:12] = len(header).to_bytes(4, "little")
    blob[12:16] = zlib.crc32(header).to_bytes(4, "little")
    blob[16:16 + len(header)] = header
    for entry, (_, t) in zip(entries, tensors):
        start = base + entry["offset"]
        raw = np.ascontiguousarray(t.data).astype(_DTYPE_TAGS[entry["dtype"]], copy=False).tobytes()
        blob[start:start + len(raw)] = raw
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path, cfg: ModelConfig | None = None) -> tuple[ModelParams, ModelConfig]:
    """Read a checkpoint; returns (params, config).

    When ``cfg`` is given it must match the stored config exactly; the first
    difference (a config field, a missing tensor, or a tensor shape) is
    reported by name.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 16:
        raise CheckpointError(f"{path}: truncated preamble ({len(blob)} bytes)")
    if blob[0:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[0:4]!r}")
    version = int.from_bytes(blob[4:8], "little")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header_len = int.from_bytes(blob[8:12], "little")
    if 16 + header_len > len(blob):
        raise CheckpointError(f"{path}: truncated header (wants {header_len} bytes)")
    header = blob[16:16 + header_len]
    crc = int.from_bytes(blob[12:16], "little")
    if zlib.crc32(header) != crc:
        raise CheckpointError(f"{path}: header checksum mismatch (corrupted header)")
    try:
        meta = json.loads(header.decode())
        stored_cfg = ModelConfig(**meta["config"])
        entries = {e["name"]: e for e in meta["tensors"]}
    except CheckpointError:
        raise
    except Exception as exc:  # malformed JSON/schema despite CRC: broken writer
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    if len(entries) != len(meta["tensors"]):
        raise CheckpointError(f"{path}: duplicate tensor names in header")

    if cfg is not None and cfg != stored_cfg:
        for field_name, want in sorted(asdict(cfg).items()):
            got = asdict(stored_cfg)[field_name]
            if want != got:
                raise CheckpointError(
                    f"{path}: config field '{field_name}' is {got}, expected {want}")

    base = _align(16 + header_len)

    def fetch(name, shape, kind):
        entry = entries.pop(name, None)
        if entry is None:
            raise CheckpointError(f"{path}: tensor '{name}' missing from checkpoint")
        if tuple(entry["shape"]) != tuple(shape):
            raise CheckpointError(
                f"{path}: tensor '{name}': stored shape {tuple(entry['shape'])} "
                f"!= expected {tuple(shape)}")
        dt = _DTYPE_TAGS.get(entry["dtype"])
        if dt is None:
            raise CheckpointError(f"{path}: tensor '{name}': unknown dtype {entry['dtype']!r}")
        start = base + entry["offset"]
        if entry["offset"] % _ALIGN or start < base:
            raise CheckpointError(f"{path}: tensor '{name}': misaligned offset {entry['offset']}")
        nbytes = int(np.prod(shape)) * dt.itemsize
        if start + nbytes > len(blob):
            raise CheckpointError(f"{path}: tensor '{name}': payload truncated")
        arr = np.frombuffer(blob, dtype=dt, count=int(np.prod(shape)), offset=start)
        return Tensor(arr.reshape(shape).astype(dt.newbyteorder("=")))

    mp = _build_params(stored_cfg, fetch)
    if entries:
        raise CheckpointError(f"{path}: unexpected extra tensors: {sorted(entries)}")
    return mp, stored_cfg
