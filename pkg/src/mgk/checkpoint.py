"""Named-tensor checkpoint container and pretrain-to-finetune weight transfer.

Binary layout (all integers little-endian u32):

    magic "MGK1" | version | count |
    repeated count times:
        name_len | name bytes (utf-8) | rank | dims[rank] | float64 LE payload

A JSON sidecar at ``<path>.meta`` carries run metadata (architecture config,
layout hash, seed, loss curve); it is written/read by the training code and is
optional at this layer.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, TransferError

MAGIC = b"MGK1"
VERSION = 1


def save_checkpoint(path: str | os.PathLike, tensors: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(tensors))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))
    if meta is not None:
        with open(str(path) + ".meta", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}", offset=0)
    off = 4
    try:
        version, count = struct.unpack_from("<II", blob, off)
    except struct.error:
        raise FormatError("truncated checkpoint header", offset=off) from None
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    off += 8
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + name_len].decode("utf-8")
            if len(blob) < off + name_len:
                raise struct.error
            off += name_len
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
        except struct.error:
            raise FormatError("truncated checkpoint entry header", offset=off) from None
        n_bytes = int(np.prod(dims, dtype=np.int64)) * 8 if rank else 8
        payload = blob[off:off + n_bytes]
        if len(payload) < n_bytes:
            raise FormatError(
                f"checkpoint payload for '{name}' is short "
                f"({len(payload)} of {n_bytes} bytes)", offset=off)
        arr = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr.reshape(-1)))[0])
            raise FormatError(f"non-finite value in tensor '{name}'",
                              offset=off + bad * 8)
        tensors[name] = arr
        off += n_bytes
    return tensors


def load_meta(path: str | os.PathLike) -> dict | None:
    meta_path = str(path) + ".meta"
    if not os.path.exists(meta_path):
        return None
    with open(meta_path, "r", encoding="utf-8") as fh:
        return json.load(fh)


@dataclass
class TransferReport:
    """Which named tensors moved during a weight transfer."""

    transferred: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)   # in model, not in checkpoint
    extra: list[str] = field(default_factory=list)     # in checkpoint, not used

    def summary(self) -> str:
        return (f"transferred={len(self.transferred)} "
                f"missing={len(self.missing)} extra={len(self.extra)}")


def transfer_weights(target: dict[str, "np.ndarray | object"],
                     source: dict[str, np.ndarray],
                     prefix: str | None = None) -> TransferReport:
    """Copy checkpoint arrays into matching-name model parameters.

    ``target`` maps names to parameter tensors (anything with a ``.data``
    ndarray attribute) or raw ndarrays. Only names present in both sides move;
    an empty intersection or any shape mismatch on an intersecting name is a
    :class:`TransferError`. ``prefix`` restricts the transfer to names starting
    with it.
    """
    report = TransferReport()
    names = [n for n in target if prefix is None or n.startswith(prefix)]
    for name in names:
        if name not in source:
            report.missing.append(name)
            continue
        dst = target[name]
        dst_arr = dst.data if hasattr(dst, "data") else dst
        src_arr = source[name]
        if dst_arr.shape != src_arr.shape:
            raise TransferError(
                f"shape mismatch for '{name}': model {dst_arr.shape} vs "
                f"checkpoint {src_arr.shape}")
        if hasattr(dst, "data"):
            dst.data = src_arr.copy()
        else:
            np.copyto(dst_arr, src_arr)
        report.transferred.append(name)
    used = set(report.transferred)
    report.extra = [n for n in source
                    if n not in used and (prefix is None or n.startswith(prefix))]
    if not report.transferred:
        raise TransferError(
            "no overlapping tensor names between model and checkpoint; "
            f"model wanted {sorted(names)[:8]}..., checkpoint has "
            f"{sorted(source)[:8]}...")
    return report
