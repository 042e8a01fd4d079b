"""Portable weight container: one JSON header line + raw float32 blobs.

The header carries format/version, the architecture descriptor (role, seed,
frozen flag, layer specs), the tensor directory (names and shapes, in file
order), and a free-form "extra" dict. Blobs follow as concatenated
little-endian float32, so every byte offset is derivable from the header.
Saving a float64 network quantizes it to float32.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError
from .network import Network, network_from_descriptor

NET_FORMAT = "gdce-net"
VERSION = 1


def write_container(path: str | Path, header: dict,
                    arrays: list[tuple[str, np.ndarray]]) -> None:
    header = dict(header)
    header.setdefault("version", VERSION)
    header["tensors"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in arrays)
    head = json.dumps(header, sort_keys=True).encode()
    Path(path).write_bytes(head + b"\n" + blob)


def read_container(path: str | Path, expected_format: str) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: missing header line")
    try:
        header = json.loads(data[:nl].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: malformed header: {e}") from e
    if header.get("format") != expected_format:
        raise DataError(
            f"{path}: format {header.get('format')!r}, expected {expected_format!r}"
        )
    if header.get("version") != VERSION:
        raise DataError(f"{path}: unsupported version {header.get('version')!r}")
    arrays = {}
    offset = nl + 1
    for t in header.get("tensors", []):
        shape = tuple(int(s) for s in t["shape"])
        nbytes = int(np.prod(shape)) * 4
        chunk = data[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise DataError(f"{path}: truncated blob for tensor {t['name']!r}")
        arrays[t["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float32)
        offset += nbytes
    if offset != len(data):
        raise DataError(f"{path}: {len(data) - offset} trailing bytes after blobs")
    return header, arrays


def save_checkpoint(net: Network, path: str | Path, extra: dict | None = None) -> None:
    header = {"format": NET_FORMAT, "dtype": "float32", "extra": extra or {}}
    header.update(net.descriptor())
    write_container(path, header, [(n, p.data) for n, p in net.named_params()])


def load_checkpoint(path: str | Path, expected_role: str | None = None,
                    dtype=np.float32) -> tuple[Network, dict]:
    """Rebuild the network and fill its weights. Returns (net, extra)."""
    header, arrays = read_container(path, NET_FORMAT)
    if expected_role is not None and header.get("role") != expected_role:
        raise DataError(
            f"{path}: checkpoint role {header.get('role')!r} does not match "
            f"expected {expected_role!r}"
        )
    net = network_from_descriptor(header, dtype=dtype)
    named = net.named_params()
    if len(named) != len(arrays):
        raise DataError(f"{path}: tensor count does not match architecture")
    for name, p in named:
        if name not in arrays:
            raise DataError(f"{path}: missing tensor {name!r}")
        if arrays[name].shape != p.data.shape:
            raise DataError(
                f"{path}: tensor {name!r} shape {arrays[name].shape} "
                f"does not match layer shape {p.data.shape}"
            )
        p.data = arrays[name].astype(dtype)
    return net, header.get("extra", {})
