"""Binary container for model artifacts and deterministic array archives.

Layout of the container, all integers little-endian:

    bytes 0..3    magic "LADB"
    bytes 4..7    uint32 format version (currently 1)
    bytes 8..15   uint64 length of the metadata block in bytes
    metadata      canonical JSON (sorted keys, compact separators, UTF-8)
    payloads      raw tensor bytes, one per directory entry, in order

The metadata block carries a "directory" list of {name, dtype, shape}
entries; payload bytes follow in exactly that order with no padding. The
same container stores float32 and int8 models (dtype is tagged per tensor).
"""

from __future__ import annotations

import io
import json
import struct
import zipfile

import numpy as np

from .errors import FormatError

MAGIC = b"LADB"
VERSION = 1

# on-disk dtype tags; all multi-byte types are little-endian
_DTYPES = {
    "float32": "<f4",
    "float64": "<f8",
    "int8": "|i1",
    "int32": "<i4",
    "int64": "<i8",
}


def canonical_json(obj) -> bytes:
    """Stable, whitespace-free JSON encoding (byte-identical across runs)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def write_container(path, meta: dict, tensors: dict) -> None:
    """Write metadata plus named arrays; insertion order fixes payload order."""
    directory = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        tag = str(arr.dtype)
        if tag not in _DTYPES:
            raise FormatError(f"tensor {name!r}: unsupported dtype {tag}")
        directory.append({"name": name, "dtype": tag, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr.astype(_DTYPES[tag], copy=False)).tobytes())
    full_meta = dict(meta)
    full_meta["directory"] = directory
    meta_bytes = canonical_json(full_meta)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        for blob in blobs:
            fh.write(blob)


def read_container(path):
    """Read back (meta, {name: array}); raises FormatError naming the bad section."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise FormatError("header: file truncated before fixed header")
    if raw[:4] != MAGIC:
        raise FormatError(f"magic: expected {MAGIC!r}, found {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise FormatError(f"version: unsupported format version {version}")
    (meta_len,) = struct.unpack_from("<Q", raw, 8)
    if 16 + meta_len > len(raw):
        raise FormatError("metadata: file truncated inside metadata block")
    try:
        meta = json.loads(raw[16:16 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata: invalid JSON ({exc})") from exc
    if not isinstance(meta, dict) or "directory" not in meta:
        raise FormatError("metadata: missing tensor directory")
    tensors = {}
    offset = 16 + meta_len
    for entry in meta["directory"]:
        try:
            name, tag, shape = entry["name"], entry["dtype"], tuple(entry["shape"])
        except (TypeError, KeyError) as exc:
            raise FormatError(f"directory: malformed entry {entry!r}") from exc
        if tag not in _DTYPES:
            raise FormatError(f"tensor {name!r}: unsupported dtype {tag}")
        dt = np.dtype(_DTYPES[tag])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if offset + nbytes > len(raw):
            raise FormatError(f"tensor {name!r}: file truncated inside payload")
        arr = np.frombuffer(raw, dtype=dt, count=int(np.prod(shape, dtype=np.int64)), offset=offset)
        tensors[name] = arr.reshape(shape).astype(tag, copy=True)
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"payload: {len(raw) - offset} trailing bytes after last tensor")
    return meta, tensors


def save_npz_deterministic(path, arrays: dict) -> None:
    """Uncompressed .npz whose bytes depend only on names and array contents.

    numpy's own savez stamps current timestamps into the zip members, which
    breaks byte-identical reruns; this writer pins the member dates.
    """
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in arrays:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_STORED
            zf.writestr(info, buf.getvalue())


def load_npz(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        return {k: data[k] for k in data.files}
