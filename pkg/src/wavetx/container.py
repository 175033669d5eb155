"""Single-file container for models and attack outputs.

Layout: magic ``WVTX``, a little-endian u32 header length, a canonical
JSON header, then the raw tensor payloads concatenated in header order.
Numeric payloads are little-endian; dtypes are limited to the table
below. The header ordering is sorted-keys JSON so identical content
serialises to identical bytes, which is what the fingerprint relies on.
"""

import hashlib
import io
import json
import struct

import numpy as np

from .errors import FormatError
from .models import build_model

MAGIC = b"WVTX"
FORMAT_VERSION = 1

_DTYPES = {"f4": "<f4", "f8": "<f8", "i4": "<i4", "i8": "<i8", "u1": "|u1"}
_DTYPE_CODES = {np.dtype("<f4"): "f4", np.dtype("<f8"): "f8", np.dtype("<i4"): "i4",
                np.dtype("<i8"): "i8", np.dtype("|u1"): "u1"}


def _dtype_code(arr):
    code = _DTYPE_CODES.get(np.dtype(arr.dtype.str.replace(">", "<")))
    if code is None:
        raise FormatError(f"unsupported tensor dtype: {arr.dtype}")
    return code


def write_bundle(stream, kind, meta, arrays):
    """``arrays`` is an ordered list of (name, ndarray) pairs."""
    tensors = []
    blobs = []
    for name, arr in arrays:
        code = _dtype_code(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": code})
        blobs.append(data)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta,
        "tensors": tensors,
    }
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    stream.write(MAGIC)
    stream.write(struct.pack("<I", len(encoded)))
    stream.write(encoded)
    for blob in blobs:
        stream.write(blob)


def save_bundle(path, kind, meta, arrays):
    with open(path, "wb") as f:
        write_bundle(f, kind, meta, arrays)


def read_bundle(stream):
    magic = stream.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}; not a wavetx container")
    raw_len = stream.read(4)
    if len(raw_len) != 4:
        raise FormatError("truncated container header length")
    (header_len,) = struct.unpack("<I", raw_len)
    encoded = stream.read(header_len)
    if len(encoded) != header_len:
        raise FormatError("truncated container header")
    try:
        header = json.loads(encoded.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"container header is not valid JSON: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported container version {header.get('format_version')!r}")
    arrays = {}
    for entry in header["tensors"]:
        code = entry["dtype"]
        if code not in _DTYPES:
            raise FormatError(f"unsupported tensor dtype code {code!r}")
        dtype = np.dtype(_DTYPES[code])
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = stream.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise FormatError(f"truncated payload for tensor {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return header["kind"], header.get("meta", {}), arrays


def load_bundle(path):
    with open(path, "rb") as f:
        return read_bundle(f)


def _model_arrays(model):
    arrays = [(name, t.data.astype(np.float32)) for name, t in model.named_params()]
    arrays += [(name, buf.astype(np.float32)) for name, buf in model.named_buffers()]
    return arrays


def save_model(model, path, extra_meta=None):
    meta = {"spec": model.spec, "param_count": model.param_count()}
    if extra_meta:
        meta.update(extra_meta)
    save_bundle(path, "model", meta, _model_arrays(model))


def model_to_bytes(model):
    buf = io.BytesIO()
    write_bundle(buf, "model", {"spec": model.spec, "param_count": model.param_count()},
                 _model_arrays(model))
    return buf.getvalue()


def model_fingerprint(model):
    """Hex digest of the serialised model; stable across process restarts."""
    return hashlib.sha256(model_to_bytes(model)).hexdigest()[:16]


def load_model(path):
    kind, meta, arrays = load_bundle(path)
    if kind != "model":
        raise FormatError(f"expected a model container, found kind {kind!r}")
    model = build_model(meta["spec"])
    expected = [name for name, _ in model.named_params()] + [
        name for name, _ in model.named_buffers()
    ]
    if sorted(arrays) != sorted(expected):
        raise FormatError("container tensors do not match the architecture")
    for name, tensor in model.named_params():
        stored = arrays[name]
        if stored.shape != tensor.data.shape:
            raise FormatError(f"tensor {name!r} has shape {stored.shape}, "
                              f"expected {tensor.data.shape}")
        tensor.data = stored.astype(np.float32)
    for name, buf in model.named_buffers():
        stored = arrays[name]
        if stored.shape != buf.shape:
            raise FormatError(f"buffer {name!r} has shape {stored.shape}, expected {buf.shape}")
        buf[...] = stored
    model.eval_mode()
    return model, meta
