"""Bit-exact reader/writer for version 1.0 ``.npy`` files.

Only float32 and uint8 C-ordered arrays are supported; every volume this
package produces is one of the two.
"""
from __future__ import annotations

import ast
import os
import struct

import numpy as np

MAGIC = b"\x93NUMPY"
VERSION = b"\x01\x00"
ALIGN = 64

_DESCR_TO_DTYPE = {"<f4": np.dtype("<f4"), "|u1": np.dtype("u1"), "<u1": np.dtype("u1")}
_DTYPE_TO_DESCR = {np.dtype("<f4"): "<f4", np.dtype("u1"): "|u1"}


class NpyFormatError(ValueError):
    code = "npy_error"


class BadMagicError(NpyFormatError):
    code = "bad_magic"


class BadHeaderError(NpyFormatError):
    code = "bad_header"


class UnsupportedDtypeError(NpyFormatError):
    code = "unsupported_dtype"


class ShapeMismatchError(NpyFormatError):
    code = "shape_mismatch"


def _shape_repr(shape: tuple[int, ...]) -> str:
    if len(shape) == 1:
        return f"({shape[0]},)"
    return "(" + ", ".join(str(int(s)) for s in shape) + ")"


def encode_header(dtype, shape) -> bytes:
    """Full preamble (magic, version, length, padded dict) for an array."""
    dtype = np.dtype(dtype)
    if dtype not in _DTYPE_TO_DESCR:
        raise UnsupportedDtypeError(f"unsupported dtype {dtype}")
    text = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        _DTYPE_TO_DESCR[dtype],
        _shape_repr(tuple(shape)),
    )
    # magic(6) + version(2) + length(2) + text + '\n' must be a multiple of ALIGN
    fixed = len(MAGIC) + len(VERSION) + 2
    pad = -(fixed + len(text) + 1) % ALIGN
    text = text + " " * pad + "\n"
    body = text.encode("latin1")
    if len(body) > 0xFFFF:
        raise BadHeaderError("header too long for format version 1.0")
    return MAGIC + VERSION + struct.pack("<H", len(body)) + body


def decode_header(buf: bytes) -> tuple[np.dtype, tuple[int, ...], int]:
    """Parse a preamble; returns (dtype, shape, payload offset)."""
    if len(buf) < 10 or buf[:6] != MAGIC:
        raise BadMagicError("missing \\x93NUMPY magic")
    if buf[6:8] != VERSION:
        raise BadHeaderError(f"unsupported format version {buf[6]}.{buf[7]}")
    (hlen,) = struct.unpack("<H", buf[8:10])
    if len(buf) < 10 + hlen:
        raise BadHeaderError("truncated header")
    try:
        header = ast.literal_eval(buf[10 : 10 + hlen].decode("latin1"))
    except (ValueError, SyntaxError, UnicodeDecodeError) as exc:
        raise BadHeaderError(f"unparseable header: {exc}") from None
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise BadHeaderError("header must have exactly descr, fortran_order, shape")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise BadHeaderError(f"invalid shape {shape!r}")
    if header["fortran_order"] is not False:
        raise BadHeaderError("only C-order arrays are supported")
    descr = header["descr"]
    if not isinstance(descr, str) or descr not in _DESCR_TO_DTYPE:
        raise UnsupportedDtypeError(f"unsupported dtype descriptor {descr!r}")
    return _DESCR_TO_DTYPE[descr], shape, 10 + hlen


def dumps(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f" and arr.dtype.itemsize == 4:
        arr = arr.astype("<f4", copy=False)
    header = encode_header(arr.dtype, arr.shape)
    return header + np.ascontiguousarray(arr).tobytes(order="C")


def loads(buf: bytes) -> np.ndarray:
    dtype, shape, offset = decode_header(buf)
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = len(buf) - offset
    if payload != expected:
        raise ShapeMismatchError(
            f"header shape {shape} needs {expected} payload bytes, file has {payload}"
        )
    return np.frombuffer(buf, dtype=dtype, offset=offset).reshape(shape).copy()


def write_npy(arr: np.ndarray, path) -> None:
    path = os.fspath(path)
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"parent directory does not exist: {parent}")
    data = dumps(arr)
    with open(path, "wb") as fh:
        fh.write(data)


def read_npy(path) -> np.ndarray:
    with open(os.fspath(path), "rb") as fh:
        return loads(fh.read())
