"""Flat tensor-archive file format.

Layout: an 8-byte little-endian unsigned header length, a UTF-8 JSON header,
then the raw tensor data section. The header maps each tensor name to
``{"dtype": ..., "shape": [...], "data_offsets": [begin, end]}`` (offsets are
relative to the start of the data section and must be contiguous), plus an
optional ``"__metadata__"`` entry holding a string-to-string map. This is the
same convention used by the common open-weights archive format, so files
written here interoperate with external training stacks.

Supported dtypes: float32 (``F32``), float16 (``F16``) and packed int4
(``I4``, two codes per byte along the last axis). float16 data is upconverted
to float32 on load; the declared dtype is kept so writes are bit-exact.
Group-scale tables for int4 tensors are stored as companion ``F32`` entries
by the quantization layer (see :mod:`shopforge.quant`).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

_HEADER_PREFIX = struct.Struct("<Q")

_DTYPE_CODES = {"float32": "F32", "float16": "F16", "int4": "I4"}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class ArchiveError(Exception):
    """Base class for archive format errors."""


class MalformedHeaderError(ArchiveError):
    """Header prefix or JSON is invalid, or an entry is structurally wrong."""


class TruncatedDataError(ArchiveError):
    """Data section is shorter than the header declares."""


class OverlappingOffsetsError(ArchiveError):
    """Byte ranges overlap, leave gaps, or are out of order."""


class UnknownDtypeError(ArchiveError):
    """Header declares a dtype this library does not support."""


def _nbytes(dtype: str, shape: tuple[int, ...]) -> int:
    count = 1
    for d in shape:
        count *= d
    if dtype == "float32":
        return count * 4
    if dtype == "float16":
        return count * 2
    if dtype == "int4":
        return count // 2
    raise UnknownDtypeError(f"unknown dtype {dtype!r}")


@dataclass
class Tensor:
    """One named tensor: logical shape, declared dtype, row-major data.

    Float data is held as float32 regardless of the declared dtype. int4
    data is held packed, as a uint8 array whose last axis is half the
    logical last dimension.
    """

    shape: tuple[int, ...]
    dtype: str
    data: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(d) for d in self.shape)
        if self.dtype not in _DTYPE_CODES:
            raise UnknownDtypeError(f"unknown dtype {self.dtype!r}")
        if any(d <= 0 for d in self.shape):
            raise ValueError(f"zero or negative dimension in shape {self.shape}")
        count = 1
        for d in self.shape:
            count *= d
        if self.dtype == "int4":
            if self.shape[-1] % 2 != 0:
                raise ValueError("int4 tensors need an even last dimension")
            self.data = np.ascontiguousarray(self.data, dtype=np.uint8)
            expected = count // 2
        else:
            self.data = np.ascontiguousarray(self.data, dtype=np.float32)
            expected = count
        if self.data.size != expected:
            raise ValueError(
                f"element count of data ({self.data.size}) does not match shape {self.shape}"
            )

    def storage_bytes(self) -> bytes:
        """Bytes exactly as serialized into the data section."""
        if self.dtype == "float16":
            return self.data.astype(np.float16).tobytes()
        return self.data.tobytes()

    def nbytes(self) -> int:
        return _nbytes(self.dtype, self.shape)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.dtype == other.dtype
            and self.storage_bytes() == other.storage_bytes()
        )


def tensor_from_array(arr: np.ndarray, dtype: str = "float32") -> Tensor:
    """Wrap a float array as a Tensor with the given declared dtype."""
    arr = np.asarray(arr)
    return Tensor(shape=arr.shape, dtype=dtype, data=arr.astype(np.float32))


@dataclass
class TensorArchive:
    """Named tensors plus a string-to-string metadata map.

    Archives are immutable after load by convention: merge and quantization
    steps build new archives rather than mutating loaded ones.
    """

    entries: dict[str, Tensor] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self.entries:
            raise ValueError(f"duplicate tensor name {name!r}")
        self.entries[name] = tensor

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorArchive):
            return NotImplemented
        return self.entries == other.entries and self.metadata == other.metadata


def write_archive(archive: TensorArchive, path) -> None:
    """Serialize an archive. Tensor data is written bit-exact."""
    header: dict = {}
    if archive.metadata:
        header["__metadata__"] = {str(k): str(v) for k, v in archive.metadata.items()}
    offset = 0
    blobs = []
    for name, tensor in archive.entries.items():
        blob = tensor.storage_bytes()
        if len(blob) != tensor.nbytes():
            raise ArchiveError(f"tensor {name!r}: byte size mismatch")
        header[name] = {
            "dtype": _DTYPE_CODES[tensor.dtype],
            "shape": list(tensor.shape),
            "data_offsets": [offset, offset + len(blob)],
        }
        offset += len(blob)
        blobs.append(blob)
    header_bytes = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER_PREFIX.pack(len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def read_archive(path) -> TensorArchive:
    """Read an archive, materializing every tensor.

    Raises a distinct error per failure mode: :class:`MalformedHeaderError`,
    :class:`TruncatedDataError`, :class:`OverlappingOffsetsError`,
    :class:`UnknownDtypeError`.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER_PREFIX.size:
        raise MalformedHeaderError("file shorter than the 8-byte header prefix")
    (header_len,) = _HEADER_PREFIX.unpack_from(raw, 0)
    header_end = _HEADER_PREFIX.size + header_len
    if header_end > len(raw):
        raise MalformedHeaderError("declared header length exceeds file size")
    try:
        header = json.loads(raw[_HEADER_PREFIX.size:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"header is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedHeaderError("header JSON must be an object")

    metadata = header.pop("__metadata__", {})
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise MalformedHeaderError("__metadata__ must map strings to strings")

    data = raw[header_end:]
    archive = TensorArchive(metadata=dict(metadata))
    expected_offset = 0
    for name, entry in header.items():
        try:
            code = entry["dtype"]
            shape = tuple(int(d) for d in entry["shape"])
            begin, end = (int(x) for x in entry["data_offsets"])
        except (TypeError, KeyError, ValueError) as exc:
            raise MalformedHeaderError(f"entry {name!r} is malformed: {exc}") from exc
        if code not in _CODE_DTYPES:
            raise UnknownDtypeError(f"entry {name!r} declares unknown dtype {code!r}")
        dtype = _CODE_DTYPES[code]
        if any(d <= 0 for d in shape):
            raise MalformedHeaderError(f"entry {name!r} has a non-positive dimension")
        if dtype == "int4" and shape[-1] % 2 != 0:
            raise MalformedHeaderError(f"int4 entry {name!r} has an odd last dimension")
        if begin != expected_offset or end < begin:
            raise OverlappingOffsetsError(
                f"entry {name!r}: offsets [{begin}, {end}) not contiguous at {expected_offset}"
            )
        if end - begin != _nbytes(dtype, shape):
            raise MalformedHeaderError(
                f"entry {name!r}: byte range {end - begin} does not match shape {shape}"
            )
        if end > len(data):
            raise TruncatedDataError(
                f"entry {name!r} needs bytes up to {end}, data section has {len(data)}"
            )
        blob = data[begin:end]
        if dtype == "int4":
            packed_shape = shape[:-1] + (shape[-1] // 2,)
            arr = np.frombuffer(blob, dtype=np.uint8).reshape(packed_shape).copy()
        elif dtype == "float16":
            arr = np.frombuffer(blob, dtype=np.float16).reshape(shape).astype(np.float32)
        else:
            arr = np.frombuffer(blob, dtype=np.float32).reshape(shape).copy()
        archive.add(name, Tensor(shape=shape, dtype=dtype, data=arr))
        expected_offset = end
    if expected_offset != len(data):
        raise TruncatedDataError(
            f"data section has {len(data)} bytes, header accounts for {expected_offset}"
        )
    return archive


def format_table(archive: TensorArchive) -> str:
    """Human-readable name/shape/dtype table for `forge inspect`."""
    rows = [("name", "shape", "dtype", "bytes")]
    for name, t in archive.entries.items():
        rows.append((name, "x".join(str(d) for d in t.shape), t.dtype, str(t.nbytes())))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    if archive.metadata:
        lines.append("")
        lines.append("metadata:")
        for k in sorted(archive.metadata):
            lines.append(f"  {k} = {archive.metadata[k]}")
    return "\n".join(lines)
