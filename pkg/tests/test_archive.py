import json
import struct

import numpy as np
import pytest

from shopforge.archive import (
    MalformedHeaderError,
    OverlappingOffsetsError,
    Tensor,
    TensorArchive,
    TruncatedDataError,
    UnknownDtypeError,
    read_archive,
    write_archive,
)


def _craft(header: dict, data: bytes) -> bytes:
    blob = json.dumps(header).encode("utf-8")
    return struct.pack("<Q", len(blob)) + blob + data


def test_round_trip_identity(tmp_path):
    archive = TensorArchive(metadata={"origin": "test"})
    archive.add("a", Tensor(shape=(2, 3), dtype="float32", data=np.arange(6, dtype=np.float32)))
    archive.add("b", Tensor(shape=(4,), dtype="float32", data=np.ones(4, np.float32)))
    path = tmp_path / "rt.safetensors"
    write_archive(archive, path)
    assert read_archive(path) == archive


def test_zero_tensor_2x2(tmp_path):
    archive = TensorArchive()
    archive.add("z", Tensor(shape=(2, 2), dtype="float32", data=np.zeros((2, 2), np.float32)))
    path = tmp_path / "z.safetensors"
    write_archive(archive, path)
    back = read_archive(path)
    t = back.entries["z"]
    assert t.shape == (2, 2)
    assert (t.data == 0.0).all()


def test_truncated_data_error(tmp_path):
    # Header declares 16 floats (64 bytes) but only 32 bytes follow.
    raw = _craft(
        {"w": {"dtype": "F32", "shape": [16], "data_offsets": [0, 64]}},
        b"\x00" * 32,
    )
    path = tmp_path / "trunc.safetensors"
    path.write_bytes(raw)
    with pytest.raises(TruncatedDataError):
        read_archive(path)


def test_empty_archive_round_trip(tmp_path):
    archive = TensorArchive()
    path = tmp_path / "empty.safetensors"
    write_archive(archive, path)
    assert read_archive(path) == archive


def test_metadata_survives_round_trip(tmp_path):
    archive = TensorArchive(metadata={"lora_rank": "64"})
    archive.add("w", Tensor(shape=(2,), dtype="float32", data=np.zeros(2, np.float32)))
    path = tmp_path / "meta.safetensors"
    write_archive(archive, path)
    assert read_archive(path).metadata == {"lora_rank": "64"}


def test_randomized_round_trip_harness(tmp_path):
    # 1000 random float32 tensors, read back bitwise equal.
    rng = np.random.default_rng(1234)
    archive = TensorArchive(metadata={"n": "1000"})
    for i in range(1000):
        shape = tuple(int(d) for d in rng.integers(1, 5, size=int(rng.integers(1, 4))))
        data = rng.normal(size=shape).astype(np.float32)
        archive.add(f"t{i:04d}", Tensor(shape=shape, dtype="float32", data=data))
    path = tmp_path / "many.safetensors"
    write_archive(archive, path)
    back = read_archive(path)
    assert back == archive
    for name, tensor in archive.entries.items():
        assert back.entries[name].data.tobytes() == tensor.data.tobytes()


def test_header_is_json_and_sizes_account(tmp_path):
    archive = TensorArchive(metadata={"k": "v"})
    archive.add("a", Tensor(shape=(3, 2), dtype="float32", data=np.zeros((3, 2), np.float32)))
    archive.add("b", Tensor(shape=(2, 4), dtype="float16", data=np.ones((2, 4), np.float32)))
    path = tmp_path / "sizes.safetensors"
    write_archive(archive, path)
    raw = path.read_bytes()
    (header_len,) = struct.unpack_from("<Q", raw, 0)
    header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    offsets = [tuple(v["data_offsets"]) for k, v in header.items() if k != "__metadata__"]
    assert offsets == sorted(offsets)
    total = sum(e - b for b, e in offsets)
    assert len(raw) == 8 + header_len + total
    assert total == 3 * 2 * 4 + 2 * 4 * 2


def test_float16_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    src = rng.normal(size=(5, 6)).astype(np.float16)
    archive = TensorArchive()
    archive.add("h", Tensor(shape=(5, 6), dtype="float16", data=src.astype(np.float32)))
    path = tmp_path / "f16.safetensors"
    write_archive(archive, path)
    back = read_archive(path)
    assert back.entries["h"].dtype == "float16"
    assert back.entries["h"].storage_bytes() == src.tobytes()
    # loaded data is float32 for arithmetic
    assert back.entries["h"].data.dtype == np.float32


def test_int4_round_trip(tmp_path):
    packed = np.arange(8, dtype=np.uint8).reshape(2, 4)
    archive = TensorArchive()
    archive.add("q", Tensor(shape=(2, 8), dtype="int4", data=packed))
    path = tmp_path / "i4.safetensors"
    write_archive(archive, path)
    back = read_archive(path)
    assert back.entries["q"].shape == (2, 8)
    assert back.entries["q"].data.tobytes() == packed.tobytes()


def test_malformed_header_error(tmp_path):
    path = tmp_path / "bad.safetensors"
    path.write_bytes(struct.pack("<Q", 5) + b"{oops" + b"")
    with pytest.raises(MalformedHeaderError):
        read_archive(path)
    path.write_bytes(b"\x01\x02")
    with pytest.raises(MalformedHeaderError):
        read_archive(path)


def test_overlapping_offsets_error(tmp_path):
    raw = _craft(
        {
            "a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},
            "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]},
        },
        b"\x00" * 12,
    )
    path = tmp_path / "over.safetensors"
    path.write_bytes(raw)
    with pytest.raises(OverlappingOffsetsError):
        read_archive(path)


def test_unknown_dtype_error(tmp_path):
    raw = _craft({"a": {"dtype": "BF16", "shape": [2], "data_offsets": [0, 4]}}, b"\x00" * 4)
    path = tmp_path / "dtype.safetensors"
    path.write_bytes(raw)
    with pytest.raises(UnknownDtypeError):
        read_archive(path)


def test_zero_dimension_rejected():
    with pytest.raises(ValueError):
        Tensor(shape=(0, 3), dtype="float32", data=np.zeros((0, 3), np.float32))


def test_duplicate_name_rejected():
    archive = TensorArchive()
    archive.add("a", Tensor(shape=(1,), dtype="float32", data=np.zeros(1, np.float32)))
    with pytest.raises(ValueError):
        archive.add("a", Tensor(shape=(1,), dtype="float32", data=np.zeros(1, np.float32)))
