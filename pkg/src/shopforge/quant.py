"""Group-wise asymmetric int4 quantization with zero-padding prep.

Weights are padded with zero columns so the inner dimension is a multiple of
the group size, then each contiguous group of ``group_size`` elements along
the inner dimension is mapped to 4-bit codes with a per-group affine
(scale, zero) pair: ``code = round((x - zero) / scale)`` clamped to [0, 15],
reconstructed as ``x_hat = code * scale + zero``. Rounding is
half-away-from-zero. Constant groups store scale 1 and zero equal to the
constant so they reconstruct exactly.

This is a desk-scale stand-in for activation-aware quantization: the config
keeps a hook for per-channel pre-scales so a calibrated scale vector can be
injected later, but no calibration search happens here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .archive import Tensor, TensorArchive

SCALES_SUFFIX = ".scales"
ZEROS_SUFFIX = ".zeros"

_CODE_MAX = 15  # 4-bit levels 0..15
_SYM_ZERO_CODE = 8


@dataclass
class QuantConfig:
    group_size: int = 128
    bits: int = 4
    symmetric: bool = False
    # Per-channel pre-scale hook for AWQ-style calibration; unused by default.
    channel_prescale: np.ndarray | None = None

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError(f"group_size must be >= 2, got {self.group_size}")
        if self.bits != 4:
            raise ValueError(f"only 4-bit quantization is supported, got {self.bits}")


@dataclass
class QuantizedTensor:
    packed: np.ndarray  # uint8, last dim = padded inner dim / 2
    scales: np.ndarray  # float32, one per group
    zeros: np.ndarray  # float32, one per group
    original_shape: tuple[int, ...]
    padded_shape: tuple[int, ...]

    def packed_nbytes(self) -> int:
        return self.packed.nbytes


def pad_for_groups(tensor: np.ndarray, group_size: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """Zero-pad the inner dimension up to the next multiple of group_size.

    Returns the padded matrix and the original shape; the original submatrix
    is preserved exactly.
    """
    if group_size < 2:
        raise ValueError(f"group_size must be >= 2, got {group_size}")
    arr = np.ascontiguousarray(tensor, dtype=np.float32)
    original_shape = arr.shape
    inner = arr.shape[-1]
    target = math.ceil(inner / group_size) * group_size
    if target == inner:
        return arr.copy(), original_shape
    pad = [(0, 0)] * arr.ndim
    pad[-1] = (0, target - inner)
    return np.pad(arr, pad), original_shape


def _round_half_away(v: np.ndarray) -> np.ndarray:
    # All quantization arguments are non-negative, so half-away == floor(v + 0.5).
    return np.floor(v + np.float32(0.5))


def quantize_groupwise(
    tensor: np.ndarray,
    config: QuantConfig,
    original_shape: tuple[int, ...] | None = None,
) -> QuantizedTensor:
    """Quantize an already group-aligned matrix to packed int4 codes."""
    arr = np.ascontiguousarray(tensor, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("input contains non-finite elements")
    rows, cols = arr.shape
    if cols % config.group_size != 0:
        raise ValueError(
            f"inner dimension {cols} is not a multiple of group_size {config.group_size}; "
            "pad_for_groups first"
        )
    if cols % 2 != 0:
        raise ValueError(f"inner dimension {cols} must be even for nibble packing")
    if original_shape is None:
        original_shape = arr.shape

    n_groups = cols // config.group_size
    grouped = arr.reshape(rows, n_groups, config.group_size)
    gmax = grouped.max(axis=2)
    gmin = grouped.min(axis=2)
    constant = gmax == gmin

    if config.symmetric:
        amax = np.maximum(np.abs(gmax), np.abs(gmin))
        scales = np.where(constant & (gmax == 0), np.float32(1.0), amax / np.float32(7.0))
        scales = np.where(scales == 0, np.float32(1.0), scales).astype(np.float32)
        zeros = (-np.float32(_SYM_ZERO_CODE) * scales).astype(np.float32)
    else:
        scales = np.where(constant, np.float32(1.0), (gmax - gmin) / np.float32(_CODE_MAX))
        scales = scales.astype(np.float32)
        zeros = np.where(constant, gmax, gmin).astype(np.float32)

    shifted = (grouped - zeros[:, :, None]) / scales[:, :, None]
    codes = np.clip(_round_half_away(shifted), 0, _CODE_MAX).astype(np.uint8)
    if not config.symmetric:
        codes[constant, :] = 0

    flat = codes.reshape(rows, cols)
    packed = (flat[:, 0::2] | (flat[:, 1::2] << 4)).astype(np.uint8)
    return QuantizedTensor(
        packed=packed,
        scales=scales,
        zeros=zeros,
        original_shape=tuple(original_shape),
        padded_shape=(rows, cols),
    )


def unpack_codes(q: QuantizedTensor) -> np.ndarray:
    """Recover the uint8 code matrix of padded_shape from the packed buffer."""
    rows, cols = q.padded_shape
    if q.packed.shape != (rows, cols // 2):
        raise ValueError(
            f"packed buffer shape {q.packed.shape} does not match padded shape {q.padded_shape}"
        )
    codes = np.empty((rows, cols), dtype=np.uint8)
    codes[:, 0::2] = q.packed & 0x0F
    codes[:, 1::2] = q.packed >> 4
    return codes


def dequantize(q: QuantizedTensor) -> np.ndarray:
    """Reconstruct a float32 matrix of padded_shape; slice to original_shape
    with :func:`slice_to_original` when the padding is not wanted."""
    codes = unpack_codes(q)
    rows, cols = q.padded_shape
    n_groups = q.scales.shape[1]
    group_size = cols // n_groups
    grouped = codes.reshape(rows, n_groups, group_size).astype(np.float32)
    out = grouped * q.scales[:, :, None] + q.zeros[:, :, None]
    return out.reshape(rows, cols).astype(np.float32)


def slice_to_original(q: QuantizedTensor, dense: np.ndarray) -> np.ndarray:
    idx = tuple(slice(0, d) for d in q.original_shape)
    return dense[idx]


def quantize_tensor(tensor: np.ndarray, config: QuantConfig) -> QuantizedTensor:
    """Pad then quantize in one step.

    For odd group sizes the pad target is bumped to the next even multiple so
    nibble packing stays whole-byte.
    """
    arr = np.ascontiguousarray(tensor, dtype=np.float32)
    padded, original_shape = pad_for_groups(arr, config.group_size)
    if padded.shape[-1] % 2 != 0:
        extra = padded.shape[-1] + config.group_size
        while extra % 2 != 0:
            extra += config.group_size
        pad = [(0, 0)] * padded.ndim
        pad[-1] = (0, extra - padded.shape[-1])
        padded = np.pad(padded, pad)
    return quantize_groupwise(padded, config, original_shape=original_shape)


def quantization_error(q: QuantizedTensor, original: np.ndarray) -> dict:
    """Max-abs error and RMSE of the reconstruction against the original."""
    recon = slice_to_original(q, dequantize(q))
    diff = recon - np.asarray(original, dtype=np.float32)
    return {
        "max_abs_error": float(np.abs(diff).max()) if diff.size else 0.0,
        "rmse": float(np.sqrt(np.mean(diff.astype(np.float64) ** 2))) if diff.size else 0.0,
    }


def quantized_to_entries(name: str, q: QuantizedTensor) -> dict[str, Tensor]:
    """Archive entries for one quantized tensor: packed codes plus the
    per-group scale and zero tables as companion float32 tensors."""
    return {
        name: Tensor(shape=q.padded_shape, dtype="int4", data=q.packed),
        name + SCALES_SUFFIX: Tensor(shape=q.scales.shape, dtype="float32", data=q.scales),
        name + ZEROS_SUFFIX: Tensor(shape=q.zeros.shape, dtype="float32", data=q.zeros),
    }


def quantized_from_entries(name: str, archive: TensorArchive) -> QuantizedTensor:
    packed_t = archive.entries[name]
    scales_t = archive.entries[name + SCALES_SUFFIX]
    zeros_t = archive.entries[name + ZEROS_SUFFIX]
    orig = archive.metadata.get(f"quant.orig_shape.{name}")
    original_shape = (
        tuple(int(x) for x in orig.split(",")) if orig else tuple(packed_t.shape)
    )
    return QuantizedTensor(
        packed=packed_t.data,
        scales=scales_t.data,
        zeros=zeros_t.data,
        original_shape=original_shape,
        padded_shape=tuple(packed_t.shape),
    )


def quantize_archive(archive: TensorArchive, config: QuantConfig) -> tuple[TensorArchive, dict]:
    """Quantize every 2-D float tensor; copy everything else through.

    Returns the quantized archive and a per-tensor error report.
    """
    out = TensorArchive(metadata=dict(archive.metadata))
    out.metadata["quant.group_size"] = str(config.group_size)
    out.metadata["quant.symmetric"] = str(config.symmetric).lower()
    out.metadata["quant.bits"] = str(config.bits)
    report: dict = {"group_size": config.group_size, "symmetric": config.symmetric, "tensors": {}}
    for name, tensor in archive.entries.items():
        if tensor.dtype == "int4" or tensor.data.ndim != 2:
            out.add(name, Tensor(shape=tensor.shape, dtype=tensor.dtype, data=tensor.data.copy()))
            report["tensors"][name] = {"skipped": True}
            continue
        q = quantize_tensor(tensor.data, config)
        for entry_name, entry in quantized_to_entries(name, q).items():
            out.add(entry_name, entry)
        out.metadata[f"quant.orig_shape.{name}"] = ",".join(str(d) for d in q.original_shape)
        err = quantization_error(q, tensor.data)
        err.update(
            original_shape=list(q.original_shape),
            padded_shape=list(q.padded_shape),
            packed_bytes=q.packed_nbytes(),
            source_bytes=tensor.nbytes(),
        )
        report["tensors"][name] = err
    return out, report


def dequantize_archive(archive: TensorArchive) -> TensorArchive:
    """Inverse of :func:`quantize_archive` for testing: reconstruct float32
    tensors sliced back to their original shapes."""
    out = TensorArchive(
        metadata={
            k: v
            for k, v in archive.metadata.items()
            if not k.startswith("quant.")
        }
    )
    for name, tensor in archive.entries.items():
        if tensor.dtype != "int4":
            base = name[: -len(SCALES_SUFFIX)] if name.endswith(SCALES_SUFFIX) else (
                name[: -len(ZEROS_SUFFIX)] if name.endswith(ZEROS_SUFFIX) else None
            )
            if base is not None and base in archive.entries and archive.entries[base].dtype == "int4":
                continue  # companion table of a quantized entry
            out.add(name, Tensor(shape=tensor.shape, dtype=tensor.dtype, data=tensor.data.copy()))
            continue
        q = quantized_from_entries(name, archive)
        dense = slice_to_original(q, dequantize(q))
        out.add(name, Tensor(shape=dense.shape, dtype="float32", data=dense))
    return out
