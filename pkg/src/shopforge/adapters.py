"""LoRA delta application, weighted multi-adapter ensembling, and wise-ft
interpolation via square-root rescaling of the low-rank factors.

A low-rank adapter stores, per target tensor, a factor pair (A: d_out x r,
B: r x d_in). Its delta is ``lora_scale * (A @ B)`` with
``lora_scale = alpha / rank``, the scale standard trainers bake into the
forward pass. Folding an adapter at interpolation weight ``w`` yields
``base + w * lora_scale * (A @ B)``; summing several weighted deltas onto one
base realizes the adapter ensemble. Interpolating toward the base (wise-ft)
at fraction ``a`` is implemented by multiplying both factors by ``sqrt(a)``,
so the rescaled adapter applied at unit weight equals the original applied at
weight ``a``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .archive import Tensor, TensorArchive

# Defaults matching the training configuration this toolkit targets.
DEFAULT_RANK = 64
DEFAULT_ALPHA = 32.0

LORA_A_SUFFIX = ".lora_a"
LORA_B_SUFFIX = ".lora_b"

WEIGHT_WARN_THRESHOLD = 1.5


class AdapterCompatibilityError(ValueError):
    """Adapter factors do not fit the adapter rank or the base archive."""


class NonFiniteResultError(ArithmeticError):
    """A merge produced inf or NaN."""


@dataclass
class LoraAdapter:
    """Per-target low-rank factor pairs plus rank/alpha metadata."""

    name: str
    rank: int
    alpha: float
    targets: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.rank <= 0:
            raise AdapterCompatibilityError(f"rank must be positive, got {self.rank}")
        if not (self.alpha > 0):
            raise AdapterCompatibilityError(f"alpha must be positive, got {self.alpha}")
        normalized = {}
        for target, (a, b) in self.targets.items():
            a = np.ascontiguousarray(a, dtype=np.float32)
            b = np.ascontiguousarray(b, dtype=np.float32)
            if a.ndim != 2 or b.ndim != 2:
                raise AdapterCompatibilityError(f"{target!r}: factors must be matrices")
            if a.shape[1] != self.rank or b.shape[0] != self.rank:
                raise AdapterCompatibilityError(
                    f"{target!r}: factor shapes {a.shape}/{b.shape} do not match rank {self.rank}"
                )
            normalized[target] = (a, b)
        self.targets = normalized

    @property
    def lora_scale(self) -> float:
        """Training-time scale alpha/rank applied to every delta."""
        return self.alpha / self.rank


def apply_delta(
    base_tensor: np.ndarray,
    adapter_target: tuple[np.ndarray, np.ndarray],
    scale: float,
    lora_scale: float = 1.0,
) -> np.ndarray:
    """Return ``base + scale * lora_scale * (A @ B)`` in float32.

    A zero scale short-circuits and returns the base unchanged (bitwise), so
    the zero-interpolation path carries no floating-point drift.
    """
    if not math.isfinite(scale):
        raise ValueError(f"scale must be finite, got {scale}")
    base = np.ascontiguousarray(base_tensor, dtype=np.float32)
    if scale == 0.0:
        return base.copy()
    a, b = adapter_target
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if base.ndim != 2 or a.shape[0] != base.shape[0] or b.shape[1] != base.shape[1]:
        raise AdapterCompatibilityError(
            f"delta shape {a.shape[0]}x{b.shape[1]} does not fit base {base.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise AdapterCompatibilityError(f"inner ranks differ: {a.shape} vs {b.shape}")
    out = base + np.float32(scale * lora_scale) * (a @ b)
    if not np.isfinite(out).all():
        raise NonFiniteResultError("delta application produced non-finite values")
    return out


def wise_ft_rescale(adapter: LoraAdapter, alpha_interp: float) -> LoraAdapter:
    """Scale every factor by sqrt(alpha_interp).

    Applying the rescaled adapter at unit weight then equals applying the
    original at weight ``alpha_interp``.
    """
    if alpha_interp < 0:
        raise ValueError(f"interpolation fraction must be >= 0, got {alpha_interp}")
    root = np.float32(math.sqrt(alpha_interp))
    targets = {t: (root * a, root * b) for t, (a, b) in adapter.targets.items()}
    return LoraAdapter(name=adapter.name, rank=adapter.rank, alpha=adapter.alpha, targets=targets)


@dataclass
class MergeStep:
    """One adapter folded at a given weight.

    ``lora_scale`` overrides alpha/rank when set; use 1.0 for adapters whose
    factors are already pre-scaled.
    """

    adapter: LoraAdapter
    weight: float
    lora_scale: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.weight) or self.weight < 0:
            raise ValueError(f"step weight must be finite and >= 0, got {self.weight}")
        if self.weight > WEIGHT_WARN_THRESHOLD:
            warnings.warn(
                f"adapter {self.adapter.name!r} folded at weight {self.weight} > "
                f"{WEIGHT_WARN_THRESHOLD}; extrapolated soups are untested territory",
                stacklevel=2,
            )

    @property
    def effective_lora_scale(self) -> float:
        return self.adapter.lora_scale if self.lora_scale is None else self.lora_scale


@dataclass
class MergePlan:
    """Ordered adapters-with-weights to fold into a base archive."""

    base: TensorArchive
    steps: list[MergeStep] = field(default_factory=list)

    def validate(self) -> None:
        for step in self.steps:
            for target, (a, b) in step.adapter.targets.items():
                tensor = self.base.entries.get(target)
                if tensor is None:
                    raise AdapterCompatibilityError(
                        f"adapter {step.adapter.name!r} targets {target!r}, absent from base"
                    )
                if tensor.shape != (a.shape[0], b.shape[1]):
                    raise AdapterCompatibilityError(
                        f"adapter {step.adapter.name!r} target {target!r}: delta "
                        f"{a.shape[0]}x{b.shape[1]} vs base {tensor.shape}"
                    )


def execute_merge(plan: MergePlan) -> TensorArchive:
    """Fold every step's delta into the base, summing per target tensor.

    Addition commutes, so sequential folding equals the one-shot sum. Target
    tensors are rebuilt in float32; everything else is copied unchanged. The
    plan itself is recorded in the output metadata. Per-tensor merges are
    independent (each output tensor is produced exactly once), so this loop
    is safe to parallelize if archives ever outgrow desk scale.
    """
    plan.validate()
    deltas: dict[str, np.ndarray] = {}
    for step in plan.steps:
        if step.weight == 0.0:
            continue
        scale = np.float32(step.weight * step.effective_lora_scale)
        for target, (a, b) in step.adapter.targets.items():
            delta = scale * (a @ b)
            if target in deltas:
                deltas[target] = deltas[target] + delta
            else:
                deltas[target] = delta

    merged = TensorArchive(metadata=dict(plan.base.metadata))
    for name, tensor in plan.base.entries.items():
        if name in deltas:
            out = tensor.data + deltas[name]
            if not np.isfinite(out).all():
                raise NonFiniteResultError(f"merge produced non-finite values in {name!r}")
            merged.add(name, Tensor(shape=tensor.shape, dtype=tensor.dtype, data=out))
        else:
            merged.add(name, Tensor(shape=tensor.shape, dtype=tensor.dtype, data=tensor.data.copy()))
    merged.metadata["merge_plan"] = json.dumps(
        [
            {
                "adapter": step.adapter.name,
                "weight": step.weight,
                "lora_scale": step.effective_lora_scale,
            }
            for step in plan.steps
        ]
    )
    return merged


def adapter_to_archive(adapter: LoraAdapter) -> TensorArchive:
    """Store factors as `<target>.lora_a` / `<target>.lora_b` entries."""
    archive = TensorArchive(
        metadata={
            "format": "lora",
            "adapter_name": adapter.name,
            "lora_rank": str(adapter.rank),
            "lora_alpha": repr(adapter.alpha),
        }
    )
    for target, (a, b) in adapter.targets.items():
        archive.add(target + LORA_A_SUFFIX, Tensor(shape=a.shape, dtype="float32", data=a))
        archive.add(target + LORA_B_SUFFIX, Tensor(shape=b.shape, dtype="float32", data=b))
    return archive


def adapter_from_archive(archive: TensorArchive) -> LoraAdapter:
    if archive.metadata.get("format") != "lora":
        raise AdapterCompatibilityError("archive metadata does not declare format=lora")
    try:
        rank = int(archive.metadata["lora_rank"])
        alpha = float(archive.metadata["lora_alpha"])
    except (KeyError, ValueError) as exc:
        raise AdapterCompatibilityError(f"bad adapter metadata: {exc}") from exc
    name = archive.metadata.get("adapter_name", "adapter")
    targets: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for entry_name, tensor in archive.entries.items():
        if entry_name.endswith(LORA_A_SUFFIX):
            target = entry_name[: -len(LORA_A_SUFFIX)]
            b_entry = archive.entries.get(target + LORA_B_SUFFIX)
            if b_entry is None:
                raise AdapterCompatibilityError(f"{target!r}: lora_a without lora_b")
            targets[target] = (tensor.data, b_entry.data)
        elif not entry_name.endswith(LORA_B_SUFFIX):
            raise AdapterCompatibilityError(f"unexpected entry {entry_name!r} in adapter archive")
    return LoraAdapter(name=name, rank=rank, alpha=alpha, targets=targets)
