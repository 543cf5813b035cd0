"""Grid geometry, batched fields and normalisation statistics.

Fields are plain ``numpy`` arrays.  A single field has shape ``(dof, dof)``
with row index ``j`` running along ``y`` and column index ``k`` along ``x``,
so ``field[j, k]`` is the value at ``(x_k, y_j)``.  Batches are rank-4
``(N, C, dof, dof)`` blocks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class CaseId(enum.IntEnum):
    CASE1 = 1
    CASE2 = 2
    CASE3 = 3


@dataclass(frozen=True)
class GridSpec:
    """Uniform node-centred grid on the unit square, endpoints included."""

    n_points_per_side: int

    def __post_init__(self):
        if int(self.n_points_per_side) != self.n_points_per_side or self.n_points_per_side < 3:
            raise ValueError(f"grid needs at least 3 points per side, got {self.n_points_per_side}")

    @property
    def dof(self) -> int:
        return self.n_points_per_side

    @property
    def spacing(self) -> float:
        return 1.0 / (self.n_points_per_side - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dof, self.dof)

    def nodes(self) -> np.ndarray:
        """1D node coordinates ``0, h, ..., 1``."""
        return np.linspace(0.0, 1.0, self.dof)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """``(X, Y)`` coordinate arrays laid out like a field."""
        x = self.nodes()
        return np.meshgrid(x, x, indexing="xy")

    def sample(self, fn) -> np.ndarray:
        X, Y = self.mesh()
        return np.asarray(fn(X, Y), dtype=np.float64) * np.ones(self.shape)


def as_field(values, grid: GridSpec) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != grid.shape:
        raise ValueError(f"field shape {arr.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field contains non-finite values")
    return arr


def check_batch(batch: np.ndarray, channels: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"expected a [N, C, H, W] batch, got shape {arr.shape}")
    if arr.shape[1] not in (1, 2) or (channels is not None and arr.shape[1] != channels):
        raise ValueError(f"unexpected channel count {arr.shape[1]}")
    if arr.shape[2] != arr.shape[3]:
        raise ValueError("batch fields must be square")
    if not np.all(np.isfinite(arr)):
        raise ValueError("batch contains non-finite values")
    return arr


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean and standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64).reshape(-1))
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have one entry per channel")

    @classmethod
    def from_batch(cls, batch: np.ndarray) -> "NormStats":
        batch = check_batch(batch)
        return cls(batch.mean(axis=(0, 2, 3)), batch.std(axis=(0, 2, 3)))

    def guarded(self) -> "NormStats":
        """Replace zero deviations by one so constant channels pass through centred."""
        std = np.where(self.std > 0, self.std, 1.0)
        return NormStats(self.mean, std)


def _broadcast(stats: NormStats, batch: np.ndarray):
    if stats.mean.size != batch.shape[1]:
        raise ValueError(f"stats for {stats.mean.size} channels, batch has {batch.shape[1]}")
    if np.any(stats.std <= 0):
        raise ValueError("degenerate channel: standard deviation must be positive")
    return stats.mean[None, :, None, None], stats.std[None, :, None, None]


def normalize(batch: np.ndarray, stats: NormStats) -> np.ndarray:
    batch = check_batch(batch)
    mean, std = _broadcast(stats, batch)
    return (batch - mean) / std


def denormalize(batch: np.ndarray, stats: NormStats) -> np.ndarray:
    batch = check_batch(batch)
    mean, std = _broadcast(stats, batch)
    return batch * std + mean


@dataclass(frozen=True)
class Dataset:
    """Input fields (source, boundary mask), optional solver labels and statistics.

    ``norm_stats`` holds the input statistics (one pair per input channel);
    ``output_stats`` holds the label statistics used when a network regresses
    normalised labels.  Only ``norm_stats`` is persisted in the container,
    label statistics are recomputed on load.
    """

    inputs: np.ndarray
    outputs: Optional[np.ndarray]
    norm_stats: NormStats
    seed: int
    case_id: CaseId
    params: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "inputs", check_batch(self.inputs, channels=2))
        if self.outputs is not None:
            out = check_batch(self.outputs, channels=1)
            if out.shape[0] != self.inputs.shape[0] or out.shape[2:] != self.inputs.shape[2:]:
                raise ValueError("outputs do not match inputs")
            object.__setattr__(self, "outputs", out)
        if np.any(self.norm_stats.std <= 0):
            raise ValueError("degenerate channel: standard deviation must be positive")
        object.__setattr__(self, "case_id", CaseId(self.case_id))

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dof(self) -> int:
        return self.inputs.shape[-1]

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.dof)

    @property
    def has_labels(self) -> bool:
        return self.outputs is not None

    @property
    def output_stats(self) -> Optional[NormStats]:
        if self.outputs is None:
            return None
        return NormStats.from_batch(self.outputs).guarded()

    def source(self) -> np.ndarray:
        return self.inputs[:, 0:1]

    def mask(self) -> np.ndarray:
        return self.inputs[:, 1:2]
