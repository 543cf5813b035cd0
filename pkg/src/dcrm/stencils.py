"""Fixed 3x3 finite-difference kernels applied as valid correlations.

Kernels use the correlation convention (no flip):
``out[i, j] = scale * sum_ab weights[a, b] * padded[i + a, j + b]``.
Row index increases with ``y`` and column index with ``x``, so the
``grad_y`` pattern has its ``-1`` in the first row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec

LAPLACIAN_PATTERN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
GRAD_X_PATTERN = np.array([[0.0, 0.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
GRAD_Y_PATTERN = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
IDENTITY_PATTERN = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])


@dataclass(frozen=True)
class StencilKernel:
    weights: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (3, 3) or not np.all(np.isfinite(w)) or not np.isfinite(self.scale):
            raise ValueError("stencil must be a finite 3x3 pattern")
        object.__setattr__(self, "weights", w)

    @property
    def filter(self) -> np.ndarray:
        """Scaled 3x3 filter."""
        return self.scale * self.weights


def laplacian_kernel(grid: GridSpec) -> StencilKernel:
    return StencilKernel(LAPLACIAN_PATTERN, 1.0 / grid.spacing**2)


def grad_x_kernel(grid: GridSpec) -> StencilKernel:
    return StencilKernel(GRAD_X_PATTERN, 1.0 / (2.0 * grid.spacing))


def grad_y_kernel(grid: GridSpec) -> StencilKernel:
    return StencilKernel(GRAD_Y_PATTERN, 1.0 / (2.0 * grid.spacing))


def identity_kernel() -> StencilKernel:
    return StencilKernel(IDENTITY_PATTERN, 1.0)


def apply_stencil(k: StencilKernel, padded: np.ndarray, out_shape=None) -> np.ndarray:
    """Valid 3x3 correlation of a padded field (or a stack of them on leading axes)."""
    padded = np.asarray(padded, dtype=np.float64)
    if padded.ndim < 2 or padded.shape[-1] < 3 or padded.shape[-2] < 3:
        raise ValueError(f"padded field too small: {padded.shape}")
    h, w = padded.shape[-2] - 2, padded.shape[-1] - 2
    if out_shape is not None and tuple(out_shape) != (h, w):
        raise ValueError(f"padded shape {padded.shape[-2:]} does not fit output {tuple(out_shape)}")
    out = np.zeros(padded.shape[:-2] + (h, w))
    for a in range(3):
        for b in range(3):
            c = k.weights[a, b]
            if c != 0.0:
                out += c * padded[..., a : a + h, b : b + w]
    return k.scale * out


def stencil_adjoint(k: StencilKernel, cotangent: np.ndarray) -> np.ndarray:
    """Transpose of :func:`apply_stencil`: scatter a ``(H, W)`` cotangent onto ``(H+2, W+2)``."""
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.ndim < 2:
        raise ValueError(f"cotangent must be at least 2D, got {cot.shape}")
    h, w = cot.shape[-2:]
    out = np.zeros(cot.shape[:-2] + (h + 2, w + 2))
    for a in range(3):
        for b in range(3):
            c = k.weights[a, b]
            if c != 0.0:
                out[..., a : a + h, b : b + w] += c * cot
    return k.scale * out
