"""Training objectives and the evaluation metric on hard-enforced predictions.

Every loss takes the raw network field ``pred`` ``[N, 1, D, D]`` and the
boundary image ``bvals`` (the unnormalised mask channel carrying ``g`` on the
border).  Border nodes of ``pred`` are overwritten with ``g`` and a ghost ring
is added before any stencil is applied, so no boundary penalty term is ever
needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import stencils
from .fdsolve import ENERGY_GHOST, ENERGY_QUADRATURE
from .grid import GridSpec
from .net import DTYPE
from .quadrature import QuadratureRule


@dataclass
class LossValue:
    scalar: torch.Tensor
    per_sample: torch.Tensor

    def item(self) -> float:
        return float(self.scalar.detach())


def _t(a) -> torch.Tensor:
    return torch.as_tensor(a, dtype=DTYPE)


def _check_pair(a: torch.Tensor, b: torch.Tensor):
    if a.ndim != 4 or a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def border_mask_t(dof: int) -> torch.Tensor:
    m = torch.zeros(dof, dof, dtype=torch.bool)
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
    return m


def enforce_boundary(pred, bvals) -> torch.Tensor:
    pred, bvals = _t(pred), _t(bvals)
    _check_pair(pred, bvals)
    return torch.where(border_mask_t(pred.shape[-1]), bvals, pred)


def pad_ghost(u: torch.Tensor, ghost: str = "boundary") -> torch.Tensor:
    """Ghost ring around a boundary-enforced field.

    ``boundary`` copies ``g`` from the nearest border node; ``reflect`` uses
    ``2 g - u_inner`` (corners ``2 u_corner - u_diagonal``).
    """
    edge = F.pad(u, (1, 1, 1, 1), mode="replicate")
    if ghost == "boundary":
        return edge
    if ghost == "reflect":
        return 2.0 * edge - F.pad(u, (1, 1, 1, 1), mode="reflect")
    raise ValueError(f"unknown ghost rule {ghost!r}")


def _stencil(k: stencils.StencilKernel, padded: torch.Tensor) -> torch.Tensor:
    return F.conv2d(padded, _t(k.filter).reshape(1, 1, 3, 3))


def supervised_loss(pred, truth) -> LossValue:
    pred, truth = _t(pred), _t(truth)
    _check_pair(pred, truth)
    per = ((pred - truth) ** 2).mean(dim=(1, 2, 3))
    return LossValue(per.mean(), per)


def cpinn_residual(pred, source, bvals) -> torch.Tensor:
    """``Laplace_h(U) - F`` on interior nodes, zero on the (enforced) border."""
    source = _t(source)
    u = enforce_boundary(pred, bvals)
    _check_pair(u, source)
    grid = GridSpec(u.shape[-1])
    lap = _stencil(stencils.laplacian_kernel(grid), pad_ghost(u))
    interior = ~border_mask_t(grid.dof)
    return torch.where(interior, lap - source, torch.zeros_like(lap))


def cpinn_loss(pred, source, bvals) -> LossValue:
    r = cpinn_residual(pred, source, bvals)
    per = (r**2).mean(dim=(1, 2, 3))
    return LossValue(per.mean(), per)


def energy_density(padded: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
    """``1/2 |grad U|^2 + U F`` from a ghost-padded field, central differences."""
    grid = GridSpec(padded.shape[-1] - 2)
    gx = _stencil(stencils.grad_x_kernel(grid), padded)
    gy = _stencil(stencils.grad_y_kernel(grid), padded)
    u = padded[..., 1:-1, 1:-1]
    return 0.5 * (gx**2 + gy**2) + u * source


def energy_from_padded(padded, source, rule: QuadratureRule) -> LossValue:
    padded, source = _t(padded), _t(source)
    if padded.shape[-1] - 2 != rule.dof or source.shape[-1] != rule.dof:
        raise ValueError("field and quadrature rule sizes differ")
    per = (energy_density(padded, source) * _t(rule.weights_2d)).sum(dim=(1, 2, 3))
    return LossValue(per.mean(), per)


def dcrm_energy(pred, source, bvals, rule: QuadratureRule | None = None, ghost: str = ENERGY_GHOST) -> LossValue:
    """Quadrature energy per sample, batch mean.

    All in-scope problems are Dirichlet on every edge, so the Neumann work
    term vanishes.  The loss may be negative.
    """
    u = enforce_boundary(pred, bvals)
    if rule is None:
        rule = QuadratureRule.build(ENERGY_QUADRATURE, u.shape[-1])
    return energy_from_padded(pad_ghost(u, ghost), source, rule)


def e_abs(pred, truth) -> np.ndarray:
    """Per-sample sum of squared errors."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return ((pred - truth) ** 2).reshape(pred.shape[0], -1).sum(axis=1)


def e_abs_normalized(pred, truth) -> np.ndarray:
    """Per-sample ``sum (pred - truth)^2 / sum truth^2``."""
    truth = np.asarray(truth, dtype=np.float64)
    denom = (truth**2).reshape(truth.shape[0], -1).sum(axis=1)
    if np.any(denom == 0):
        raise ValueError("cannot normalise against an all-zero reference field")
    return e_abs(pred, truth) / denom
