"""Boundary specifications, masking images and ghost-cell padding.

Edges are ordered ``bottom, right, top, left``.  Each edge value function
takes the coordinate running along that edge (``x`` on bottom/top, ``y`` on
left/right).  Corner nodes belong to the bottom and top edges unless only
the vertical edge is Dirichlet.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .grid import GridSpec, as_field

EDGES = ("bottom", "right", "top", "left")
_OPPOSITE = {"bottom": "top", "top": "bottom", "left": "right", "right": "left"}


class BCKind(str, enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class EdgeCondition:
    kind: BCKind
    value_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def values(self, s: np.ndarray) -> np.ndarray:
        if self.value_fn is None:
            return np.zeros_like(s, dtype=np.float64)
        return np.asarray(self.value_fn(s), dtype=np.float64) * np.ones_like(s, dtype=np.float64)


def dirichlet(fn=0.0) -> EdgeCondition:
    return EdgeCondition(BCKind.DIRICHLET, fn if callable(fn) else _const(fn))


def neumann(fn=0.0) -> EdgeCondition:
    return EdgeCondition(BCKind.NEUMANN, fn if callable(fn) else _const(fn))


def periodic() -> EdgeCondition:
    return EdgeCondition(BCKind.PERIODIC)


def _const(c: float):
    c = float(c)
    return lambda s: np.full(np.shape(s), c)


@dataclass(frozen=True)
class BoundarySpec:
    bottom: EdgeCondition
    right: EdgeCondition
    top: EdgeCondition
    left: EdgeCondition

    def __post_init__(self):
        for e in EDGES:
            cond = getattr(self, e)
            if (cond.kind is BCKind.PERIODIC) != (getattr(self, _OPPOSITE[e]).kind is BCKind.PERIODIC):
                raise ValueError(f"periodic edge {e} must be paired with a periodic {_OPPOSITE[e]} edge")

    @classmethod
    def uniform(cls, cond: EdgeCondition) -> "BoundarySpec":
        return cls(cond, cond, cond, cond)

    def edges(self):
        return [(e, getattr(self, e)) for e in EDGES]

    def kinds(self) -> set:
        return {c.kind for _, c in self.edges()}

    @property
    def all_dirichlet(self) -> bool:
        return self.kinds() == {BCKind.DIRICHLET}


@dataclass(frozen=True)
class BoundaryMaskImage:
    values: np.ndarray
    types: np.ndarray


def border_mask(dof: int) -> np.ndarray:
    m = np.zeros((dof, dof), dtype=bool)
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
    return m


def _edge_slices(dof: int):
    """Index of each edge's node line in a field; corners go to bottom/top."""
    return {
        "bottom": (0, slice(None)),
        "top": (dof - 1, slice(None)),
        "left": (slice(1, dof - 1), 0),
        "right": (slice(1, dof - 1), dof - 1),
    }


def boundary_values(spec: BoundarySpec, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Field with ``g`` on the border and zeros inside, plus the type image."""
    dof = grid.dof
    x = grid.nodes()
    vals = np.zeros(grid.shape)
    types = np.zeros(grid.shape)
    code = {BCKind.DIRICHLET: 1.0, BCKind.NEUMANN: 2.0, BCKind.PERIODIC: 0.0}
    sl = _edge_slices(dof)
    for e in ("left", "right", "bottom", "top"):
        cond = getattr(spec, e)
        s = x if e in ("bottom", "top") else x[1:-1]
        if cond.kind is not BCKind.PERIODIC:
            vals[sl[e]] = cond.values(s)
        types[sl[e]] = code[cond.kind]
    # a Dirichlet vertical edge claims the corner when its horizontal neighbour is not Dirichlet
    for row, horiz in ((0, "bottom"), (dof - 1, "top")):
        if getattr(spec, horiz).kind is BCKind.DIRICHLET:
            continue
        for col, vert in ((0, "left"), (dof - 1, "right")):
            cond = getattr(spec, vert)
            if cond.kind is BCKind.DIRICHLET:
                vals[row, col] = cond.values(np.array([x[row]]))[0]
                types[row, col] = 1.0
    return vals, types


def build_mask_channel(spec: BoundarySpec, grid: GridSpec) -> BoundaryMaskImage:
    vals, types = boundary_values(spec, grid)
    return BoundaryMaskImage(vals, types)


def enforce_dirichlet(u: np.ndarray, spec: BoundarySpec, grid: GridSpec) -> np.ndarray:
    """Overwrite Dirichlet boundary nodes of ``u`` with exact values."""
    u = as_field(u, grid).copy()
    vals, types = boundary_values(spec, grid)
    d = types == 1.0
    u[d] = vals[d]
    return u


GHOST_RULES = ("boundary", "reflect")


def ghost_pad(u: np.ndarray, ghost: str = "boundary") -> np.ndarray:
    """Ghost ring for a field whose border already holds the Dirichlet data.

    ``boundary``: each ghost copies the nearest border node, i.e. ``g``.
    ``reflect``: odd reflection through the border, ``2 g - u_inner``, which
    extends linear fields exactly; corners use ``2 u_corner - u_diagonal``.
    """
    u = np.asarray(u, dtype=np.float64)
    edge = np.pad(u, [(0, 0)] * (u.ndim - 2) + [(1, 1), (1, 1)], mode="edge")
    if ghost == "boundary":
        return edge
    if ghost == "reflect":
        return 2.0 * edge - np.pad(u, [(0, 0)] * (u.ndim - 2) + [(1, 1), (1, 1)], mode="reflect")
    raise ValueError(f"unknown ghost rule {ghost!r}; expected one of {GHOST_RULES}")


def ghost_pad_adjoint(cot: np.ndarray, ghost: str = "boundary") -> np.ndarray:
    """Transpose of :func:`ghost_pad`: fold a padded cotangent back onto the field."""
    cot = np.asarray(cot, dtype=np.float64)
    out = cot[1:-1, 1:-1].copy()
    sign = 1.0 if ghost == "boundary" else 2.0
    if ghost not in GHOST_RULES:
        raise ValueError(f"unknown ghost rule {ghost!r}")
    # sides
    out[0, :] += sign * cot[0, 1:-1]
    out[-1, :] += sign * cot[-1, 1:-1]
    out[:, 0] += sign * cot[1:-1, 0]
    out[:, -1] += sign * cot[1:-1, -1]
    for r, c, rr, cc in ((0, 0, 0, 0), (0, -1, 0, -1), (-1, 0, -1, 0), (-1, -1, -1, -1)):
        out[rr, cc] += sign * cot[r, c]
    if ghost == "reflect":
        out[1, :] -= cot[0, 1:-1]
        out[-2, :] -= cot[-1, 1:-1]
        out[:, 1] -= cot[1:-1, 0]
        out[:, -2] -= cot[1:-1, -1]
        out[1, 1] -= cot[0, 0]
        out[1, -2] -= cot[0, -1]
        out[-2, 1] -= cot[-1, 0]
        out[-2, -2] -= cot[-1, -1]
    return out


def pad_dirichlet(u: np.ndarray, spec: BoundarySpec, grid: GridSpec, ghost: str = "boundary") -> np.ndarray:
    """Hard-enforce ``g`` on the border of ``u`` and add a ghost ring.

    With the default ``boundary`` rule the ghosts take ``g`` at the nearest
    boundary point, so the ring is an edge replicate of the enforced field.
    """
    if not spec.all_dirichlet:
        raise ValueError("pad_dirichlet requires Dirichlet conditions on every edge")
    return ghost_pad(enforce_dirichlet(u, spec, grid), ghost)


def pad_periodic(u: np.ndarray) -> np.ndarray:
    """Wrap padding: ghosts copy the opposite row/column, corners wrap diagonally."""
    u = np.asarray(u, dtype=np.float64)
    return np.pad(u, 1, mode="wrap")


def pad_field(u: np.ndarray, spec: BoundarySpec, grid: GridSpec, ghost: str = "boundary") -> np.ndarray:
    """Edge-by-edge ghost padding for any mix of Dirichlet, Neumann and periodic edges.

    Dirichlet nodes of ``u`` are overwritten first and Dirichlet ghosts follow
    the ``ghost`` rule of :func:`ghost_pad`.  Corner ghosts follow that rule
    too if an adjacent edge is Dirichlet, wrap diagonally between two periodic
    edges and otherwise average their two ghost neighbours.
    """
    if ghost not in GHOST_RULES:
        raise ValueError(f"unknown ghost rule {ghost!r}; expected one of {GHOST_RULES}")
    odd = ghost == "reflect"
    u = enforce_dirichlet(u, spec, grid)
    h = grid.spacing
    x = grid.nodes()
    p = np.zeros((grid.dof + 2, grid.dof + 2))
    p[1:-1, 1:-1] = u
    # (ghost index, boundary index, inner index) along the normal
    layout = {"bottom": (0, 0, 1), "top": (-1, -1, -2), "left": (0, 0, 1), "right": (-1, -1, -2)}
    for e, cond in spec.edges():
        g_idx, b_idx, i_idx = layout[e]
        if e in ("bottom", "top"):
            if cond.kind is BCKind.DIRICHLET:
                p[g_idx, 1:-1] = 2.0 * u[b_idx, :] - u[i_idx, :] if odd else u[b_idx, :]
            elif cond.kind is BCKind.NEUMANN:
                p[g_idx, 1:-1] = u[i_idx, :] + 2.0 * h * cond.values(x)
            else:
                p[g_idx, 1:-1] = u[-1 if e == "bottom" else 0, :]
        else:
            if cond.kind is BCKind.DIRICHLET:
                p[1:-1, g_idx] = 2.0 * u[:, b_idx] - u[:, i_idx] if odd else u[:, b_idx]
            elif cond.kind is BCKind.NEUMANN:
                p[1:-1, g_idx] = u[:, i_idx] + 2.0 * h * cond.values(x)
            else:
                p[1:-1, g_idx] = u[:, -1 if e == "left" else 0]

    for r, horiz in ((0, "bottom"), (-1, "top")):
        for c, vert in ((0, "left"), (-1, "right")):
            kh, kv = getattr(spec, horiz).kind, getattr(spec, vert).kind
            if BCKind.DIRICHLET in (kh, kv):
                p[r, c] = 2.0 * u[r, c] - u[1 if r == 0 else -2, 1 if c == 0 else -2] if odd else u[r, c]
            elif kh is BCKind.PERIODIC and kv is BCKind.PERIODIC:
                p[r, c] = u[-1 if r == 0 else 0, -1 if c == 0 else 0]
            else:
                p[r, c] = 0.5 * (p[r, 1 if c == 0 else -2] + p[1 if r == 0 else -2, c])
    return p


def pad_neumann(u: np.ndarray, spec: BoundarySpec, grid: GridSpec) -> np.ndarray:
    if BCKind.NEUMANN not in spec.kinds():
        raise ValueError("pad_neumann requires at least one Neumann edge")
    return pad_field(u, spec, grid)


def spec_from_border(field: np.ndarray, grid: GridSpec) -> BoundarySpec:
    """All-Dirichlet spec reproducing the border nodes of ``field`` exactly.

    Values between nodes are linearly interpolated; only node values are
    ever evaluated by the solvers.
    """
    f = as_field(field, grid)
    x = grid.nodes()

    def interp(line):
        line = line.copy()
        return lambda s: np.interp(s, x, line)

    return BoundarySpec(
        bottom=dirichlet(interp(f[0, :])),
        right=dirichlet(interp(f[:, -1])),
        top=dirichlet(interp(f[-1, :])),
        left=dirichlet(interp(f[:, 0])),
    )
