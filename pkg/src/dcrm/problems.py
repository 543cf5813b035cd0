"""Parametric Poisson problem families and Latin hypercube sampling.

All three cases use ``Laplace(u) = f`` with Dirichlet data on the whole
boundary.  Case 1 is a single fixed problem, case 2 samples the source
parameters ``(alpha, beta, gamma)``, case 3 additionally samples the
boundary amplitude ``eta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .boundary import BoundarySpec, boundary_values, dirichlet
from .fdsolve import fd_solve
from .grid import CaseId, Dataset, GridSpec, NormStats

ALPHA_RANGE = (1.0, 10.0)
BETA_RANGE = (0.0, np.pi / 2)
GAMMA_RANGE = (0.0, np.pi / 2)
ETA_RANGE = (-1.0, 1.0)


@dataclass(frozen=True)
class SourceParams:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name, (lo, hi) in (("alpha", ALPHA_RANGE), ("beta", BETA_RANGE), ("gamma", GAMMA_RANGE)):
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class BoundaryParams:
    eta: float

    def __post_init__(self):
        if abs(self.eta) > 1.0:
            raise ValueError(f"eta={self.eta} outside [-1, 1]")


def source_case1(x, y):
    q = np.pi / 4
    return 20.0 * np.pi**2 * (x**2 + y**2) * np.sin(np.pi * (x + q) * (y + q))


def source_case23(p: SourceParams, x, y):
    return p.alpha * np.pi**2 * (x**2 + y**2) * np.sin(np.pi * (x + p.beta) * (y + p.gamma))


def boundary_case12() -> BoundarySpec:
    """``g = cos(2 pi y)`` on the right edge, ``g = 1`` elsewhere."""
    one = dirichlet(1.0)
    return BoundarySpec(bottom=one, right=dirichlet(lambda y: np.cos(2.0 * np.pi * y)), top=one, left=one)


def boundary_case3(p: BoundaryParams) -> BoundarySpec:
    """``eta cos(z)`` wrapped once around the square, counterclockwise from ``(0, 0)``.

    ``z = 2 pi s / 4`` with ``s`` the arclength: bottom ``s = x``, right
    ``s = 1 + y``, top ``s = 3 - x``, left ``s = 4 - y``.
    """
    eta = float(p.eta)

    def on(offset, sign):
        return lambda t: eta * np.cos(0.5 * np.pi * (offset + sign * np.asarray(t)))

    return BoundarySpec(
        bottom=dirichlet(on(0.0, 1.0)),
        right=dirichlet(on(1.0, 1.0)),
        top=dirichlet(on(3.0, -1.0)),
        left=dirichlet(on(4.0, -1.0)),
    )


def lhs_sample(bounds, n: int, seed: int) -> np.ndarray:
    """``n`` Latin hypercube points in the box ``bounds = [(lo, hi), ...]``."""
    bounds = np.asarray(bounds, dtype=np.float64).reshape(-1, 2)
    if bounds.shape[0] == 0:
        raise ValueError("empty box")
    if n < 1:
        raise ValueError("need at least one sample")
    lo, hi = bounds[:, 0], bounds[:, 1]
    if not (np.all(np.isfinite(bounds)) and np.all(hi > lo)):
        raise ValueError("box bounds must be finite with hi > lo")
    unit = qmc.LatinHypercube(d=bounds.shape[0], seed=np.random.default_rng(seed)).random(n)
    return lo + unit * (hi - lo)


@dataclass(frozen=True)
class CaseDefinition:
    case_id: CaseId
    train_count: int
    test_count: int
    batch_size: int
    param_bounds: tuple

    def source_fn(self, params) -> Callable:
        if self.case_id is CaseId.CASE1:
            return source_case1
        p = SourceParams(*params[:3])
        return lambda x, y: source_case23(p, x, y)

    def boundary_spec_fn(self, params) -> BoundarySpec:
        if self.case_id is CaseId.CASE3:
            return boundary_case3(BoundaryParams(params[3]))
        return boundary_case12()

    def sample_params(self, n: int, seed: int) -> np.ndarray:
        if self.case_id is CaseId.CASE1:
            return np.zeros((n, 0))
        return lhs_sample(self.param_bounds, n, seed)


CASES = {
    CaseId.CASE1: CaseDefinition(CaseId.CASE1, 1, 1, 1, ()),
    CaseId.CASE2: CaseDefinition(CaseId.CASE2, 100, 1000, 2, (ALPHA_RANGE, BETA_RANGE, GAMMA_RANGE)),
    CaseId.CASE3: CaseDefinition(CaseId.CASE3, 250, 1000, 2, (ALPHA_RANGE, BETA_RANGE, GAMMA_RANGE, ETA_RANGE)),
}


def get_case(case_id) -> CaseDefinition:
    return CASES[CaseId(case_id)]


def sample_problems(case: CaseDefinition, grid: GridSpec, n: int, seed: int):
    """Sampled parameters, source fields ``[n, dof, dof]`` and boundary specs."""
    params = case.sample_params(n, seed)
    sources = np.empty((n,) + grid.shape)
    specs = []
    for i in range(n):
        sources[i] = grid.sample(case.source_fn(params[i]))
        specs.append(case.boundary_spec_fn(params[i]))
    return params, sources, specs


def assemble_dataset(
    case: CaseDefinition,
    grid: GridSpec,
    seed: int,
    with_labels: bool,
    n: Optional[int] = None,
    stats: Optional[NormStats] = None,
) -> Dataset:
    """Build input fields (and optionally solver labels) for ``n`` sampled problems.

    ``stats`` should be the training split's statistics when assembling a
    test split; when omitted they are computed from this split.
    """
    n = case.train_count if n is None else n
    if case.case_id is CaseId.CASE1:
        n = 1
    params, sources, specs = sample_problems(case, grid, n, seed)
    inputs = np.empty((n, 2) + grid.shape)
    inputs[:, 0] = sources
    for i, spec in enumerate(specs):
        inputs[:, 1][i] = boundary_values(spec, grid)[0]
    outputs = None
    if with_labels:
        outputs = np.empty((n, 1) + grid.shape)
        for i, spec in enumerate(specs):
            outputs[i, 0] = fd_solve(sources[i], spec, grid)
    if stats is None:
        stats = NormStats.from_batch(inputs).guarded()
    return Dataset(inputs=inputs, outputs=outputs, norm_stats=stats, seed=seed, case_id=case.case_id, params=params)
