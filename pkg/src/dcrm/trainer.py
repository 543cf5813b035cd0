"""ADAM training loop, evaluation and run metrics for the three methods."""

from __future__ import annotations

import csv
import enum
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch

from . import losses
from .boundary import GHOST_RULES, spec_from_border
from .fdsolve import ENERGY_GHOST, ENERGY_QUADRATURE, fd_solve
from .grid import Dataset, NormStats, normalize
from .net import DTYPE, NetworkConfig, UNet, build_network
from .quadrature import QuadratureKind, QuadratureRule

log = logging.getLogger(__name__)


class Method(str, enum.Enum):
    CNN = "cnn"
    CPINN = "cpinn"
    DCRM = "dcrm"


class DivergenceError(RuntimeError):
    def __init__(self, message, metrics=None):
        super().__init__(message)
        self.metrics = metrics


class LabelsRequiredError(ValueError):
    pass


@dataclass
class TrainConfig:
    method: Method = Method.DCRM
    epochs: int = 1000
    batch_size: int = 2
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 50
    quadrature: QuadratureKind = ENERGY_QUADRATURE
    ghost: str = ENERGY_GHOST
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        self.method = Method(self.method)
        self.quadrature = QuadratureKind(self.quadrature)
        if isinstance(self.network, dict):
            self.network = NetworkConfig(**self.network)
        if self.ghost not in GHOST_RULES:
            raise ValueError(f"ghost must be one of {GHOST_RULES}")
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and eval_every >= 1 required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["method"] = self.method.value
        d["quadrature"] = self.quadrature.value
        return d


# ----------------------------------------------------------------------- ADAM


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """Bias-corrected ADAM update applied in place to ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must align")
    for g in grads:
        if not torch.all(torch.isfinite(g)):
            raise DivergenceError("divergence: non-finite gradient")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return state


# -------------------------------------------------------------------- metrics


@dataclass
class MetricRow:
    epoch: int
    train_loss: float
    train_err: float
    test_err: float
    wall_seconds: float


@dataclass
class RunMetrics:
    rows: list = field(default_factory=list)

    def append(self, row: MetricRow):
        if self.rows and row.epoch <= self.rows[-1].epoch:
            raise ValueError("metric epochs must be strictly increasing")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_err", "test_err", "wall_seconds"])
            for r in self.rows:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.train_err), repr(r.test_err), repr(r.wall_seconds)])

    @classmethod
    def read_csv(cls, path) -> "RunMetrics":
        out = cls()
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                out.append(MetricRow(int(rec["epoch"]), float(rec["train_loss"]), float(rec["train_err"]),
                                     float(rec["test_err"]), float(rec["wall_seconds"])))
        return out


# ------------------------------------------------------------------ surrogate


def ground_truth(dataset: Dataset) -> np.ndarray:
    """Solver labels, computed from the boundary image when the dataset carries none."""
    if dataset.has_labels:
        return dataset.outputs
    grid = dataset.grid
    out = np.empty((dataset.n, 1) + grid.shape)
    for i in range(dataset.n):
        spec = spec_from_border(dataset.inputs[i, 1], grid)
        out[i, 0] = fd_solve(dataset.inputs[i, 0], spec, grid)
    return out


class Surrogate:
    """A network plus everything needed to turn raw inputs into enforced fields.

    ``input_stats`` normalise the two input channels.  For ``cnn`` the
    network regresses labels standardised with ``output_stats``; the other
    methods emit the field directly.
    """

    def __init__(
        self,
        model: UNet,
        method: Method,
        input_stats: NormStats,
        output_stats: Optional[NormStats] = None,
        ghost: str = ENERGY_GHOST,
    ):
        self.model = model
        self.ghost = ghost
        self.method = Method(method)
        self.input_stats = input_stats
        self.output_stats = output_stats
        if self.method is Method.CNN and output_stats is None:
            raise LabelsRequiredError("labels required: cnn surrogates need output statistics")

    def network_inputs(self, dataset: Dataset, idx=None) -> torch.Tensor:
        x = dataset.inputs if idx is None else dataset.inputs[idx]
        return torch.as_tensor(normalize(x, self.input_stats), dtype=DTYPE)

    def to_field(self, raw: torch.Tensor) -> torch.Tensor:
        if self.method is Method.CNN:
            return raw * float(self.output_stats.std[0]) + float(self.output_stats.mean[0])
        return raw

    def predict(self, dataset: Dataset, batch: int = 16) -> np.ndarray:
        """Eval-mode, boundary-enforced predictions ``[N, 1, D, D]``."""
        self.model.eval()
        out = []
        with torch.no_grad():
            for s in range(0, dataset.n, batch):
                idx = slice(s, s + batch)
                raw = self.model(self.network_inputs(dataset, idx))
                out.append(losses.enforce_boundary(self.to_field(raw), dataset.inputs[idx, 1:2]).numpy())
        return np.concatenate(out, axis=0)

    def loss(self, dataset: Dataset, idx, rule: QuadratureRule, truth=None) -> losses.LossValue:
        raw = self.model(self.network_inputs(dataset, idx))
        u = self.to_field(raw)
        bvals = dataset.inputs[idx, 1:2]
        source = dataset.inputs[idx, 0:1]
        if self.method is Method.CNN:
            mean, std = float(self.output_stats.mean[0]), float(self.output_stats.std[0])
            pred = (losses.enforce_boundary(u, bvals) - mean) / std
            return losses.supervised_loss(pred, (truth[idx] - mean) / std)
        if self.method is Method.CPINN:
            return losses.cpinn_loss(u, source, bvals)
        return losses.dcrm_energy(u, source, bvals, rule, self.ghost)


def evaluate(surrogate: Surrogate, dataset: Dataset, truth: Optional[np.ndarray] = None):
    """Per-sample normalised error against the solver reference and its mean."""
    if dataset.dof != surrogate.model.config.input_resolution:
        raise ValueError(
            f"dataset resolution {dataset.dof} does not match network resolution "
            f"{surrogate.model.config.input_resolution}"
        )
    if truth is None:
        truth = ground_truth(dataset)
    per = losses.e_abs_normalized(surrogate.predict(dataset), truth)
    return per, float(per.mean())


# ---------------------------------------------------------------------- train


def _full_loss(surrogate: Surrogate, dataset: Dataset, rule, truth, batch: int = 16) -> float:
    surrogate.model.eval()
    total = 0.0
    with torch.no_grad():
        for s in range(0, dataset.n, batch):
            idx = np.arange(s, min(s + batch, dataset.n))
            total += float(surrogate.loss(dataset, idx, rule, truth).per_sample.sum())
    return total / dataset.n


def train(config: TrainConfig, train_set: Dataset, test_set: Optional[Dataset] = None, progress=None):
    """Run ADAM over seeded minibatch shuffles; returns ``(metrics, surrogate)``.

    Metrics are recorded at epoch 0, every ``eval_every`` epochs and after the
    last epoch, always from eval-mode predictions.
    """
    method = config.method
    if method is Method.CNN and not train_set.has_labels:
        raise LabelsRequiredError("labels required: method 'cnn' needs a labelled training set")
    if config.batch_size > train_set.n:
        raise ValueError(f"batch size {config.batch_size} exceeds training set size {train_set.n}")
    test_set = train_set if test_set is None else test_set
    if test_set.dof != train_set.dof:
        raise ValueError("train and test resolutions differ")

    torch.manual_seed(config.seed)
    net_cfg = NetworkConfig(**{**config.network.to_dict(), "input_resolution": train_set.dof, "seed": config.seed})
    model = build_network(net_cfg)
    surrogate = Surrogate(model, method, train_set.norm_stats, train_set.output_stats, config.ghost)
    rule = QuadratureRule.build(config.quadrature, train_set.dof)
    train_truth = ground_truth(train_set)
    test_truth = train_truth if test_set is train_set else ground_truth(test_set)

    params = [p for p in model.parameters() if p.requires_grad]
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(config.seed)
    metrics = RunMetrics()
    start = time.perf_counter()

    def record(epoch):
        tl = _full_loss(surrogate, train_set, rule, train_truth)
        _, tr = evaluate(surrogate, train_set, train_truth)
        _, te = evaluate(surrogate, test_set, test_truth)
        row = MetricRow(epoch, tl, tr, te, time.perf_counter() - start)
        if not all(math.isfinite(v) for v in (tl, tr, te)):
            raise DivergenceError(f"divergence: non-finite metrics at epoch {epoch}", metrics)
        metrics.append(row)
        log.info("epoch %d loss %.6g train_err %.4g test_err %.4g", epoch, tl, tr, te)
        if progress is not None:
            progress(row)

    record(0)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_set.n)
        model.train()
        for s in range(0, train_set.n, config.batch_size):
            idx = np.sort(order[s : s + config.batch_size])
            loss = surrogate.loss(train_set, idx, rule, train_truth).scalar
            if not torch.isfinite(loss):
                raise DivergenceError(f"divergence: non-finite loss at epoch {epoch}", metrics)
            grads = torch.autograd.grad(loss, params)
            try:
                adam_step(params, grads, state, config.learning_rate, (config.beta1, config.beta2), config.eps)
            except DivergenceError as exc:
                exc.metrics = metrics
                raise
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            record(epoch)
    return metrics, surrogate
