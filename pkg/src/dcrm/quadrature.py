"""Composite Simpson and trapezoid weights on the node grid of ``[0, 1]``."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class QuadratureKind(str, enum.Enum):
    SIMPSON = "simpson"
    TRAPEZOID = "trapezoid"


def _simpson_pattern(n: int) -> np.ndarray:
    if n < 3 or n % 2 == 0:
        raise ValueError(f"Simpson requires odd point count >= 3, got {n}")
    p = np.full(n, 2.0)
    p[1::2] = 4.0
    p[0] = p[-1] = 1.0
    return p


def simpson_weights_1d(n: int, length: float = 1.0) -> np.ndarray:
    """``length / (3 (n - 1)) * [1, 4, 2, 4, ..., 2, 4, 1]``."""
    return _simpson_pattern(n) * (length / (3.0 * (n - 1)))


def simpson_weights_2d(dof: int) -> np.ndarray:
    p = _simpson_pattern(dof)
    return np.outer(p, p) / (9.0 * (dof - 1) ** 2)


def trapezoid_weights_1d(n: int, length: float = 1.0) -> np.ndarray:
    if n < 2:
        raise ValueError(f"trapezoid needs at least 2 points, got {n}")
    p = np.full(n, 2.0)
    p[0] = p[-1] = 1.0
    return p * (length / (2.0 * (n - 1)))


def trapezoid_weights_2d(dof: int) -> np.ndarray:
    w = trapezoid_weights_1d(dof)
    return np.outer(w, w)


@dataclass(frozen=True)
class QuadratureRule:
    kind: QuadratureKind
    weights_2d: np.ndarray
    weights_1d: np.ndarray

    @classmethod
    def build(cls, kind, dof: int) -> "QuadratureRule":
        kind = QuadratureKind(kind)
        if kind is QuadratureKind.SIMPSON:
            return cls(kind, simpson_weights_2d(dof), simpson_weights_1d(dof))
        return cls(kind, trapezoid_weights_2d(dof), trapezoid_weights_1d(dof))

    @property
    def dof(self) -> int:
        return self.weights_2d.shape[0]


def integrate_2d(rule: QuadratureRule, field: np.ndarray) -> float:
    field = np.asarray(field, dtype=np.float64)
    if field.shape != rule.weights_2d.shape:
        raise ValueError(f"field shape {field.shape} does not match rule {rule.weights_2d.shape}")
    return float(np.sum(rule.weights_2d * field))


def integrate_boundary(rule: QuadratureRule, edge_values: np.ndarray) -> float:
    edge_values = np.asarray(edge_values, dtype=np.float64)
    if edge_values.shape != rule.weights_1d.shape:
        raise ValueError(f"edge shape {edge_values.shape} does not match rule {rule.weights_1d.shape}")
    return float(np.dot(rule.weights_1d, edge_values))
