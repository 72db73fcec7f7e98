"""Multivariate Hermite bases, least-squares projections and greedy column
selection.

Basis functions are products of probabilists' Hermite polynomials He_n
evaluated at standardized variables, one per exponent vector with total
degree at most ``total_degree``.  Columns are ordered by total degree, so the
constant comes first.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations_with_replacement
from math import comb

import numpy as np
from numpy.polynomial.hermite_e import hermevander


class ProjectionError(RuntimeError):
    pass


def multi_indices(n_vars: int, total_degree: int) -> list[tuple[int, ...]]:
    out = []
    for deg in range(total_degree + 1):
        for combo in combinations_with_replacement(range(n_vars), deg):
            e = [0] * n_vars
            for j in combo:
                e[j] += 1
            out.append(tuple(e))
    return out


def basis_size(n_vars: int, total_degree: int) -> int:
    return comb(n_vars + total_degree, total_degree)


@dataclass(frozen=True)
class FeatureSpec:
    variable_names: tuple[str, ...]
    total_degree: int
    standardization: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.total_degree < 0:
            raise ValueError("total_degree must be nonnegative")
        if len(self.standardization) != len(self.variable_names):
            raise ValueError("one (mean, sd) pair per variable is required")
        for name, (_, sd) in zip(self.variable_names, self.standardization):
            if not sd > 0:
                raise ValueError(f"variable {name!r} has zero variance")

    @classmethod
    def fit(cls, variable_names, total_degree: int, data) -> "FeatureSpec":
        """Standardize each column by its own sample mean and sd."""
        data = np.asarray(data, dtype=float).reshape(len(data), -1)
        means = data.mean(axis=0)
        sds = data.std(axis=0)
        for name, sd in zip(variable_names, sds):
            if not sd > 0:
                raise ValueError(f"variable {name!r} has zero variance")
        return cls(tuple(variable_names), int(total_degree),
                   tuple(zip(means.tolist(), sds.tolist())))

    @property
    def exponents(self) -> list[tuple[int, ...]]:
        return multi_indices(len(self.variable_names), self.total_degree)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    values: np.ndarray
    labels: tuple[tuple[int, ...], ...]
    selected: tuple[int, ...]
    spec: FeatureSpec | None = None

    @property
    def columns(self) -> np.ndarray:
        return self.values[:, list(self.selected)]

    @cached_property
    def _q(self) -> np.ndarray:
        Q, R = np.linalg.qr(self.columns)
        if not np.all(np.isfinite(R)) or np.any(np.abs(np.diag(R)) == 0):
            raise ProjectionError("orthogonal decomposition of the design failed")
        return Q

    def with_selection(self, tol=None) -> "DesignMatrix":
        return DesignMatrix(self.values, self.labels,
                            tuple(greedy_rank_select(self.values, tol)), self.spec)


def hermite_basis(spec: FeatureSpec, data, select: bool = True) -> DesignMatrix:
    data = np.asarray(data, dtype=float).reshape(len(data), -1)
    if data.shape[1] != len(spec.variable_names):
        raise ValueError(f"expected {len(spec.variable_names)} columns, got {data.shape[1]}")
    d = spec.total_degree
    uni = []
    for j, (mean, sd) in enumerate(spec.standardization):
        uni.append(hermevander((data[:, j] - mean) / sd, d))
    labels = spec.exponents
    values = np.ones((data.shape[0], len(labels)))
    for c, e in enumerate(labels):
        for j, power in enumerate(e):
            if power:
                values[:, c] *= uni[j][:, power]
    selected = greedy_rank_select(values) if select else range(len(labels))
    return DesignMatrix(values, tuple(labels), tuple(selected), spec)


def rank_tolerance(sv_max: float, shape) -> float:
    return max(shape) * np.finfo(float).eps * sv_max


def greedy_rank_select(matrix, tol: float | None = None) -> list[int]:
    """Scan columns left to right, keeping a column iff it raises the numerical rank.

    Rank is counted from singular values above ``tol``, by default
    ``max(rows, cols) * eps * largest singular value`` of the whole matrix.
    Singular values are computed from the triangular factor of a QR
    decomposition, which has the same column geometry as the matrix.
    """
    A = matrix.values if isinstance(matrix, DesignMatrix) else np.asarray(matrix, dtype=float)
    n, p = A.shape
    R = np.linalg.qr(A, mode="r") if n > p else A
    if tol is None:
        tol = rank_tolerance(np.linalg.norm(R, 2), A.shape)
    selected: list[int] = []
    for j in range(p):
        cand = selected + [j]
        sv = np.linalg.svd(R[:, cand], compute_uv=False)
        if np.sum(sv > tol) == len(cand):
            selected.append(j)
    return selected


def project(basis: DesignMatrix, target):
    """Least-squares fitted values of ``target`` on the selected columns."""
    target = np.asarray(target, dtype=float)
    if target.shape[0] != basis.values.shape[0]:
        raise ValueError("basis and target have different row counts")
    Q = basis._q
    fitted = Q @ (Q.T @ target)
    if not np.all(np.isfinite(fitted)):
        raise ProjectionError("projection produced non-finite values")
    return fitted


def residualize(basis: DesignMatrix, target):
    return np.asarray(target, dtype=float) - project(basis, target)
