"""Weights matrices encoding the candidate network channels.

A :class:`WeightsMatrix` is a dense ``n x n`` zero-diagonal matrix and a
:class:`WeightsSet` is the ordered collection ``W_1, ..., W_Q`` entering the
spatial filter ``S(rho) = I - sum_q rho_q W_q``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DiagnosticWarning,
    InvalidArgumentError,
    InvariantViolationError,
    NumericDegenerateError,
)

DEFAULT_TAU = 0.01
ROW_SUM_TOL = 1e-12


def _frozen(values):
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class WeightsMatrix:
    values: np.ndarray
    label: str = "W"
    row_normalized: bool = False

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise InvalidArgumentError(f"{self.label}: weights matrix must be square, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvariantViolationError(f"{self.label}: weights matrix has non-finite entries")
        object.__setattr__(self, "values", values)
        if self.row_normalized:
            sums = values.sum(axis=1)
            linked = np.any(values != 0, axis=1)
            if np.any(np.abs(sums[linked] - 1.0) > ROW_SUM_TOL):
                raise InvariantViolationError(f"{self.label}: flagged row-normalized but rows do not sum to 1")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, WeightsMatrix):
            return NotImplemented
        return (
            self.label == other.label
            and self.row_normalized == other.row_normalized
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class WeightsSet:
    matrices: tuple[WeightsMatrix, ...]
    stack: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mats = tuple(self.matrices)
        object.__setattr__(self, "matrices", mats)
        if mats:
            sizes = {m.n for m in mats}
            if len(sizes) != 1:
                raise InvalidArgumentError(f"weights matrices have differing sizes {sorted(sizes)}")
            labels = [m.label for m in mats]
            if len(set(labels)) != len(labels):
                raise InvalidArgumentError(f"weights labels must be unique, got {labels}")
            stack = np.stack([m.values for m in mats])
        else:
            stack = np.zeros((0, 0, 0))
        stack.setflags(write=False)
        object.__setattr__(self, "stack", stack)

    @classmethod
    def empty(cls, n: int) -> "WeightsSet":
        ws = cls(())
        object.__setattr__(ws, "stack", np.zeros((0, n, n)))
        object.__setattr__(ws, "_n", n)
        return ws

    @property
    def n(self) -> int:
        if self.matrices:
            return self.matrices[0].n
        return getattr(self, "_n", 0)

    @property
    def Q(self) -> int:
        return len(self.matrices)

    @property
    def labels(self) -> list[str]:
        return [m.label for m in self.matrices]

    @property
    def max_row_sum(self) -> float:
        if not self.matrices:
            return 0.0
        return float(np.abs(self.stack).sum(axis=2).max())

    @property
    def max_col_sum(self) -> float:
        if not self.matrices:
            return 0.0
        return float(np.abs(self.stack).sum(axis=1).max())

    def rho_bound(self, tau: float = DEFAULT_TAU) -> float:
        """Radius of the compact admissible region ``sum |rho_q| <= bound``."""
        norm = self.max_row_sum
        return np.inf if norm == 0 else (1.0 - tau) / norm

    def __len__(self):
        return self.Q

    def __getitem__(self, q):
        return self.matrices[q]

    def __eq__(self, other):
        if not isinstance(other, WeightsSet):
            return NotImplemented
        return self.n == other.n and self.matrices == other.matrices


@dataclass(frozen=True)
class DiagnosticsReport:
    labels: tuple[str, ...]
    row_sums: tuple[float, ...]
    col_sums: tuple[float, ...]
    diagonal_zero: bool
    rho_bound: float
    zero_rows: tuple[int, ...]
    messages: tuple[str, ...] = ()


def row_normalize(W: WeightsMatrix) -> WeightsMatrix:
    """Divide every linked row by its sum; all-zero rows stay zero."""
    values = np.array(W.values, dtype=float)
    sums = values.sum(axis=1)
    linked = np.any(values != 0, axis=1)
    scale = np.abs(values).sum(axis=1)
    bad = linked & (np.abs(sums) <= 1e-14 * np.maximum(scale, 1.0))
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise NumericDegenerateError(f"{W.label}: row {row} has nonzero entries summing to zero")
    out = values.copy()
    out[linked] = values[linked] / sums[linked, None]
    # exact ones for rows that were already normalized keeps the map idempotent
    already = linked & (sums == 1.0)
    out[already] = values[already]
    return WeightsMatrix(out, label=W.label, row_normalized=True)


def build_path_neighbors(n: int, degree: int, normalize: bool = True, label: str | None = None) -> WeightsMatrix:
    """Units on a line, linked when exactly ``degree`` positions apart."""
    if n < 2 or not 1 <= degree <= n - 1:
        raise InvalidArgumentError(f"degree must lie in [1, n-1]; got degree={degree}, n={n}")
    values = np.zeros((n, n))
    idx = np.arange(n - degree)
    values[idx, idx + degree] = 1.0
    values[idx + degree, idx] = 1.0
    W = WeightsMatrix(values, label=label or f"W{degree}")
    return row_normalize(W) if normalize else W


def build_group_blocks(labels: Sequence, label: str = "W_group") -> WeightsMatrix:
    """Link units sharing a group label, then row-normalize."""
    labels = list(labels)
    if not labels:
        raise InvalidArgumentError("group labels must be nonempty")
    arr = np.asarray(labels, dtype=object)
    values = (arr[:, None] == arr[None, :]).astype(float)
    np.fill_diagonal(values, 0.0)
    if not values.any():
        warnings.warn(f"{label}: no two units share a group; matrix is zero", DiagnosticWarning, stacklevel=2)
    return row_normalize(WeightsMatrix(values, label=label))


def validate_weights(wset: WeightsSet, tau: float = DEFAULT_TAU) -> DiagnosticsReport:
    messages = []
    zero_rows = set()
    for W in wset.matrices:
        d = np.diag(W.values)
        if np.any(d != 0):
            i = int(np.flatnonzero(d)[0])
            raise InvariantViolationError(f"{W.label}: nonzero diagonal entry at ({i + 1},{i + 1})")
        rows = np.flatnonzero(~np.any(W.values != 0, axis=1))
        if rows.size:
            zero_rows.update(int(r) for r in rows)
            messages.append(f"{W.label}: {rows.size} isolated unit(s) with zero rows")
    for msg in messages:
        warnings.warn(msg, DiagnosticWarning, stacklevel=2)
    stack = np.abs(wset.stack)
    return DiagnosticsReport(
        labels=tuple(wset.labels),
        row_sums=tuple(float(x) for x in stack.sum(axis=2).max(axis=1)) if wset.Q else (),
        col_sums=tuple(float(x) for x in stack.sum(axis=1).max(axis=1)) if wset.Q else (),
        diagonal_zero=True,
        rho_bound=float(wset.rho_bound(tau)),
        zero_rows=tuple(sorted(zero_rows)),
        messages=tuple(messages),
    )
