"""Images and the sparse nonnegative system operator.

The operator keeps row-major (CSR) storage because every majorant
coefficient rule walks the nonzeros of a row. Forward and adjoint
applications are tallied on the operator itself so that projector-call
accounting covers every code path.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

__all__ = [
    "CallCounter",
    "ImageGrid",
    "SparseNonnegOperator",
    "apply_forward",
    "apply_adjoint",
    "adjoint_check",
]


class CallCounter:
    """Thread-safe tally of forward and adjoint applications."""

    def __init__(self):
        self._lock = threading.Lock()
        self._forward = 0
        self._adjoint = 0

    def add(self, forward: int = 0, adjoint: int = 0) -> None:
        with self._lock:
            self._forward += forward
            self._adjoint += adjoint

    @property
    def forward(self) -> int:
        return self._forward

    @property
    def adjoint(self) -> int:
        return self._adjoint

    def snapshot(self) -> tuple[int, int]:
        with self._lock:
            return self._forward, self._adjoint

    def reset(self) -> None:
        with self._lock:
            self._forward = 0
            self._adjoint = 0

    def __repr__(self):
        return f"CallCounter(forward={self._forward}, adjoint={self._adjoint})"


@dataclass
class ImageGrid:
    """A 2D nonnegative image stored row-major (``height`` rows of ``width``)."""

    width: int
    height: int
    values: np.ndarray
    pixel_size: float = 1.0
    support_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.width * self.height:
            raise ValueError(
                f"values has {self.values.size} entries, expected "
                f"{self.width}x{self.height}={self.width * self.height}"
            )
        if self.support_mask is None:
            self.support_mask = np.ones(self.values.size, dtype=bool)
        else:
            self.support_mask = np.asarray(self.support_mask, dtype=bool).ravel()
            if self.support_mask.size != self.values.size:
                raise ValueError("support_mask does not match image size")
        if np.any(self.values[self.support_mask] < 0):
            raise ValueError("image values must be nonnegative on the support")
        if np.any(self.values[~self.support_mask] != 0):
            raise ValueError("image values must vanish outside the support")

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.height, self.width)


class SparseNonnegOperator:
    """Nonnegative M x N matrix with counted forward/adjoint products.

    Parameters
    ----------
    matrix : array_like or scipy sparse matrix
        Entries of H. Explicit zeros are dropped; negative entries raise.
    row_labels : array_like of int, optional
        Original sinogram position of each stored row, kept when empty rows
        were discarded upstream. Defaults to ``arange(M)``.
    """

    def __init__(self, matrix, row_labels=None):
        csr = sp.csr_matrix(matrix, dtype=float)
        csr.eliminate_zeros()
        csr.sum_duplicates()
        csr.sort_indices()
        if csr.nnz and csr.data.min() < 0:
            raise ValueError("operator entries must be nonnegative")
        self._csr = csr
        self._csrT = csr.T.tocsr()
        self.row_sums = np.asarray(csr.sum(axis=1)).ravel()
        self.col_sums = np.asarray(csr.sum(axis=0)).ravel()
        if np.any(self.row_sums <= 0):
            empty = np.flatnonzero(self.row_sums <= 0)
            raise ValueError(f"operator has empty rows: {empty[:10].tolist()}")
        if row_labels is None:
            row_labels = np.arange(csr.shape[0])
        self.row_labels = np.asarray(row_labels, dtype=np.int64)
        if self.row_labels.size != csr.shape[0]:
            raise ValueError("row_labels must have one entry per row")
        self.counter = CallCounter()

    @property
    def rows(self) -> int:
        return self._csr.shape[0]

    @property
    def cols(self) -> int:
        return self._csr.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._csr.shape

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def csr(self) -> sp.csr_matrix:
        """Read-only view of the stored matrix (uncounted; for setup code)."""
        return self._csr

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Return ``H @ x``. A 2-D ``x`` of shape (N, S) counts as S calls."""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.cols:
            raise ValueError(f"forward expects {self.cols} rows, got {x.shape[0]}")
        self.counter.add(forward=1 if x.ndim == 1 else x.shape[1])
        return self._csr @ x

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        """Return ``H.T @ u``. A 2-D ``u`` of shape (M, S) counts as S calls."""
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.rows:
            raise ValueError(f"adjoint expects {self.rows} rows, got {u.shape[0]}")
        self.counter.add(adjoint=1 if u.ndim == 1 else u.shape[1])
        return self._csrT @ u

    def restrict_columns(self, keep: np.ndarray):
        """Keep the columns flagged in ``keep`` and drop rows left empty.

        Returns the new operator and the indices of the surviving rows.
        """
        keep = np.asarray(keep, dtype=bool)
        sub = self._csr[:, np.flatnonzero(keep)].tocsr()
        sums = np.asarray(sub.sum(axis=1)).ravel()
        kept_rows = np.flatnonzero(sums > 0)
        return SparseNonnegOperator(sub[kept_rows], self.row_labels[kept_rows]), kept_rows

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def __repr__(self):
        return f"SparseNonnegOperator(shape={self.shape}, nnz={self.nnz})"


def apply_forward(op: SparseNonnegOperator, x: np.ndarray) -> np.ndarray:
    return op.forward(x)


def apply_adjoint(op: SparseNonnegOperator, u: np.ndarray) -> np.ndarray:
    return op.adjoint(u)


def adjoint_check(op: SparseNonnegOperator, trials: int = 10, seed: int = 0) -> float:
    """Largest ``|<Hx,u> - <x,H^T u>| / (1 + |<Hx,u>|)`` over random draws."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.cols)
        u = rng.standard_normal(op.rows)
        lhs = float(op.forward(x) @ u)
        rhs = float(x @ op.adjoint(u))
        worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
    return worst
