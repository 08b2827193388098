"""Poisson negative log-likelihood (Kullback-Leibler data fidelity)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .linalg import SparseNonnegOperator

__all__ = [
    "PoissonModel",
    "kl_value",
    "kl_gradient",
    "kl_lipschitz",
    "ell_value",
    "ell_gradient",
    "ell_hessian",
    "operator_norm_sq",
]


@dataclass
class PoissonModel:
    """System operator, counts and background, with derived shifts.

    ``zeta[m] = 1 / row_sum[m]`` and ``rho = min_m zeta[m] * b[m]`` is the
    barrier shift of the log-shift majorants.
    """

    op: SparseNonnegOperator
    y: np.ndarray
    b: np.ndarray
    zeta: np.ndarray = field(init=False)
    zeta_b: np.ndarray = field(init=False)
    rho: float = field(init=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.y.shape != (self.op.rows,) or self.b.shape != (self.op.rows,):
            raise ValueError("y and b must have one entry per operator row")
        if np.any(self.y < 0) or np.any(self.y != np.round(self.y)):
            raise ValueError("counts y must be nonnegative integers")
        if np.any(self.b <= 0):
            raise ValueError("background b must be strictly positive")
        self.zeta = 1.0 / self.op.row_sums
        self.zeta_b = self.zeta * self.b
        self.rho = float(self.zeta_b.min())

    @property
    def n_rows(self) -> int:
        return self.op.rows

    @property
    def n_cols(self) -> int:
        return self.op.cols


def _predicted(model: PoissonModel, x: np.ndarray):
    hx = model.op.forward(x)
    p = hx + (model.b if hx.ndim == 1 else model.b[:, None])
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise DomainError("H x + b must be strictly positive")
    return hx, p


def kl_value(model: PoissonModel, x: np.ndarray) -> float:
    """``-sum_m (y_m ln(H_m x + b_m) - H_m x)``."""
    hx, p = _predicted(model, np.asarray(x, dtype=float))
    return float(-(model.y @ np.log(p)) + hx.sum())


def kl_gradient(model: PoissonModel, x: np.ndarray) -> np.ndarray:
    """``H^T (1 - y / (H x + b))``; one forward and one adjoint call."""
    _, p = _predicted(model, np.asarray(x, dtype=float))
    return model.op.adjoint(1.0 - model.y / p)


def ell_value(model: PoissonModel, x: np.ndarray):
    """Log part ``-sum_m y_m ln(H_m x + b_m)``; columns of a 2-D x are points."""
    _, p = _predicted(model, np.asarray(x, dtype=float))
    if p.ndim == 1:
        return float(-(model.y @ np.log(p)))
    return -(model.y @ np.log(p))


def ell_gradient(model: PoissonModel, x: np.ndarray) -> np.ndarray:
    _, p = _predicted(model, np.asarray(x, dtype=float))
    w = model.y / p if p.ndim == 1 else model.y[:, None] / p
    return -model.op.adjoint(w)


def ell_hessian(model: PoissonModel, x: np.ndarray) -> np.ndarray:
    """Dense ``H^T diag(y / p^2) H`` (same for the full KL term). Small N only."""
    _, p = _predicted(model, np.asarray(x, dtype=float))
    h = model.op.toarray()
    return h.T @ ((model.y / p**2)[:, None] * h)


def operator_norm_sq(op: SparseNonnegOperator, max_iter: int = 200, tol: float = 1e-6,
                     seed: int = 0) -> float:
    """Largest eigenvalue of ``H^T H`` by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.random(op.cols) + 0.5
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = op.adjoint(op.forward(v))
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return est


def kl_lipschitz(model: PoissonModel) -> float:
    """``||H||^2 max_m y_m / b_m^2``, valid on the nonnegative orthant."""
    ratio = float(np.max(model.y / model.b**2))
    if ratio == 0.0:
        return 0.0
    return operator_norm_sq(model.op) * ratio
