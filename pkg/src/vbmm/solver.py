"""VBMM iterations for penalized Poisson reconstruction, and ML-EM.

The objective is ``F(x) = KL(y, Hx + b) + R(x)`` over ``x >= eps0``. Each
iteration minimizes ``f(z) + <grad f(z), x - z> + D_{h_z}(x, z) +
M_R/2 ||x - z||^2`` in closed form, where ``h_z`` is the majorant generator
of the Poisson term at ``z`` and ``M_R`` handles the regularizer.

Projector calls are fused: one forward projection at the new iterate feeds
the objective, the gradient, the next coefficients and the residual.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bregman import MajorantKind, MajorantSpec, curvature_c_tau
from .errors import ConfigError, DomainError, SolverError
from .linalg import SparseNonnegOperator
from .poisson import PoissonModel, kl_value
from .regularizer import (GradientOperator, RegularizerParams, reg_gradient, reg_lipschitz,
                          reg_value, reg_value_and_gradient)

__all__ = [
    "SOLVER_MAJORANTS",
    "CALLS_PER_ITERATION",
    "ReconProblem",
    "SolverConfig",
    "IterateHistory",
    "objective",
    "objective_gradient",
    "initial_image",
    "vbmm_step",
    "vbmm_run",
    "residual_w",
    "mlem_run",
    "nrmse",
    "relative_distance",
]

SOLVER_MAJORANTS = (MajorantKind.MAJ1, MajorantKind.MAJ4, MajorantKind.MAJ5,
                    MajorantKind.MAJ6, MajorantKind.MAJ8)

# (forward, adjoint) calls per iteration.
CALLS_PER_ITERATION = {
    MajorantKind.MAJ1: (1, 2),
    MajorantKind.MAJ4: (1, 1),
    MajorantKind.MAJ5: (1, 2),
    MajorantKind.MAJ6: (1, 1),
    MajorantKind.MAJ8: (1, 2),
}

LOG0_EPSILON0 = 0.01


@dataclass
class ReconProblem:
    """Poisson model on the in-mask pixels plus the image-domain regularizer.

    ``mask`` flags the pixels of the full ``gop`` image that are optimized;
    the regularizer acts on the zero-embedded full image.
    """

    model: PoissonModel
    reg: RegularizerParams
    gop: GradientOperator
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mask is None:
            self.mask = np.ones(self.gop.size, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool).ravel()
        if self.mask.size != self.gop.size:
            raise ValueError("mask size does not match the image grid")
        if int(self.mask.sum()) != self.model.n_cols:
            raise ValueError("operator columns must match the number of in-mask pixels")

    @classmethod
    def from_full(cls, op: SparseNonnegOperator, y, b, reg: RegularizerParams,
                  gop: GradientOperator, mask=None) -> "ReconProblem":
        """Restrict a full-image operator to ``mask``, dropping rows left empty."""
        y = np.asarray(y, dtype=float)
        b = np.broadcast_to(np.asarray(b, dtype=float), y.shape)
        if mask is None:
            return cls(PoissonModel(op, y, b), reg, gop, None)
        mask = np.asarray(mask, dtype=bool).ravel()
        sub, rows = op.restrict_columns(mask)
        return cls(PoissonModel(sub, y[rows], b[rows]), reg, gop, mask)

    @property
    def n(self) -> int:
        return self.model.n_cols

    def embed(self, x: np.ndarray) -> np.ndarray:
        full = np.zeros(self.gop.size)
        full[self.mask] = x
        return full

    def restrict(self, image: np.ndarray) -> np.ndarray:
        return np.asarray(image, dtype=float).ravel()[self.mask]

    def reg_value(self, x) -> float:
        return reg_value(self.reg, self.gop, self.embed(x))

    def reg_gradient(self, x) -> np.ndarray:
        return reg_gradient(self.reg, self.gop, self.embed(x))[self.mask]

    def reg_value_and_gradient(self, x):
        value, grad = reg_value_and_gradient(self.reg, self.gop, self.embed(x))
        return value, grad[self.mask]


def objective(problem: ReconProblem, x) -> float:
    return kl_value(problem.model, x) + problem.reg_value(x)


def objective_gradient(problem: ReconProblem, x) -> np.ndarray:
    _, p = _project(problem.model, np.asarray(x, dtype=float))
    m = problem.model
    return m.op.col_sums - m.op.adjoint(m.y / p) + problem.reg_gradient(x)


@dataclass
class SolverConfig:
    """Run parameters. ``M_R`` defaults to ``1.01 * L_R`` and ``epsilon0`` to
    0.01 for the log-0 majorants (Maj5, Maj6) and 0 otherwise.

    ``residual_tol``, when set, adds a stationarity stop:
    ``||w^k|| <= residual_tol * ||w^1||``.
    """

    majorant: MajorantSpec
    reg: RegularizerParams
    M_R: Optional[float] = None
    epsilon0: Optional[float] = None
    max_iters: int = 1000
    step_tol: float = 1e-8
    wall_clock_budget: Optional[float] = None
    residual_tol: Optional[float] = None
    seed: int = 0
    record_wall_time: bool = True

    def __post_init__(self):
        if self.M_R is None:
            self.M_R = 1.01 * reg_lipschitz(self.reg)
        if self.epsilon0 is None:
            self.epsilon0 = LOG0_EPSILON0 if self.majorant.kind.family == "log_0" else 0.0
        self.M_R = float(self.M_R)
        self.epsilon0 = float(self.epsilon0)

    @property
    def gamma(self) -> float:
        return self.M_R - reg_lipschitz(self.reg)

    def validate(self, model: Optional[PoissonModel] = None) -> None:
        kind = self.majorant.kind
        if kind not in SOLVER_MAJORANTS:
            raise ConfigError(f"{kind.label} is not a solver majorant", field="majorant")
        if not self.M_R > reg_lipschitz(self.reg):
            raise ConfigError(f"M_R={self.M_R} must exceed L_R={reg_lipschitz(self.reg)}",
                              field="M_R")
        if kind.family == "log_0" and not self.epsilon0 > 0:
            raise ConfigError("epsilon0 must be > 0 for Maj5/Maj6", field="epsilon0")
        if kind is MajorantKind.MAJ4 and self.majorant.mu == 0 and not self.epsilon0 > 0:
            raise ConfigError("Maj4 with mu = 0 needs epsilon0 > 0", field="epsilon0")
        if self.epsilon0 < 0:
            raise ConfigError("epsilon0 must be >= 0", field="epsilon0")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0", field="max_iters")
        if not self.step_tol >= 0:
            raise ConfigError("step_tol must be >= 0", field="step_tol")
        if self.residual_tol is not None and not self.residual_tol > 0:
            raise ConfigError("residual_tol must be > 0", field="residual_tol")
        if self.wall_clock_budget is not None and not self.wall_clock_budget > 0:
            raise ConfigError("wall_clock_budget must be > 0", field="wall_clock_budget")
        if model is not None:
            try:
                self.majorant.validate(model.rho)
            except ValueError as exc:
                raise ConfigError(str(exc), field="majorant") from None


@dataclass
class IterateHistory:
    """Per-iteration trace. Row 0 describes ``x0``; its step quantities are NaN."""

    iteration: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    step_norm: list = field(default_factory=list)
    residual_w: list = field(default_factory=list)
    slack: list = field(default_factory=list)
    nrmse: list = field(default_factory=list)
    fwd_calls: list = field(default_factory=list)
    adj_calls: list = field(default_factory=list)
    stop_reason: str = ""

    COLUMNS = ("iter", "wall_time_s", "objective_F", "step_norm", "residual_w",
               "suff_decrease_slack", "nrmse", "fwd_calls", "adj_calls")

    def append(self, k, t, F, step, w, slack, err, calls):
        self.iteration.append(int(k))
        self.wall_time.append(float(t))
        self.objective.append(float(F))
        self.step_norm.append(float(step))
        self.residual_w.append(float(w))
        self.slack.append(float(slack))
        self.nrmse.append(float(err))
        self.fwd_calls.append(int(calls[0]))
        self.adj_calls.append(int(calls[1]))

    def __len__(self):
        return len(self.iteration)

    @property
    def n_iters(self) -> int:
        return len(self.iteration) - 1

    def rows(self):
        return list(zip(self.iteration, self.wall_time, self.objective, self.step_norm,
                        self.residual_w, self.slack, self.nrmse, self.fwd_calls,
                        self.adj_calls))

    def as_arrays(self) -> dict:
        return {c: np.asarray(v) for c, v in zip(self.COLUMNS, zip(*self.rows()))} if len(self) \
            else {c: np.asarray([]) for c in self.COLUMNS}


# ---------------------------------------------------------------------------
# Fused evaluation


def _project(model: PoissonModel, x):
    hx = model.op.forward(x)
    p = hx + model.b
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise DomainError("H x + b must be strictly positive")
    return hx, p


@dataclass
class _State:
    x: np.ndarray
    F: float
    grad: np.ndarray
    coeffs: np.ndarray


def _needs_second_backprojection(kind: MajorantKind) -> bool:
    return kind in (MajorantKind.MAJ1, MajorantKind.MAJ5, MajorantKind.MAJ8)


def _evaluate(problem: ReconProblem, cfg: SolverConfig, x: np.ndarray) -> _State:
    """Objective, gradient and majorant coefficients at ``x`` with one
    forward and one or two adjoint calls."""
    m = problem.model
    spec = cfg.majorant
    kind = spec.kind
    hx, p = _project(m, x)
    ratio = m.y / p
    r = m.op.adjoint(ratio)
    r_val, r_grad = problem.reg_value_and_gradient(x)
    F = float(-(m.y @ np.log(p)) + hx.sum()) + r_val
    grad = m.op.col_sums - r + r_grad
    if _needs_second_backprojection(kind):
        a = x * r + m.op.adjoint(ratio * m.zeta_b)
        if kind is MajorantKind.MAJ8:
            a = a * curvature_c_tau(x, m.rho, spec.tau)
    elif kind is MajorantKind.MAJ4:
        a = (x + spec.mu) * r
    else:
        a = x * r
    return _State(x, F, grad, a)


def _shift(problem: ReconProblem, cfg: SolverConfig) -> Optional[float]:
    """Barrier shift of the generator, or None for the quadratic family."""
    kind = cfg.majorant.kind
    if kind is MajorantKind.MAJ1:
        return problem.model.rho
    if kind is MajorantKind.MAJ4:
        return cfg.majorant.mu
    if kind.family == "log_0":
        return 0.0
    return None


def _update(state: _State, shift: Optional[float], M: float, eps0: float) -> np.ndarray:
    z, a, g = state.x, state.coeffs, state.grad
    if shift is None:
        u = z - g / (a + M)
    else:
        # Positive root of M v^2 + (d - M s) v - a = 0 with v = u + s, written
        # to avoid cancellation when d + M s > 0.
        d = g + a / (z + shift) - M * z
        B = d + M * shift
        root = np.sqrt((d - M * shift) ** 2 + 4.0 * M * a)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(B > 0, 2.0 * (a - shift * d) / (B + root), (root - B) / (2.0 * M))
    if not np.all(np.isfinite(u)):
        raise SolverError("non-finite update")
    return np.maximum(u, eps0)


def _generator_gradient_change(state: _State, shift: Optional[float], x_next) -> np.ndarray:
    """``grad h_z(x_next) - grad h_z(z)`` for the Poisson-term generator at ``z``."""
    z, a = state.x, state.coeffs
    if shift is None:
        return a * (x_next - z)
    return a * (x_next - z) / ((x_next + shift) * (z + shift))


def _check_start(problem: ReconProblem, cfg: SolverConfig, z):
    z = np.asarray(z, dtype=float)
    if z.shape != (problem.n,):
        raise ValueError(f"iterate must have length {problem.n}")
    if np.any(z < cfg.epsilon0):
        raise DomainError(f"iterate below the box bound epsilon0={cfg.epsilon0}")
    shift = _shift(problem, cfg)
    if shift is not None and shift == 0.0 and np.any(z <= 0):
        raise DomainError("log-0 majorants need a strictly positive iterate")
    return z


def vbmm_step(problem: ReconProblem, config: SolverConfig, z) -> np.ndarray:
    """One majorize-minimize update from ``z`` (unfused convenience form)."""
    config.validate(problem.model)
    z = _check_start(problem, config, z)
    state = _evaluate(problem, config, z)
    return _update(state, _shift(problem, config), config.M_R, config.epsilon0)


def residual_w(problem: ReconProblem, config: SolverConfig, x_prev, x_next) -> float:
    """``||grad f(x_next) - grad_x Q_f(x_next, x_prev)||``."""
    x_prev = np.asarray(x_prev, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    s0 = _evaluate(problem, config, x_prev)
    g1 = objective_gradient(problem, x_next)
    shift = _shift(problem, config)
    w = g1 - s0.grad - _generator_gradient_change(s0, shift, x_next) - config.M_R * (x_next - x_prev)
    return float(np.linalg.norm(w))


def initial_image(model: PoissonModel, epsilon0: float = 0.0) -> np.ndarray:
    """Uniform image whose projection matches the excess counts on average."""
    excess = float(np.clip(model.y - model.b, 0.0, None).sum())
    c = excess / float(model.op.col_sums.sum())
    return np.full(model.n_cols, max(c, epsilon0, 1e-3))


def vbmm_run(problem: ReconProblem, config: SolverConfig, x0=None,
             reference: Optional[np.ndarray] = None,
             callback: Optional[Callable[[int, np.ndarray], None]] = None):
    """Iterate until the relative step drops below ``step_tol``, ``max_iters``
    is reached or the wall budget runs out.

    ``reference`` (in-mask values) enables the NRMSE column. ``callback(k, x)``
    is called for every iterate including ``x0``.

    Returns
    -------
    x : ndarray
        Final iterate (in-mask pixels).
    history : IterateHistory
    """
    config.validate(problem.model)
    if x0 is None:
        x0 = initial_image(problem.model, config.epsilon0)
    x = _check_start(problem, config, x0)
    counter = problem.model.op.counter
    base = counter.snapshot()
    gamma = config.gamma
    shift = _shift(problem, config)
    M = config.M_R
    clock = time.perf_counter
    t0 = clock()

    def calls():
        f, a = counter.snapshot()
        return f - base[0], a - base[1]

    def elapsed():
        return clock() - t0 if config.record_wall_time else math.nan

    def err(v):
        return nrmse(v, reference) if reference is not None else math.nan

    hist = IterateHistory()
    state = _evaluate(problem, config, x)
    hist.append(0, elapsed(), state.F, math.nan, math.nan, math.nan, err(x), calls())
    if callback is not None:
        callback(0, x)
    hist.stop_reason = "max_iters"
    for k in range(1, config.max_iters + 1):
        try:
            x_next = _update(state, shift, M, config.epsilon0)
            nxt = _evaluate(problem, config, x_next)
        except (DomainError, SolverError, FloatingPointError) as exc:
            raise SolverError(str(exc), iteration=k) from exc
        dx = x_next - state.x
        step = float(np.linalg.norm(dx))
        w = nxt.grad - state.grad - _generator_gradient_change(state, shift, x_next) - M * dx
        slack = state.F - nxt.F - 0.5 * gamma * step**2
        if not math.isfinite(nxt.F):
            raise SolverError("non-finite objective", iteration=k)
        rel_step = step / (1.0 + float(np.linalg.norm(state.x)))
        w_norm = float(np.linalg.norm(w))
        if k == 1:
            w_first = w_norm
        state = nxt
        hist.append(k, elapsed(), state.F, step, w_norm, slack, err(state.x), calls())
        if callback is not None:
            callback(k, state.x)
        if rel_step < config.step_tol:
            hist.stop_reason = "step_tol"
            break
        if config.residual_tol is not None and w_norm <= config.residual_tol * w_first:
            hist.stop_reason = "residual_tol"
            break
        if config.wall_clock_budget is not None and clock() - t0 >= config.wall_clock_budget:
            hist.stop_reason = "wall_budget"
            break
    return state.x, hist


def mlem_run(model: PoissonModel, x0, iters: int,
             callback: Optional[Callable[[int, np.ndarray], None]] = None):
    """Classical ML-EM; returns the final image and the list of ``KL`` values
    (``iters + 1`` entries, starting with ``x0``)."""
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (model.n_cols,):
        raise ValueError(f"x0 must have length {model.n_cols}")
    if np.any(x <= 0):
        raise DomainError("ML-EM needs a strictly positive starting image")
    sens = model.op.col_sums
    values = []
    for k in range(iters + 1):
        hx, p = _project(model, x)
        values.append(float(-(model.y @ np.log(p)) + hx.sum()))
        if callback is not None:
            callback(k, x)
        if k == iters:
            break
        x = x / sens * model.op.adjoint(model.y / p)
    return x, values


def nrmse(x, reference) -> float:
    """``||x - ref|| / ||ref||``."""
    reference = np.asarray(reference, dtype=float)
    denom = float(np.linalg.norm(reference))
    if denom == 0:
        raise ValueError("reference image is zero")
    return float(np.linalg.norm(np.asarray(x, dtype=float) - reference)) / denom


def relative_distance(x, x_limit) -> float:
    return nrmse(x, x_limit)
