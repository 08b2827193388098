"""Numerical property suite: adjointness, gradients, curvature, majorization
and the tightness order between majorant generators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .bregman import (
    ORDER_RELATIONS,
    MajorantKind,
    MajorantSpec,
    curvature_c_tau,
    domain_lower_bound,
    ell_majorization_check,
    make_generator,
    order_check,
)
from .linalg import SparseNonnegOperator, adjoint_check
from .poisson import PoissonModel, kl_gradient, kl_value
from .regularizer import GradientOperator, RegularizerParams, reg_gradient, reg_value
from .simulator import ScanGeometry, build_projector, make_rng, poisson_sample

__all__ = [
    "random_model",
    "c_tau_quadrature",
    "c_tau_grid",
    "finite_difference_gradient",
    "gradient_error",
    "order_relation_min",
    "CheckEntry",
    "CheckReport",
    "run_check_suite",
    "MAJORIZATION_TOL",
    "ORDER_TOL",
]

MAJORIZATION_TOL = 1e-8
TANGENCY_TOL = 1e-12
ORDER_TOL = 1e-9
SAMPLING_MARGIN = 1e-3
SAMPLING_UPPER = 10.0


def random_model(rows: int, cols: int, seed: int = 0, density: float = 0.6,
                 equal_shift: bool = False) -> PoissonModel:
    """Random Poisson model whose rows and columns are all nonempty.

    With ``equal_shift`` the background is ``b_m = 0.3 * row_sum_m`` so that
    every ``zeta_m b_m`` equals ``rho``.
    """
    rng = make_rng(seed)
    h = rng.random((rows, cols)) * (rng.random((rows, cols)) < density)
    for m in range(rows):
        h[m, m % cols] = max(h[m, m % cols], 0.5)
    for n in range(cols):
        h[n % rows, n] = max(h[n % rows, n], 0.5)
    op = SparseNonnegOperator(h)
    x = rng.uniform(0.5, 2.0, cols)
    if equal_shift:
        b = 0.3 * op.row_sums
    else:
        b = rng.uniform(0.5, 1.5, rows)
    y = poisson_sample(h @ x + b, rng)
    return PoissonModel(op, y.astype(float), b)


def c_tau_quadrature(xi: float, eta: float, tau: float) -> float:
    """``2 int_0^1 u / (eta - tau + u (xi + tau))^2 du`` by adaptive quadrature."""
    e = eta - tau
    s = xi + tau
    pts = [e / s] if s > 0 and e / s < 1 else None
    val, _ = integrate.quad(lambda u: u / (e + u * s) ** 2, 0.0, 1.0, points=pts,
                            epsabs=0.0, epsrel=1e-13, limit=500)
    return 2.0 * val


def c_tau_grid():
    """(xi, eta, tau) triples on a 50 x 20 x 5 grid; the smallest offsets put
    ``xi`` within 1e-7 of ``-tau`` (series branch)."""
    taus = np.array([0.01, 0.05, 0.1, 0.5, 1.0])
    out = []
    for tau in taus:
        offsets = np.concatenate([[0.0], np.logspace(-9, np.log10(10.0 + tau), 49)])
        xis = -tau + offsets
        etas = tau * (1.0 + np.logspace(0, 3, 20))
        for eta in etas:
            for xi in xis:
                out.append((float(xi), float(eta), float(tau)))
    return out


def finite_difference_gradient(f, x, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences with step ``rel_step * (1 + |x_n|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for n in range(x.size):
        h = rel_step * (1.0 + abs(x[n]))
        xp = x.copy()
        xm = x.copy()
        xp[n] += h
        xm[n] -= h
        g[n] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def gradient_error(g, g_fd) -> float:
    return float(np.linalg.norm(g - g_fd) / max(np.linalg.norm(g_fd), 1e-300))


def order_relation_min(a: MajorantKind, b: MajorantKind, model: PoissonModel,
                       samples: int = 10_000, seed: int = 0, anchored: bool = True,
                       mu_fraction: float = 1.0, tau_fraction: float = 0.5) -> float:
    """Sampled ``min (D_b - D_a)`` on a box inside both generators' domains."""
    sa = MajorantSpec.default(a, model.rho, mu_fraction, tau_fraction)
    sb = MajorantSpec.default(b, model.rho, mu_fraction, tau_fraction)
    lower = max(domain_lower_bound(sa, model), domain_lower_bound(sb, model)) + SAMPLING_MARGIN
    return order_check(lambda z: make_generator(sa, model, z),
                       lambda z: make_generator(sb, model, z),
                       (lower, SAMPLING_UPPER), samples, seed, n=model.n_cols,
                       anchored=anchored)


@dataclass
class CheckEntry:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def as_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "value": float(self.value),
                "threshold": float(self.threshold), "detail": self.detail}


@dataclass
class CheckReport:
    entries: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def add(self, name, value, threshold, ok, detail=""):
        self.entries.append(CheckEntry(name, bool(ok), float(value), float(threshold), detail))

    def as_dict(self):
        return {"passed": self.passed, "checks": [e.as_dict() for e in self.entries]}


def run_check_suite(samples: int = 10_000, seed: int = 0, rows: int = 12, cols: int = 16,
                    fault_scale: Optional[float] = None,
                    geometry: Optional[ScanGeometry] = None, image_shape=(16, 16)) -> CheckReport:
    """Run every property check and collect measured values.

    ``fault_scale`` multiplies the Maj1 coefficients inside its majorization
    check, which must then fail for scales well below 1.
    """
    rep = CheckReport()
    model = random_model(rows, cols, seed)
    shift_model = random_model(rows, cols, seed + 1, equal_shift=True)
    rng = make_rng(seed + 2)

    geometry = geometry or ScanGeometry(12)
    proj = build_projector(geometry, image_shape[1], image_shape[0])
    for name, op in (("adjoint projector", proj), ("adjoint random model", model.op)):
        err = adjoint_check(op, trials=20, seed=seed)
        rep.add(name, err, 1e-12, err <= 1e-12)

    worst = 0.0
    for _ in range(20):
        x = rng.uniform(0.5, 3.0, cols)
        g = kl_gradient(model, x)
        fd = finite_difference_gradient(lambda v: kl_value(model, v), x)
        worst = max(worst, gradient_error(g, fd))
    rep.add("kl_gradient finite differences", worst, 1e-5, worst <= 1e-5)

    params = RegularizerParams(1.0, 0.7, 0.01)
    gop = GradientOperator(8, 8)
    worst = 0.0
    for _ in range(20):
        x = rng.normal(0.0, 1.0, gop.size)
        g = reg_gradient(params, gop, x)
        fd = finite_difference_gradient(lambda v: reg_value(params, gop, v), x)
        worst = max(worst, gradient_error(g, fd))
    rep.add("reg_gradient finite differences", worst, 1e-5, worst <= 1e-5)

    grid = c_tau_grid()
    worst = max(abs(curvature_c_tau(*p) - c_tau_quadrature(*p)) / c_tau_quadrature(*p)
                for p in grid)
    rep.add("curvature closed form vs quadrature", worst, 1e-8, worst <= 1e-8,
            f"{len(grid)} grid points")

    for kind in MajorantKind:
        spec = MajorantSpec.default(kind, model.rho)
        scale = fault_scale if (fault_scale is not None and kind is MajorantKind.MAJ1) else 1.0
        r = ell_majorization_check(model, spec, samples, seed, upper=SAMPLING_UPPER,
                                   margin=SAMPLING_MARGIN, coeff_scale=scale)
        ok = r.passed(MAJORIZATION_TOL, TANGENCY_TOL)
        detail = f"tangency error {r.tangency_error:.3e}"
        if scale != 1.0:
            detail += f"; coefficients scaled by {scale}"
        rep.add(f"majorization {kind.label}", r.min_scaled_gap, -MAJORIZATION_TOL, ok, detail)

    for a, b, needs_equal in ORDER_RELATIONS:
        m = shift_model if needs_equal else model
        v = order_relation_min(a, b, m, samples, seed)
        rep.add(f"order {a.label} <= {b.label}", v, -ORDER_TOL, v >= -ORDER_TOL,
                "zeta_m b_m = rho for all m" if needs_equal else "")
    return rep
