"""Bregman generators and separable tangent majorants of the Poisson log term.

The function majorized here is ``ell(x) = -sum_m y_m ln(H_m x + b_m)``; the
full KL fidelity differs from it by a linear term, so both share the same
generators. Nine coefficient rules are provided (``coeff_maj1`` ...
``coeff_maj9``) along with the generator each one belongs to.

Array convention: a point is a 1-D vector of length N; a batch of S points
is an (S, N) array. Coefficient functions and generators accept both.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import DomainError
from .poisson import PoissonModel, ell_gradient, ell_value

__all__ = [
    "MajorantKind",
    "MajorantSpec",
    "SeparableLegendre",
    "PiecewiseLogQuadratic",
    "bregman_distance",
    "coeff_maj1",
    "coeff_maj2",
    "coeff_maj4",
    "coeff_maj5",
    "coeff_maj6",
    "coeff_maj7",
    "coeff_maj8",
    "coeff_maj9",
    "varphi_maj3",
    "curvature_c_tau",
    "make_generator",
    "domain_lower_bound",
    "order_check",
    "majorization_check",
    "ell_majorization_check",
    "MajorizationReport",
    "hessian_characterization_check",
    "ORDER_RELATIONS",
    "SERIES_THRESHOLD",
]

# Switch to the series expansion of c_tau when (xi + tau) <= this * (eta - tau).
SERIES_THRESHOLD = 1e-5
_SERIES_TERMS = 6


class MajorantKind(enum.Enum):
    MAJ1 = 1
    MAJ2 = 2
    MAJ3 = 3
    MAJ4 = 4
    MAJ5 = 5
    MAJ6 = 6
    MAJ7 = 7
    MAJ8 = 8
    MAJ9 = 9

    @classmethod
    def parse(cls, name) -> "MajorantKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "").replace("_", "")
        if key.startswith("maj"):
            key = key[3:]
        try:
            return cls(int(key))
        except (ValueError, TypeError):
            raise ValueError(f"unknown majorant '{name}'") from None

    @property
    def label(self) -> str:
        return f"maj{self.value}"

    @property
    def family(self) -> str:
        if self.value <= 4:
            return "log_shift"
        if self.value <= 6:
            return "log_0"
        return "quadratic"


@dataclass(frozen=True)
class MajorantSpec:
    """Which majorant to use, with its shift ``mu`` (Maj4) or curvature
    parameter ``tau`` (Maj7/8/9)."""

    kind: MajorantKind
    mu: Optional[float] = None
    tau: Optional[float] = None

    def __post_init__(self):
        kind = MajorantKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        if (self.mu is not None) != (kind is MajorantKind.MAJ4):
            raise ValueError("mu must be given exactly when kind is Maj4")
        needs_tau = kind in (MajorantKind.MAJ7, MajorantKind.MAJ8, MajorantKind.MAJ9)
        if (self.tau is not None) != needs_tau:
            raise ValueError("tau must be given exactly when kind is Maj7, Maj8 or Maj9")

    @classmethod
    def default(cls, kind, rho: float, mu_fraction: float = 1.0,
                tau_fraction: float = 0.5) -> "MajorantSpec":
        """Maj4 gets ``mu = mu_fraction * rho``, quadratics ``tau = tau_fraction * rho``."""
        kind = MajorantKind.parse(kind)
        if kind is MajorantKind.MAJ4:
            return cls(kind, mu=mu_fraction * rho)
        if kind in (MajorantKind.MAJ7, MajorantKind.MAJ8, MajorantKind.MAJ9):
            return cls(kind, tau=tau_fraction * rho)
        return cls(kind)

    def validate(self, rho: float) -> None:
        if self.mu is not None and not 0.0 <= self.mu <= rho:
            raise ValueError(f"mu={self.mu} must lie in [0, rho={rho}]")
        if self.tau is not None and not 0.0 < self.tau < rho:
            raise ValueError(f"tau={self.tau} must lie in (0, rho={rho})")


# ---------------------------------------------------------------------------
# Generators


class SeparableLegendre:
    """``-sum a_n ln(x_n + shift)`` (form ``log_shift``) or ``1/2 sum a_n x_n^2``.

    ``coeffs`` may be 2-D (one row per point of a batch).
    """

    def __init__(self, form: str, coeffs, shift: float = 0.0):
        if form not in ("log_shift", "quadratic"):
            raise ValueError(f"unknown generator form '{form}'")
        self.form = form
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.shift = float(shift)
        if form == "log_shift" and self.shift < 0:
            raise ValueError("shift must be >= 0")
        if np.any(self.coeffs < 0):
            raise ValueError("generator coefficients must be nonnegative")

    @property
    def lower(self) -> float:
        return -self.shift if self.form == "log_shift" else -np.inf

    def _check(self, x):
        if self.form == "log_shift" and np.any(x <= -self.shift):
            raise DomainError(f"point outside (-{self.shift}, +inf)^N")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        self._check(x)
        if self.form == "log_shift":
            return -np.sum(self.coeffs * np.log(x + self.shift), axis=-1)
        return 0.5 * np.sum(self.coeffs * x * x, axis=-1)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        self._check(x)
        if self.form == "log_shift":
            return -self.coeffs / (x + self.shift)
        return self.coeffs * x

    def hessian_diag(self, x):
        x = np.asarray(x, dtype=float)
        self._check(x)
        if self.form == "log_shift":
            return self.coeffs / (x + self.shift) ** 2
        return np.broadcast_to(self.coeffs, x.shape).copy()

    def distance(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self._check(x)
        self._check(y)
        if self.form == "log_shift":
            t = (x - y) / (y + self.shift)
            return np.sum(self.coeffs * (t - np.log1p(t)), axis=-1)
        return 0.5 * np.sum(self.coeffs * (x - y) ** 2, axis=-1)

    def __repr__(self):
        return f"SeparableLegendre(form={self.form!r}, shift={self.shift}, N={self.coeffs.shape[-1]})"


class PiecewiseLogQuadratic:
    """Maj3 generator ``sum_n a_n phi_n(x_n)`` anchored at ``z``.

    ``phi_n`` is quadratic above ``z_n`` and a shifted log barrier below it;
    it is C^1 with a piecewise continuous second derivative.
    """

    form = "piecewise"

    def __init__(self, coeffs, anchor, rho: float):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.anchor = np.asarray(anchor, dtype=float)
        self.rho = float(rho)
        if np.any(self.anchor <= -self.rho):
            raise DomainError("anchor outside (-rho, +inf)^N")

    @property
    def lower(self) -> float:
        return -self.rho

    def _check(self, x):
        if np.any(x <= -self.rho):
            raise DomainError(f"point outside (-{self.rho}, +inf)^N")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        self._check(x)
        return np.sum(self.coeffs * varphi_maj3(self.anchor, self.rho, x), axis=-1)

    def _phi_prime(self, x):
        zr = self.anchor + self.rho
        upper = (x - self.anchor) / zr**2 - 1.0 / zr
        lower = -1.0 / (x + self.rho)
        return np.where(x >= self.anchor, upper, lower)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        self._check(x)
        return self.coeffs * self._phi_prime(x)

    def hessian_diag(self, x):
        x = np.asarray(x, dtype=float)
        self._check(x)
        zr = self.anchor + self.rho
        return self.coeffs * np.where(x >= self.anchor, 1.0 / zr**2, 1.0 / (x + self.rho) ** 2)

    def distance(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self._check(x)
        self._check(y)
        z = self.anchor
        zr = z + self.rho
        up = (x >= z) & (y >= z)
        low = (x < z) & (y < z)
        # Same-side pairs use cancellation-free forms.
        d_up = 0.5 * (x - y) ** 2 / zr**2
        t = (x - y) / (y + self.rho)
        with np.errstate(invalid="ignore"):
            d_low = t - np.log1p(t)
        d_mix = (varphi_maj3(z, self.rho, x) - varphi_maj3(z, self.rho, y)
                 - self._phi_prime(y) * (x - y))
        d = np.where(up, d_up, np.where(low, d_low, d_mix))
        return np.sum(self.coeffs * d, axis=-1)


Generator = Union[SeparableLegendre, PiecewiseLogQuadratic]


def bregman_distance(h: Generator, x, y):
    """``h(x) - h(y) - <grad h(y), x - y>``, evaluated in a cancellation-free form."""
    return h.distance(x, y)


def varphi_maj3(z_n, rho, xi):
    """Piecewise potential of the Maj3 generator (zero, with slope
    ``-1/(z_n + rho)``, at ``xi = z_n``)."""
    z_n = np.asarray(z_n, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= -rho) or np.any(z_n <= -rho):
        raise DomainError("xi and z_n must lie in (-rho, +inf)")
    zr = z_n + rho
    dx = xi - z_n
    upper = dx**2 / (2.0 * zr**2) - dx / zr
    with np.errstate(invalid="ignore", divide="ignore"):
        lower = -np.log((xi + rho) / zr)
    out = np.where(xi >= z_n, upper, lower)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Curvature of the quadratic majorants


def curvature_c_tau(xi, eta, tau):
    """Optimal curvature of a quadratic majorant of ``-ln(. + eta)`` on
    ``[-tau, +inf)`` at the point ``xi``.

    Equal to ``2 * int_0^1 (1-t) / ((1-t) xi - t tau + eta)^2 dt``. With
    ``s = xi + tau`` and ``r = s / (eta - tau)`` the closed form is
    ``2 (log1p(r) - r / (1 + r)) / s^2``; for ``r <= SERIES_THRESHOLD`` the
    power series in ``r`` is used instead, and ``xi = -tau`` gives
    ``1 / (eta - tau)^2``.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("tau must be > 0")
    if np.any(eta <= tau):
        raise ValueError("eta must be > tau")
    if np.any(xi < -tau):
        raise DomainError("xi must be >= -tau")
    s = xi + tau
    e = eta - tau
    r = s / e
    small = r <= SERIES_THRESHOLD
    rs = np.where(small, r, 0.0)
    # Horner form of sum_k (k+1)/(k+2) (-r)^k.
    series = np.zeros_like(rs)
    for k in range(_SERIES_TERMS - 1, -1, -1):
        series = (k + 1.0) / (k + 2.0) - rs * series
    series = 2.0 * series / e**2
    rl = np.where(small, 1.0, r)
    sl = np.where(small, 1.0, s)
    closed = 2.0 * (np.log1p(rl) - rl / (1.0 + rl)) / sl**2
    out = np.where(small, series, closed)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Coefficient rules


def _forward(model: PoissonModel, z):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.n_cols:
        raise ValueError(f"z has {z.shape[-1]} components, expected {model.n_cols}")
    hz = model.op.forward(z) if z.ndim == 1 else model.op.forward(z.T).T
    p = hz + model.b
    if np.any(p <= 0):
        raise DomainError("H z + b must be strictly positive")
    return hz, p


def _back(model: PoissonModel, w):
    return model.op.adjoint(w) if w.ndim == 1 else model.op.adjoint(w.T).T


def _require_above(z, bound, what):
    if np.any(np.asarray(z) <= bound):
        raise DomainError(f"z must lie in ({bound}, +inf)^N for {what}")


def coeff_maj1(model: PoissonModel, z):
    """``a_n = sum_m y_m H_mn (z_n + zeta_m b_m) / (H_m z + b_m)``."""
    _require_above(z, -model.rho, "Maj1")
    _, p = _forward(model, z)
    r = _back(model, model.y / p)
    s = _back(model, model.y * model.zeta_b / p)
    return np.asarray(z) * r + s


def coeff_maj2(model: PoissonModel):
    """``a_n = sum_m y_m [H_mn != 0]``; independent of z, no projector calls."""
    pattern = model.op.csr.copy()
    pattern.data[:] = 1.0
    return pattern.T @ model.y


def coeff_maj4(model: PoissonModel, z, mu: float):
    """``a_n = sum_m y_m H_mn (z_n + mu) / (H_m z + b_m)`` with ``mu`` in ``[0, rho]``."""
    if not 0.0 <= mu <= model.rho:
        raise ValueError(f"mu={mu} must lie in [0, rho={model.rho}]")
    _require_above(z, -mu, "Maj4")
    _, p = _forward(model, z)
    return (np.asarray(z) + mu) * _back(model, model.y / p)


def coeff_maj5(model: PoissonModel, z):
    """Maj5 reuses the Maj1 coefficients with a log barrier at zero."""
    _require_above(z, 0.0, "Maj5")
    return coeff_maj1(model, z)


def coeff_maj6(model: PoissonModel, z):
    """``a_n = z_n sum_m y_m H_mn / (H_m z + b_m)``: the ML-EM weights."""
    _require_above(z, 0.0, "Maj6")
    _, p = _forward(model, z)
    return np.asarray(z) * _back(model, model.y / p)


def _check_tau(model, tau):
    if not 0.0 < tau < model.rho:
        raise ValueError(f"tau={tau} must lie in (0, rho={model.rho})")


def coeff_maj7(model: PoissonModel, z, tau: float):
    """Row-wise curvature ``c_tau(z_n, zeta_m b_m)`` inside the Maj1 sum.

    Rows sharing a value of ``zeta_m b_m`` share one backprojection, so the
    cost is one backprojection per distinct shift (at most M).
    """
    _check_tau(model, tau)
    _require_above(z, -tau, "Maj7")
    z = np.asarray(z, dtype=float)
    _, p = _forward(model, z)
    w = model.y / p
    shifts, group = np.unique(model.zeta_b, return_inverse=True)
    a = np.zeros_like(z)
    for g, eta in enumerate(shifts):
        wg = np.where(group == g, w, 0.0)
        a += _back(model, wg) * (z + eta) * curvature_c_tau(z, eta, tau)
    return a


def coeff_maj8(model: PoissonModel, z, tau: float):
    """Maj1 coefficients times the common curvature ``c_tau(z_n, rho)``."""
    _check_tau(model, tau)
    _require_above(z, -tau, "Maj8")
    z = np.asarray(z, dtype=float)
    _, p = _forward(model, z)
    a1 = z * _back(model, model.y / p) + _back(model, model.y * model.zeta_b / p)
    return a1 * curvature_c_tau(z, model.rho, tau)


def coeff_maj9(model: PoissonModel, z, tau: float):
    """``a_n = sum_m y_m (H_mn / zeta_m) c_tau(H_m z, b_m)``.

    Valid while every ``H_m z >= -tau`` and every ``b_m > tau``.
    """
    _check_tau(model, tau)
    if np.any(model.b <= tau):
        raise ValueError("Maj9 requires b_m > tau for every row")
    hz, _ = _forward(model, z)
    if np.any(hz < -tau):
        raise DomainError("Maj9 requires H_m z >= -tau for every row")
    c = curvature_c_tau(hz, model.b, tau)
    return _back(model, model.y * model.op.row_sums * c)


# ---------------------------------------------------------------------------
# Generators per majorant


def domain_lower_bound(spec: MajorantSpec, model: PoissonModel) -> float:
    """Open lower bound of the (box) domain on which the majorant is valid.

    For Maj9 the box is shrunk so that ``H_m x > -tau`` holds on it.
    """
    k = spec.kind
    if k in (MajorantKind.MAJ1, MajorantKind.MAJ2, MajorantKind.MAJ3):
        return -model.rho
    if k is MajorantKind.MAJ4:
        return -spec.mu
    if k in (MajorantKind.MAJ5, MajorantKind.MAJ6):
        return 0.0
    if k is MajorantKind.MAJ9:
        return -spec.tau / max(1.0, float(model.op.row_sums.max()))
    return -spec.tau


def make_generator(spec: MajorantSpec, model: PoissonModel, z) -> Generator:
    """Generator ``h_z`` of the majorant of ``ell`` at ``z`` (batched z allowed)."""
    spec.validate(model.rho)
    k = spec.kind
    rho = model.rho
    if k is MajorantKind.MAJ1:
        return SeparableLegendre("log_shift", coeff_maj1(model, z), rho)
    if k is MajorantKind.MAJ2:
        a2 = np.broadcast_to(coeff_maj2(model), np.shape(z)).copy()
        return SeparableLegendre("log_shift", a2, rho)
    if k is MajorantKind.MAJ3:
        return PiecewiseLogQuadratic(coeff_maj1(model, z), z, rho)
    if k is MajorantKind.MAJ4:
        return SeparableLegendre("log_shift", coeff_maj4(model, z, spec.mu), spec.mu)
    if k is MajorantKind.MAJ5:
        return SeparableLegendre("log_shift", coeff_maj5(model, z), 0.0)
    if k is MajorantKind.MAJ6:
        return SeparableLegendre("log_shift", coeff_maj6(model, z), 0.0)
    if k is MajorantKind.MAJ7:
        return SeparableLegendre("quadratic", coeff_maj7(model, z, spec.tau))
    if k is MajorantKind.MAJ8:
        return SeparableLegendre("quadratic", coeff_maj8(model, z, spec.tau))
    return SeparableLegendre("quadratic", coeff_maj9(model, z, spec.tau))


# (tighter, looser, needs all zeta_m b_m equal to rho)
ORDER_RELATIONS = (
    (MajorantKind.MAJ4, MajorantKind.MAJ1, False),
    (MajorantKind.MAJ1, MajorantKind.MAJ2, False),
    (MajorantKind.MAJ1, MajorantKind.MAJ3, False),
    (MajorantKind.MAJ1, MajorantKind.MAJ5, False),
    (MajorantKind.MAJ6, MajorantKind.MAJ5, False),
    (MajorantKind.MAJ7, MajorantKind.MAJ8, False),
    (MajorantKind.MAJ3, MajorantKind.MAJ7, True),
)


# ---------------------------------------------------------------------------
# Sampling checks


def _as_factory(h):
    return h if callable(h) else (lambda z: h)


def _uniform(rng, lower, upper, shape):
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    return lower + (upper - lower) * rng.random(shape)


def order_check(h_a, h_b, domain_box, samples: int = 10_000, seed: int = 0,
                n: Optional[int] = None, anchored: bool = True) -> float:
    """Minimum over samples of ``D_{h_b}(x, y) - D_{h_a}(x, y)``.

    ``h_a`` and ``h_b`` are generators or callables ``z -> generator`` (for
    the point-dependent majorant generators, evaluated on a batch of z).
    With ``anchored=True`` the second argument is the reference point,
    ``y = z``; otherwise ``y`` is drawn independently of ``z``. A
    nonnegative result (up to tolerance) supports ``h_a`` being tighter.
    """
    lower, upper = domain_box
    if n is None:
        for h in (h_a, h_b):
            if not callable(h):
                n = h.coeffs.shape[-1]
                break
        else:
            raise ValueError("dimension n is required when both generators are factories")
    rng = np.random.default_rng(seed)
    z = _uniform(rng, lower, upper, (samples, n))
    x = _uniform(rng, lower, upper, (samples, n))
    y = z if anchored else _uniform(rng, lower, upper, (samples, n))
    ga = _as_factory(h_a)(z)
    gb = _as_factory(h_b)(z)
    return float(np.min(gb.distance(x, y) - ga.distance(x, y)))


@dataclass
class MajorizationReport:
    min_gap: float          # min of Q_f(x, z) - f(x)
    min_scaled_gap: float   # min of (Q_f(x, z) - f(x)) / (1 + |f(x)|)
    tangency_error: float   # max of |Q_f(z, z) - f(z)| / (1 + |f(z)|)

    def passed(self, tol: float = 1e-8, tangency_tol: float = 1e-12) -> bool:
        return self.min_scaled_gap >= -tol and self.tangency_error <= tangency_tol


def majorization_check(f_value: Callable, f_gradient: Callable, h_z: Callable,
                       domain_box, n: int, samples: int = 10_000,
                       seed: int = 0) -> MajorizationReport:
    """Sample ``Q_f(x, z) - f(x)`` with ``Q_f(x,z) = f(z) + <grad f(z), x-z> + D_{h_z}(x, z)``.

    ``f_value`` and ``f_gradient`` take an (S, N) batch; ``h_z`` maps a batch
    of reference points to a (batched) generator.
    """
    lower, upper = domain_box
    rng = np.random.default_rng(seed)
    z = _uniform(rng, lower, upper, (samples, n))
    x = _uniform(rng, lower, upper, (samples, n))
    fz = f_value(z)
    fx = f_value(x)
    gz = f_gradient(z)
    h = h_z(z)
    q = fz + np.sum(gz * (x - z), axis=-1) + h.distance(x, z)
    gap = q - fx
    q_zz = fz + h.distance(z, z)
    return MajorizationReport(
        min_gap=float(gap.min()),
        min_scaled_gap=float((gap / (1.0 + np.abs(fx))).min()),
        tangency_error=float((np.abs(q_zz - fz) / (1.0 + np.abs(fz))).max()),
    )


def ell_majorization_check(model: PoissonModel, spec: MajorantSpec, samples: int = 10_000,
                           seed: int = 0, upper: float = 10.0, margin: float = 1e-3,
                           coeff_scale: float = 1.0) -> MajorizationReport:
    """Majorization check of ``ell`` for one majorant on its own domain box.

    ``coeff_scale`` multiplies the generator coefficients (fault injection).
    """
    lower = domain_lower_bound(spec, model) + margin

    def h_z(z):
        g = make_generator(spec, model, z)
        g.coeffs = g.coeffs * coeff_scale
        return g

    return majorization_check(
        lambda x: ell_value(model, x.T),
        lambda x: ell_gradient(model, x.T).T,
        h_z, (lower, upper), model.n_cols, samples, seed,
    )


def _quad_form(hess, point, v):
    hmat = np.asarray(hess(point), dtype=float)
    if hmat.ndim == 0:
        return float(hmat) * float(v @ v) if v.ndim else float(hmat) * float(v * v)
    if hmat.ndim == 1:
        return float(np.sum(hmat * v * v))
    return float(v @ hmat @ v)


def hessian_characterization_check(hess_f: Callable, hess_h: Callable, x, z,
                                   quad_points: int = 64) -> float:
    """``(x - z)^T C_{h - f}(x, z) (x - z)`` by Gauss-Legendre quadrature.

    ``C_g(x, z) = int_0^1 (1 - t) hess g((1 - t) z + t x) dt``. Hessian
    callables may return a scalar, a diagonal (1-D) or a full matrix.
    A nonnegative value for every ``x`` characterizes a majorant.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    v = x - z
    nodes, weights = np.polynomial.legendre.leggauss(quad_points)
    t = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    total = 0.0
    for ti, wi in zip(t, w):
        point = (1.0 - ti) * z + ti * x
        total += wi * (1.0 - ti) * (_quad_form(hess_h, point, v) - _quad_form(hess_f, point, v))
    return total
