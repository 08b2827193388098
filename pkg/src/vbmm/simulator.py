"""Synthetic PET data: ellipse phantoms, a parallel-beam strip projector and
Poisson sinogram sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp
from scipy.special import gammaln

from .linalg import ImageGrid, SparseNonnegOperator

__all__ = [
    "Ellipse",
    "PhantomSpec",
    "ScanGeometry",
    "SimulatedData",
    "phantom_generate",
    "phantom_support",
    "build_projector",
    "fov_mask",
    "make_rng",
    "poisson_sample",
    "simulate",
    "INVERSION_LIMIT",
]

# Rates below this use sequential-search inversion, others transformed rejection.
INVERSION_LIMIT = 30.0
_DROP_BELOW = 1e-10


@dataclass(frozen=True)
class Ellipse:
    """Ellipse in normalized coordinates (image spans [-1, 1] on both axes,
    y pointing up); ``rotation`` is in degrees, counter-clockwise."""

    center: tuple
    semi_axes: tuple
    value: float
    rotation: float = 0.0

    def __post_init__(self):
        if len(self.center) != 2 or len(self.semi_axes) != 2:
            raise ValueError("center and semi_axes need two components")
        if min(self.semi_axes) <= 0:
            raise ValueError("semi-axes must be > 0")
        if not self.value >= 0:
            raise ValueError("ellipse activity must be >= 0")


@dataclass(frozen=True)
class PhantomSpec:
    width: int
    height: int
    ellipses: Sequence[Ellipse] = ()
    background: float = 0.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("phantom dimensions must be >= 1")
        if not self.background >= 0:
            raise ValueError("background activity must be >= 0")


def _pixel_coords(width: int, height: int):
    u = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    v = 1.0 - (np.arange(height) + 0.5) / height * 2.0
    return np.meshgrid(u, v)


def _inside(e: Ellipse, uu, vv):
    th = math.radians(e.rotation)
    du = uu - e.center[0]
    dv = vv - e.center[1]
    p = (du * math.cos(th) + dv * math.sin(th)) / e.semi_axes[0]
    q = (-du * math.sin(th) + dv * math.cos(th)) / e.semi_axes[1]
    return p * p + q * q <= 1.0


def phantom_generate(spec: PhantomSpec) -> ImageGrid:
    """Rasterize by pixel-centre membership; later ellipses overwrite earlier ones."""
    uu, vv = _pixel_coords(spec.width, spec.height)
    img = np.full((spec.height, spec.width), float(spec.background))
    for e in spec.ellipses:
        img[_inside(e, uu, vv)] = e.value
    return ImageGrid(spec.width, spec.height, img.ravel())


def phantom_support(spec: PhantomSpec) -> np.ndarray:
    """Pixels inside any ellipse or with positive activity."""
    uu, vv = _pixel_coords(spec.width, spec.height)
    sup = np.zeros((spec.height, spec.width), dtype=bool)
    for e in spec.ellipses:
        sup |= _inside(e, uu, vv)
    sup |= phantom_generate(spec).as_array() > 0
    return sup.ravel()


@dataclass(frozen=True)
class ScanGeometry:
    """Parallel-beam geometry over ``[0, pi)``. ``n_bins=None`` picks enough
    bins of ``bin_width`` pixels to cover the image diagonal."""

    n_angles: int
    n_bins: Optional[int] = None
    bin_width: float = 1.0

    def __post_init__(self):
        if self.n_angles < 1:
            raise ValueError("n_angles must be >= 1")
        if self.n_bins is not None and self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if not self.bin_width > 0:
            raise ValueError("bin_width must be > 0")

    def bins_for(self, width: int, height: int) -> int:
        if self.n_bins is not None:
            return self.n_bins
        return int(math.ceil(math.hypot(width, height) / self.bin_width)) + 1

    @property
    def angles(self) -> np.ndarray:
        return np.pi * np.arange(self.n_angles) / self.n_angles


def _box_sum_cdf(t, a, b):
    """CDF at ``t`` of ``U(-a/2, a/2) + U(-b/2, b/2)`` (``a >= b >= 0``)."""
    if b < 1e-12:
        return np.clip(t / a + 0.5, 0.0, 1.0)

    def q(u):
        return np.square(np.maximum(u, 0.0))

    s = 0.5 * (a + b)
    d = 0.5 * (a - b)
    val = (q(t + s) - q(t + d) - q(t - d) + q(t - s)) / (2.0 * a * b)
    return np.clip(val, 0.0, 1.0)


def build_projector(geometry: ScanGeometry, width: int, height: int) -> SparseNonnegOperator:
    """Strip-integral system matrix.

    Entry ``(m, n)`` is the area of pixel ``n`` inside detector strip ``m``
    divided by the strip width (pixels are unit squares). Row ``m`` stands
    for ``angle * n_bins + bin``; rows that miss the image are dropped and
    their sinogram positions kept in ``row_labels``.
    """
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be >= 1")
    n_bins = geometry.bins_for(width, height)
    w = geometry.bin_width
    cols = np.arange(width * height)
    px = (cols % width) - 0.5 * (width - 1)
    py = 0.5 * (height - 1) - (cols // width)
    first_edge = -0.5 * n_bins * w
    rows_all, cols_all, vals_all = [], [], []
    for ia, th in enumerate(geometry.angles):
        c, s = math.cos(th), math.sin(th)
        a, bb = sorted((abs(c), abs(s)), reverse=True)
        half = 0.5 * (a + bb)
        t0 = px * c + py * s
        k_lo = np.floor((t0 - half - first_edge) / w).astype(np.int64)
        k_hi = np.floor((t0 + half - first_edge) / w).astype(np.int64)
        for off in range(int((k_hi - k_lo).max()) + 1):
            k = k_lo + off
            ok = (k <= k_hi) & (k >= 0) & (k < n_bins)
            lo = first_edge + k[ok] * w - t0[ok]
            frac = _box_sum_cdf(lo + w, a, bb) - _box_sum_cdf(lo, a, bb)
            vals = frac / w
            keep = vals > _DROP_BELOW
            rows_all.append(ia * n_bins + k[ok][keep])
            cols_all.append(cols[ok][keep])
            vals_all.append(vals[keep])
    rows = np.concatenate(rows_all)
    colsv = np.concatenate(cols_all)
    vals = np.concatenate(vals_all)
    full = sp.csr_matrix((vals, (rows, colsv)), shape=(geometry.n_angles * n_bins, width * height))
    sums = np.asarray(full.sum(axis=1)).ravel()
    live = np.flatnonzero(sums > 0)
    return SparseNonnegOperator(full[live], row_labels=live)


def fov_mask(spec: PhantomSpec, op: SparseNonnegOperator, dilation: int = 2) -> np.ndarray:
    """Dilated, hole-filled phantom support intersected with covered pixels."""
    sup = phantom_support(spec).reshape(spec.height, spec.width)
    if dilation > 0:
        sup = ndi.binary_dilation(sup, structure=ndi.generate_binary_structure(2, 1),
                                  iterations=dilation)
    sup = ndi.binary_fill_holes(sup)
    return sup.ravel() & (op.col_sums > 0)


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator from a ``SeedSequence``; passes Generators through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def _inversion(lam, rng):
    u = rng.random(lam.shape)
    k = np.zeros(lam.shape, dtype=np.int64)
    p = np.exp(-lam)
    cdf = p.copy()
    active = np.flatnonzero(u > cdf)
    j = 0
    while active.size:
        j += 1
        p[active] *= lam[active] / j
        cdf[active] += p[active]
        k[active] = j
        # Stop once the pmf tail has underflowed relative to the CDF.
        active = active[(u[active] > cdf[active]) & (p[active] > 1e-17 * cdf[active])]
    return k


def _ptrs(lam, rng):
    """Transformed rejection with squeeze (constants as in numpy's legacy sampler)."""
    out = np.empty(lam.shape, dtype=np.int64)
    slam = np.sqrt(lam)
    loglam = np.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    pending = np.arange(lam.size)
    while pending.size:
        n = pending.size
        U = rng.random(n) - 0.5
        V = rng.random(n)
        lp, ap, bp = lam[pending], a[pending], b[pending]
        us = 0.5 - np.abs(U)
        k = np.floor((2.0 * ap / us + bp) * U + lp + 0.43)
        quick = (us >= 0.07) & (V <= vr[pending])
        reject = (k < 0) | ((us < 0.013) & (V > us))
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.log(V) + np.log(invalpha[pending]) - np.log(ap / (us * us) + bp)
            rhs = -lp + k * loglam[pending] - gammaln(k + 1.0)
        accept = quick | (~reject & (lhs <= rhs))
        out[pending[accept]] = k[accept].astype(np.int64)
        pending = pending[~accept]
    return out


def poisson_sample(rates, seed) -> np.ndarray:
    """Independent Poisson counts for each rate, reproducible given ``seed``."""
    rates = np.asarray(rates, dtype=float)
    if np.any(rates < 0) or not np.all(np.isfinite(rates)):
        raise ValueError("Poisson rates must be finite and >= 0")
    rng = make_rng(seed)
    flat = rates.ravel()
    out = np.zeros(flat.shape, dtype=np.int64)
    small = np.flatnonzero((flat > 0) & (flat < INVERSION_LIMIT))
    large = np.flatnonzero(flat >= INVERSION_LIMIT)
    if small.size:
        out[small] = _inversion(flat[small], rng)
    if large.size:
        out[large] = _ptrs(flat[large], rng)
    return out.reshape(rates.shape)


@dataclass
class SimulatedData:
    phantom: ImageGrid
    op: SparseNonnegOperator
    mask: np.ndarray
    rates: np.ndarray
    b: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)


def simulate(spec: PhantomSpec, geometry: ScanGeometry, seed,
             background_fraction: float = 0.05, background_value: Optional[float] = None,
             fov_dilation: int = 2) -> SimulatedData:
    """Phantom, projector, mask, background and Poisson counts.

    The background is uniform: ``background_value`` if given, otherwise
    ``background_fraction * mean(H xbar)``.
    """
    phantom = phantom_generate(spec)
    op = build_projector(geometry, spec.width, spec.height)
    mask = fov_mask(spec, op, fov_dilation)
    hx = op.csr @ phantom.values
    level = float(background_value) if background_value is not None \
        else background_fraction * float(hx.mean())
    if not level > 0:
        raise ValueError("background level must be > 0; set an explicit background value")
    b = np.full(op.rows, level)
    rates = hx + b
    y = poisson_sample(rates, seed)
    phantom = ImageGrid(spec.width, spec.height, phantom.values, support_mask=None)
    return SimulatedData(phantom, op, mask, rates, b, y.astype(float),
                         meta={"background": level, "seed": int(seed)})
