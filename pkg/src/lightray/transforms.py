"""Light ray transform, geodesic and generalized ray transforms, moments, slicing.

Fourier convention in time: ``f^(tau) = int exp(-i tau t) f(t) dt``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import SupportError
from .geometry import contract, i_op, symmetrized_derivative
from .rays import (LiftedRay, default_step, integrate_geodesics, integrate_g_curves,
                   integrate_spacetime_geodesics, lift_batch, stack_samples)


# --------------------------------------------------------------------------
# concatenated rays
# --------------------------------------------------------------------------

class RaySet:
    """All samples of a list of rays concatenated, for one-pass integrals."""

    def __init__(self, rays):
        rays = list(rays)
        self.rays = rays
        self.n = len(rays)
        self.ids = np.concatenate([np.full(len(r.s), i) for i, r in enumerate(rays)])
        self.w = np.concatenate([r.weights for r in rays])
        self.s = np.concatenate([r.s for r in rays])
        self.y = np.concatenate([r.point for r in rays])
        self.u = np.concatenate([r.velocity for r in rays])
        self._cache = {}

    def integrate(self, values):
        """Per-ray integrals of sample values (real or complex)."""
        values = np.asarray(values)
        if np.iscomplexobj(values):
            return self.integrate(values.real) + 1j * self.integrate(values.imag)
        return np.bincount(self.ids, weights=self.w * values, minlength=self.n)

    def cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]


def _as_rayset(rays):
    if isinstance(rays, RaySet):
        return rays
    if isinstance(rays, LiftedRay):
        return RaySet([rays])
    return RaySet(rays)


def integrand(alpha, y, u):
    """alpha(y)(u, ..., u) at spacetime samples."""
    return contract(alpha.components(y), u, alpha.rank)


# --------------------------------------------------------------------------
# transforms
# --------------------------------------------------------------------------

def light_ray_transform(geo, alpha, ray):
    """int alpha(beta(s), beta'(s), ..., beta'(s)) ds along one lifted ray."""
    return float(light_ray_transform_batch(geo, alpha, [ray])[0])


def light_ray_transform_batch(geo, alpha, rays, shift=0.0):
    """Light ray transform along many rays, optionally time-shifted by ``shift``."""
    rs = _as_rayset(rays)
    y = rs.y
    if shift:
        y = y.copy()
        y[:, 0] += shift
    return rs.integrate(integrand(alpha, y, rs.u))


def geodesic_ray_transform(man, omega, sample, step=None):
    """int_0^{tau_+} omega(gamma, gamma', ..., gamma') dr along the unit-speed geodesic."""
    return geodesic_ray_transform_batch(man, omega, [sample], step)[0]


def _geodesic_samples(man, samples, step):
    grid = stack_samples(samples)
    batch = integrate_geodesics(man, grid.x, grid.v, step)
    ids, s, pos, vel = batch.flatten()
    return ids, s, pos, vel, batch.weights(), len(batch)


def geodesic_ray_transform_batch(man, omega, samples, step=None):
    ids, _, pos, vel, w, n = _geodesic_samples(man, samples, step)
    vals = contract(omega.components(pos), vel, omega.rank)
    return np.bincount(ids, weights=w * vals, minlength=n)


def moment_transform(man, omega, sample, j, step=None):
    """R_j omega = int_0^{tau_+} (i r)^j omega(gamma, gamma', ...) dr."""
    return moment_transform_batch(man, omega, [sample], j, step)[0]


def moment_transform_batch(man, omega, samples, j, step=None):
    ids, s, pos, vel, w, n = _geodesic_samples(man, samples, step)
    vals = contract(omega.components(pos), vel, omega.rank) * (1j * s) ** j
    return (np.bincount(ids, weights=w * vals.real, minlength=n)
            + 1j * np.bincount(ids, weights=w * vals.imag, minlength=n))


def generalized_ray_transform(geo, f, sample, step=None):
    """int f(b(s)) ds along the G-curve through ``sample`` (affine parameter)."""
    return generalized_ray_transform_batch(geo, f, [sample], step)[0]


def generalized_ray_transform_batch(geo, f, samples, step=None):
    grid = stack_samples(samples)
    batch = integrate_g_curves(geo, grid.x, grid.v, step)
    ids, _, pos, _ = batch.flatten()
    return np.bincount(ids, weights=batch.weights() * f.components(pos), minlength=len(batch))


# --------------------------------------------------------------------------
# sinograms
# --------------------------------------------------------------------------

@dataclass
class Sinogram:
    """Transform values indexed by (time shift or frequency) x inflow sample."""

    axis1: np.ndarray
    samples: object
    values: np.ndarray
    axis1_name: str = "T"

    def __post_init__(self):
        self.axis1 = np.asarray(self.axis1, dtype=float)
        self.values = np.asarray(self.values)
        if self.values.shape != (len(self.axis1), len(self.samples)):
            raise ValueError("sinogram values do not match its axes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sinogram values must be finite")

    def to_csv(self, path):
        grid = stack_samples(self.samples)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["axis1", "boundary_param", "dir_param", "re", "im"])
            vals = self.values.astype(complex)
            for i, t in enumerate(self.axis1):
                for j in range(len(grid)):
                    w.writerow([f"{t:.12g}", f"{grid.boundary_param[j]:.12g}",
                                f"{grid.dir_param[j]:.12g}", f"{vals[i, j].real:.12e}",
                                f"{vals[i, j].imag:.12e}"])


def check_t_coverage(alpha, a_min, a_max, T_grid):
    """Raise :class:`SupportError` unless the shifts sweep the field's time support."""
    T_grid = np.asarray(T_grid, dtype=float)
    need_lo = alpha.t_min - a_max
    need_hi = alpha.t_max - a_min
    if T_grid.min() > need_lo or T_grid.max() < need_hi:
        raise SupportError(
            f"T grid [{T_grid.min():.4g}, {T_grid.max():.4g}] does not cover "
            f"[{need_lo:.4g}, {need_hi:.4g}]")


def t_grid_for(alpha, rays, n, margin=0.1):
    """Uniform T grid covering the support sweep plus a relative margin."""
    rs = _as_rayset(rays)
    lo = alpha.t_min - rs.y[:, 0].max()
    hi = alpha.t_max - rs.y[:, 0].min()
    pad = margin * (hi - lo)
    return np.linspace(lo - pad, hi + pad, n)


def translation_sinogram(geo, alpha, rays, T_grid, samples=None):
    """L alpha along beta_T for every shift T and every ray."""
    rs = _as_rayset(rays)
    vals = np.stack([rs.integrate(integrand(alpha, _shift(rs.y, T), rs.u)) for T in T_grid])
    return Sinogram(T_grid, samples if samples is not None else list(range(rs.n)), vals)


def _shift(y, T):
    out = y.copy()
    out[:, 0] += T
    return out


def _trapezoid_weights(grid):
    grid = np.asarray(grid, dtype=float)
    w = np.zeros_like(grid)
    d = np.diff(grid)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def slice_sinogram(sino, tau):
    """g_tau = int exp(-i tau T) L f(T) dT by the trapezoid rule in T."""
    w = _trapezoid_weights(sino.axis1) * np.exp(-1j * tau * sino.axis1)
    return w @ sino.values


def time_fourier(f, x, tau, t_grid):
    """f^(tau, x) by Simpson quadrature on ``t_grid`` (odd length, uniform)."""
    from scipy.integrate import simpson

    x = np.asarray(x, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    y = np.concatenate([np.broadcast_to(t[:, None, None], (len(t), len(x), 1)),
                        np.broadcast_to(x[None], (len(t),) + x.shape)], axis=-1)
    vals = f.components(y) * np.exp(-1j * tau * t)[:, None]
    return simpson(vals, x=t, axis=0)


def fourier_slice(geo, f, ray, tau, T_grid, t_quad=None):
    """Both sides of the Fourier slicing identity on one base ray.

    lhs = int exp(-i tau T) L_{beta_T} f dT (trapezoid over ``T_grid``);
    rhs = int exp(i tau a(s)) f^(tau, b(s)) ds with f^ from an independent
    Simpson quadrature in t.
    """
    rs = _as_rayset(ray)
    a = rs.y[:, 0]
    check_t_coverage(f, a.min(), a.max(), T_grid)
    L = np.array([rs.integrate(integrand(f, _shift(rs.y, T), rs.u))[0] for T in T_grid])
    lhs = np.sum(_trapezoid_weights(T_grid) * np.exp(-1j * tau * np.asarray(T_grid)) * L)
    if t_quad is None:
        t_quad = np.linspace(f.t_min, f.t_max, 1201)
    fhat = time_fourier(f, rs.y[:, 1:], tau, t_quad)
    rhs = rs.integrate(np.exp(1j * tau * a) * fhat)[0]
    return complex(lhs), complex(rhs)


# --------------------------------------------------------------------------
# gauge kernel
# --------------------------------------------------------------------------

@dataclass
class GaugeResult:
    """Transform of a gauge tensor over a ray set.

    ``max_abs`` is max |L alpha|; ``scale`` is max over rays of
    int |alpha(beta', ..., beta')| ds, the size the transform would have
    without cancellation.
    """

    max_abs: float
    scale: float
    values: np.ndarray

    @property
    def relative(self):
        return self.max_abs / self.scale if self.scale > 0 else 0.0


def gauge_tensor(geo, T, U, y, gamma=None, metric=None):
    """Components of d^s T + i U (spacetime, gbar_c) at points ``y``."""
    if gamma is None:
        gamma = geo.spacetime_christoffel(y)
    out = symmetrized_derivative(T.components(y), T.gradient(y), gamma, T.rank)
    if U is not None:
        if metric is None:
            metric = geo.assemble(conformal=True).matrix(y)
        out = out + i_op(U.components(y), metric, U.rank)
    return out


def gauge_integrand(geo, T, U, y, u, gamma=None, metric=None):
    """(d^s T + i U)(u, ..., u) without forming the symmetrized tensor.

    Contracting with m copies of one vector makes the symmetrization
    redundant: the value is u^a nabla_a T(u, ..., u) + U(u, ...) gbar_c(u, u).
    """
    if gamma is None:
        gamma = geo.spacetime_christoffel(y)
    r = T.rank
    comps = T.components(y)
    tu = contract(T.gradient(y), u, r + 1)           # u^a d_a T(u..u)
    if r >= 1:
        # Gamma^l_ab u^a u^b contracted into one slot of T, r identical terms
        gu = np.einsum("...lab,...a,...b->...l", gamma, u, u)
        tu = tu - r * contract(comps, [gu] + [u] * (r - 1), r)
    if U is not None:
        if metric is None:
            metric = geo.assemble(conformal=True).matrix(y)
        guu = np.einsum("...a,...ab,...b->...", u, metric, u)
        tu = tu + contract(U.components(y), u, U.rank) * guu
    return tu


def _check_interior_support(fields, rs):
    ends = np.concatenate([np.nonzero(np.diff(rs.ids))[0], [len(rs.ids) - 1]])
    starts = np.concatenate([[0], ends[:-1] + 1])
    pts = rs.y[np.concatenate([starts, ends])]
    for fld in fields:
        if fld is not None and np.any(fld.components(pts) != 0.0):
            raise SupportError("gauge potential does not vanish where rays meet the boundary")


def verify_gauge_kernel(geo, T, U, rays):
    """L(d^s T + U gbar_c) over ``rays``; see :class:`GaugeResult`."""
    rs = _as_rayset(rays)
    _check_interior_support([T, U], rs)
    gamma = rs.cached("gamma", lambda: geo.spacetime_christoffel(rs.y))
    metric = rs.cached("metric", lambda: geo.assemble(conformal=True).matrix(rs.y))
    vals = gauge_integrand(geo, T, U, rs.y, rs.u, gamma, metric)
    L = rs.integrate(vals)
    scale = rs.integrate(np.abs(vals))
    return GaugeResult(float(np.max(np.abs(L))), float(np.max(scale)), L)


# --------------------------------------------------------------------------
# conformal reparametrization
# --------------------------------------------------------------------------

def conformal_reparam_check(geo, alpha, c_fn, ray, step=None):
    """Transform of alpha under c * gbar_c versus the c^{1-m}-weighted original.

    lhs: the null geodesic of c * gbar_c through beta(0) with velocity
    beta'(0) / c(beta(0)) is integrated from scratch and alpha is integrated
    along it in its own affine parameter.  rhs: int c^{1-m} alpha(beta', ...)
    ds along the original ray.
    """
    m = alpha.rank
    lor = geo.assemble(conformal=True).scaled(c_fn)
    y0 = ray.point[:1]
    u0 = ray.velocity[:1] / c_fn(y0)[0][:, None]
    step = step or ray.step or default_step(geo.base)
    tilde = integrate_spacetime_geodesics(lor.christoffel, geo.base, y0, u0, step)[0]
    lhs = tilde.integrate(integrand(alpha, tilde.point, tilde.velocity))
    y, u = ray.point, ray.velocity
    rhs = ray.integrate(c_fn(y)[0] ** (1 - m) * integrand(alpha, y, u))
    return float(lhs), float(rhs)
