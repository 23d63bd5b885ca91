"""Verification suite for tensor fields on the static product R x M.

For a symmetric spacetime tensor alpha of rank 1 or 2 this module

* splits alpha into the blocks f dt + omega + b gbar (time components,
  spatial part, multiple of the metric),
* computes light-ray sinograms over time-translated rays,
* runs the time-sliced Helmholtz decompositions that organize the kernel
  of the light ray transform and checks, at tau = 0, the derivative
  identities that tie the pieces of a gauge tensor together.

The spatial grids are the staggered square grids of
:mod:`lightray.decomposition` on [-1, 1]^2; test fields are supported well
inside the unit disc, so the square is only a computational box.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import trapezoid

from .decomposition import GridField, get_solver, helmholtz, primitive_in_time, tf_helmholtz
from .errors import RankError
from .fields import SpacetimeTensorField, random_bump_tensor
from .geometry import i_op, sym_product
from .rays import random_inflow, trace_rays
from .transforms import RaySet, _trapezoid_weights, gauge_tensor, integrand, t_grid_for


# --------------------------------------------------------------------------
# building test tensors
# --------------------------------------------------------------------------

def gauge_alpha(geo, T, U=None):
    """The spacetime field d^s T + U gbar_c as a :class:`SpacetimeTensorField`."""
    fields = [T] + ([U] if U is not None else [])
    metric = geo.assemble(conformal=True)
    memo = {}

    def comps(y):
        # the geometry is time independent: reuse Christoffels across time shifts
        y = np.asarray(y, dtype=float)
        key = (y.shape, y[..., 1:].tobytes())
        if key not in memo:
            if len(memo) >= 16:
                memo.pop(next(iter(memo)))
            memo[key] = (geo.spacetime_christoffel(y), metric.matrix(y))
        gamma, mat = memo[key]
        return gauge_tensor(geo, T, U, y, gamma, mat)

    return SpacetimeTensorField(T.rank + 1, T.dim, comps, None,
                                t_min=min(f.t_min for f in fields), t_max=max(f.t_max for f in fields))


def random_potentials(rng, m, dim=3, extent=0.4):
    """Random compactly supported (T, U) of ranks m - 1 and m - 2 (U is None for m = 1)."""
    T = random_bump_tensor(rng, m - 1, dim, spatial_extent=extent, radius=(0.25, 0.4))
    U = random_bump_tensor(rng, m - 2, dim, spatial_extent=extent, radius=(0.25, 0.4)) if m >= 2 else None
    return T, U


def sum_fields(a, b):
    """Pointwise sum of two spacetime fields of equal rank."""
    if a.rank != b.rank:
        raise RankError("cannot add fields of different rank")
    return SpacetimeTensorField(a.rank, a.dim, lambda y: a.components(y) + b.components(y), None,
                                t_min=min(a.t_min, b.t_min), t_max=max(a.t_max, b.t_max))


def metric_multiple(geo, b):
    """b gbar_c for a scalar spacetime field ``b``."""
    metric = geo.assemble(conformal=True)

    def comps(y):
        y = np.asarray(y, dtype=float)
        return i_op(b.components(y), metric.matrix(y), 0)

    return SpacetimeTensorField(2, b.dim, comps, None, t_min=b.t_min, t_max=b.t_max)


# --------------------------------------------------------------------------
# block splitting
# --------------------------------------------------------------------------

def split_blocks(comps, m, spatial_metric):
    """Split components of a rank-m spacetime tensor (m = 1 or 2) into (f, omega, b).

    alpha = sym(f x dt) + omega + b gbar with gbar = -dt^2 + g; f and
    omega are spatial, b is None for m = 1.  Index 0 is time.
    """
    comps = np.asarray(comps)
    if m == 1:
        return comps[..., 0], comps[..., 1:], None
    if m == 2:
        b = -comps[..., 0, 0]
        f = 2.0 * comps[..., 0, 1:]
        omega = comps[..., 1:, 1:] - b[..., None, None] * spatial_metric
        return f, omega, b
    raise RankError(f"block splitting is implemented for ranks 1 and 2, got {m}")


def assemble_blocks(f, omega, b, m, spatial_metric):
    """Inverse of :func:`split_blocks`."""
    n = omega.shape[-1] + 1
    lead = omega.shape[:omega.ndim - m]
    dt = np.zeros(lead + (n,))
    dt[..., 0] = 1.0
    fs = np.zeros(lead + (n,) * (m - 1))
    if m == 1:
        fs = np.asarray(f)
    else:
        fs[..., 1:] = f
    out = sym_product(fs, m - 1, dt, 1)
    sl = (Ellipsis,) + (slice(1, None),) * m
    out[sl] = out[sl] + omega
    if m == 2:
        gbar = np.zeros(lead + (n, n))
        gbar[..., 0, 0] = -1.0
        gbar[..., 1:, 1:] = spatial_metric
        out = out + b[..., None, None] * gbar
    return out


# --------------------------------------------------------------------------
# tau derivatives at zero
# --------------------------------------------------------------------------

def _dtft(values, t_grid, tau):
    w = _trapezoid_weights(t_grid) * np.exp(-1j * tau * np.asarray(t_grid))
    return np.tensordot(w, values, axes=(0, 0))


def tau_derivatives(values, t_grid, order, delta):
    """d^k/dtau^k of the time transform at tau = 0 for k = 0..order.

    Central differences with steps ``delta`` and ``2 delta``, combined by
    one Richardson step (fourth-order accurate).
    """
    F = {k: _dtft(values, t_grid, k * delta) for k in (-2, -1, 0, 1, 2)}

    def central(k, s):
        if k == 1:
            return (F[s] - F[-s]) / (2 * delta * s)
        return (F[s] - 2 * F[0] + F[-s]) / (delta * s) ** 2

    if order > 2:
        raise ValueError("derivative order above 2 is not supported")
    return [F[0]] + [(4.0 * central(k, 1) - central(k, 2)) / 3.0 for k in range(1, order + 1)]


def _rel(a, b):
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale


# --------------------------------------------------------------------------
# the suite
# --------------------------------------------------------------------------

def _slices(alpha, t_grid, N, m, dt_step):
    """Per-time-slice block fields on the staggered grid, plus d/dt of f."""
    eye = np.eye(alpha.dim - 1)

    def block_fn(t, which, shift=0.0):
        def fn(pts):
            y = np.concatenate([np.full(pts.shape[:-1] + (1,), t + shift), pts], axis=-1)
            return split_blocks(alpha.components(y), m, eye)[which]
        return fn

    f, omega, df = [], [], []
    for t in t_grid:
        f.append(GridField.from_function(block_fn(t, 0), m - 1, N))
        omega.append(GridField.from_function(block_fn(t, 1), m, N))
        if m == 2:
            fp = GridField.from_function(block_fn(t, 0, dt_step), 1, N)
            fm = GridField.from_function(block_fn(t, 0, -dt_step), 1, N)
            df.append((fp - fm).scaled(0.5 / dt_step))
    return f, omega, df


def decomposition_identities(alpha, t_grid, N=64, delta=0.05, dt_step=1e-4):
    """Time-sliced decompositions of ``alpha`` and the tau = 0 identities.

    Returns a dict of residuals: ``tfs`` (size of the solenoidal trace-free
    part relative to omega), ``f_j1``/``f_j2`` (tau-derivatives of f^s
    against a_1^s) and, for rank 2, ``a0_j1``/``a0_j2`` (a_0 against h).
    """
    m = alpha.rank
    if m not in (1, 2):
        raise RankError(f"the suite handles ranks 1 and 2, got {m}")
    t_grid = np.asarray(t_grid, dtype=float)
    f, omega, df = _slices(alpha, t_grid, N, m, dt_step)
    out = {}
    scale_omega = max(max(w.max_abs() for w in omega), 1e-300)
    if m == 1:
        # omega = omega^s + d^s a1, a1 scalar; f is a scalar so f^s = f
        solver = get_solver(N, 1, "square")
        parts = [helmholtz("square", w, solver) for w in omega]
        out["tfs"] = max(p[0].max_abs() for p in parts) / scale_omega
        fs = np.stack([x.values for x in f])
        a1s = np.stack([p[1].values for p in parts])
    else:
        s1 = get_solver(N, 1, "square")
        fparts = [helmholtz("square", x, s1) for x in f]
        dp = [helmholtz("square", x, s1)[1] for x in df]
        stf = get_solver(N, 2, "square", trace_free=True)
        # replace omega by omega - (d_t p) g before the trace-free split
        parts = [tf_helmholtz("square", w - _times_metric(p_t), stf) for w, p_t in zip(omega, dp)]
        out["tfs"] = max(p[0].max_abs() for p in parts) / scale_omega
        a1 = [p[2] for p in parts]
        a1_parts = [helmholtz("square", x, s1) for x in a1]
        fs = np.stack([p[0].values for p in fparts])
        a1s = np.stack([p[0].values for p in a1_parts])
        h = np.stack([p[1].values for p in a1_parts])
        a0 = np.stack([x.values for x in primitive_in_time([p[1] for p in parts], t_grid, tol=np.inf)])
        A0 = tau_derivatives(a0, t_grid, 1, delta)
        H = tau_derivatives(h, t_grid, 0, delta)
        a0_scale = max(float(np.max(trapezoid(np.abs(a0), t_grid, axis=0))), 1e-300)
        out["a0_j1"] = float(np.max(np.abs(A0[0]))) / a0_scale
        out["a0_j2"] = _rel(A0[1], -1j * H[0])
    F = tau_derivatives(fs, t_grid, 2, delta)
    A1 = tau_derivatives(a1s, t_grid, 1, delta)
    out["f_j1"] = _rel(F[1], 1j * A1[0])
    out["f_j2"] = _rel(F[2], 2j * A1[1])
    return out


def _times_metric(p):
    """The rank-2 grid field p g for a scalar grid field p and the flat metric.

    Both diagonal components live on the same nodes as p; the mixed one
    vanishes.
    """
    out = GridField(2, p.N, np.zeros(0), p.domain)
    vals = np.zeros(out.space.size, dtype=np.result_type(p.values, float))
    for blk in out.space.blocks:
        if blk.index[0] == blk.index[1]:
            vals[blk.start:blk.stop] = p.values
    return GridField(2, p.N, vals, p.domain)


def sinogram_stats(geo, alpha, rays, n_T=41):
    """Light-ray sinogram over time shifts and its tau = 0 slice.

    Returns ``(max |L alpha|, scale, max |slice_0|, slice_scale)`` where
    the scales are the same integrals with |alpha(beta', ...)|.
    """
    rs = rays if isinstance(rays, RaySet) else RaySet(rays)
    T_grid = t_grid_for(alpha, rs, n_T)
    L, S = [], []
    for T in T_grid:
        vals = integrand(alpha, _shifted(rs.y, T), rs.u)
        L.append(rs.integrate(vals))
        S.append(rs.integrate(np.abs(vals)))
    L, S = np.array(L), np.array(S)
    w = _trapezoid_weights(T_grid)
    return (float(np.max(np.abs(L))), float(np.max(S)), float(np.max(np.abs(w @ L))),
            float(np.max(w @ S)))


def _shifted(y, T):
    out = y.copy()
    out[:, 0] += T
    return out


def theorem2_suite(geo, alpha, gauge_part=None, rays=None, n_rays=200, rng=None, step=0.01, N=128, n_t=41,
                   tol_sino=1e-5, tol_grid=0.15, detect_factor=10.0):
    """Report on a rank 1 or 2 spacetime tensor over a static geometry.

    ``gauge_part`` is the gauge-built component of ``alpha`` when known
    (``alpha`` itself for a pure gauge tensor); it calibrates the noise
    floor of the tau = 0 slice detection.  The report keys are

    * ``blocks_residual``: reassembly error of f dt + omega + b gbar,
    * ``sinogram_max``/``sinogram_relative``/``sinogram_zero``,
    * ``identities``: residuals from :func:`decomposition_identities`,
    * ``slice0_max``/``noise_floor``/``detected``: nonzero tau = 0 slice.
    """
    if not geo.static:
        raise ValueError("the tensor suite needs a static geometry")
    m = alpha.rank
    if m not in (1, 2):
        raise RankError(f"the suite handles ranks 1 and 2, got {m}")
    rng = rng if rng is not None else np.random.default_rng(0)
    if rays is None:
        samples = random_inflow(geo.conformal_manifold(), n_rays, rng)
        rays = RaySet(trace_rays(geo, samples, step=step))
    rs = rays if isinstance(rays, RaySet) else RaySet(rays)

    # (a) blocks, checked at the ray samples
    y = rs.y
    comps = alpha.components(y)
    g = geo.conformal_manifold().metric(y[:, 1:])
    f, omega, b = split_blocks(comps, m, g)
    blocks_res = float(np.max(np.abs(assemble_blocks(f, omega, b, m, g) - comps)))

    # (b) sinogram
    smax, scale, g0max, g0scale = sinogram_stats(geo, alpha, rs)
    report = {
        "rank": m,
        "blocks_residual": blocks_res,
        "sinogram_max": smax,
        "sinogram_relative": smax / scale if scale > 0 else 0.0,
        "sinogram_zero": bool(smax <= tol_sino * scale),
    }

    # (c) decomposition identities on time slices
    t_grid = np.linspace(alpha.t_min, alpha.t_max, n_t)
    ident = decomposition_identities(alpha, t_grid, N=N)
    report["identities"] = ident
    report["identities_pass"] = bool(max(ident.values()) <= tol_grid)

    # (d) tau = 0 slice detection
    if gauge_part is not None:
        floor = sinogram_stats(geo, gauge_part, rs)[2]
    else:
        floor = 0.0
    floor = max(floor, tol_sino * g0scale)
    report.update(slice0_max=g0max, noise_floor=floor,
                  detected=bool(g0max >= detect_factor * floor))
    return report
