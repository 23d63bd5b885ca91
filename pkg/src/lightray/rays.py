"""Batch ray integration: G-curves, null lifts, direct null geodesics.

All integrators share one fixed-step RK4 engine that advances a batch of
rays in lockstep, drops rays as they leave the manifold and afterwards
locates every exit by bisection on the step fraction.  A ray is stored as

* uniform samples ``s = 0, h, ..., k h`` (the last one still inside M),
* a tail midpoint and the exit point at ``s = k h + theta h / 2`` and
  ``s = k h + theta h``,

so that composite Simpson quadrature stays fourth order up to the exit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import TrappedRayError
from .geometry import christoffel_from_metric

MAX_STEPS = 1_000_000
EXIT_TOL = 1e-10


# --------------------------------------------------------------------------
# data types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class InflowSample:
    """Inward unit (for g_c) vector ``v`` at boundary point ``x``."""

    x: np.ndarray
    v: np.ndarray
    boundary_param: float = 0.0
    dir_param: float = 0.0


@dataclass
class InflowGrid:
    """A batch of inflow samples stored as arrays (``x``, ``v`` of shape (N, n))."""

    x: np.ndarray
    v: np.ndarray
    boundary_param: np.ndarray
    dir_param: np.ndarray

    def __len__(self):
        return len(self.x)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return InflowSample(self.x[i], self.v[i], float(self.boundary_param[i]),
                                float(self.dir_param[i]))
        return InflowGrid(self.x[i], self.v[i], self.boundary_param[i], self.dir_param[i])

    def samples(self):
        return [self[i] for i in range(len(self))]


def stack_samples(samples):
    """InflowGrid from a list of :class:`InflowSample`."""
    if isinstance(samples, InflowGrid):
        return samples
    if isinstance(samples, InflowSample):
        samples = [samples]
    return InflowGrid(np.array([s.x for s in samples], dtype=float),
                      np.array([s.v for s in samples], dtype=float),
                      np.array([s.boundary_param for s in samples], dtype=float),
                      np.array([s.dir_param for s in samples], dtype=float))


@dataclass
class LiftedRay:
    """A sampled curve beta(s) = (a(s), b(s)) with quadrature weights.

    ``s`` holds the uniform part plus the two tail samples; ``weights``
    integrate smooth functions of ``s`` over ``[0, exit_s]``.
    """

    s: np.ndarray
    a: np.ndarray
    b: np.ndarray
    bdot: np.ndarray
    adot: np.ndarray
    weights: np.ndarray
    exit_s: float
    sign: int = 1
    step: float = 0.0

    @property
    def s_grid(self):
        return self.s

    @property
    def point(self):
        """Spacetime samples (a, b)."""
        return np.concatenate([self.a[:, None], self.b], axis=1)

    @property
    def velocity(self):
        return np.concatenate([self.adot[:, None], self.bdot], axis=1)

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))

    def shifted(self, T):
        """The time-translated ray (a + T, b)."""
        return LiftedRay(self.s, self.a + T, self.b, self.bdot, self.adot, self.weights,
                         self.exit_s, self.sign, self.step)

    def to_csv(self, path):
        n = self.b.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "a"] + [f"b{i + 1}" for i in range(n)] + [f"bdot{i + 1}" for i in range(n)])
            for row in np.column_stack([self.s, self.a, self.b, self.bdot]):
                w.writerow([repr(float(v)) for v in row])


@dataclass
class RayBatch:
    """Padded storage for a batch of rays of different lengths.

    ``pos``/``vel``: (N, K+1, d) uniform samples, valid up to index ``k[i]``;
    ``tail_pos``/``tail_vel``: (N, 2, d) midpoint and exit samples.
    """

    pos: np.ndarray
    vel: np.ndarray
    k: np.ndarray
    theta: np.ndarray
    tail_pos: np.ndarray
    tail_vel: np.ndarray
    step: float
    trapped: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.k)

    @property
    def exit_s(self):
        return self.step * (self.k + self.theta)

    def flatten(self, which=None):
        """Concatenated samples of all (or selected) rays.

        Returns ``(ray_id, s, pos, vel)``; per ray the order is uniform
        samples, tail midpoint, exit.
        """
        idx = np.arange(len(self)) if which is None else np.asarray(which)
        K = self.pos.shape[1]
        k = self.k[idx]
        mask = np.arange(K)[None, :] <= k[:, None]
        ids_u = np.broadcast_to(idx[:, None], mask.shape)[mask]
        s_u = (np.arange(K)[None, :] * self.step * np.ones((len(idx), 1)))[mask]
        order_u = np.broadcast_to(np.arange(K)[None, :], mask.shape)[mask]
        pos_u = self.pos[idx][mask]
        vel_u = self.vel[idx][mask]
        s_t = self.step * (k[:, None] + self.theta[idx][:, None] * np.array([[0.5, 1.0]]))
        ids = np.concatenate([ids_u, np.repeat(idx, 2)])
        order = np.concatenate([order_u, (k[:, None] + np.array([[1, 2]])).ravel()])
        s = np.concatenate([s_u, s_t.ravel()])
        pos = np.concatenate([pos_u, self.tail_pos[idx].reshape(-1, self.pos.shape[2])])
        vel = np.concatenate([vel_u, self.tail_vel[idx].reshape(-1, self.pos.shape[2])])
        perm = np.lexsort((order, ids))
        return ids[perm], s[perm], pos[perm], vel[perm]

    def weights(self, which=None):
        """Quadrature weights aligned with :meth:`flatten`."""
        idx = np.arange(len(self)) if which is None else np.asarray(which)
        return np.concatenate([quadrature_weights(int(self.k[i]), self.step, float(self.theta[i]))
                               for i in idx])


def quadrature_weights(k, h, theta):
    """Weights for samples ``0, h, ..., k h, k h + theta h/2, k h + theta h``.

    Composite Simpson on the uniform part (3/8 rule on the last three
    intervals when ``k`` is odd) plus Simpson on the tail.
    """
    w = np.zeros(k + 3)
    if k >= 2:
        ke = k if k % 2 == 0 else k - 3
        if ke > 0:
            w[0:ke + 1:2] += 2.0
            w[1:ke:2] += 4.0
            w[0] -= 1.0
            w[ke] -= 1.0
            w[:ke + 1] *= h / 3.0
        if k % 2 == 1:
            w[ke:ke + 4] += 3.0 * h / 8.0 * np.array([1.0, 3.0, 3.0, 1.0])
    elif k == 1:
        # one uniform interval: quadratic through 0, h and the exit
        h0, h1 = h, theta * h
        tot = h0 + h1
        w[0] += tot / 6.0 * (2.0 - h1 / h0)
        w[1] += tot / 6.0 * tot * tot / (h0 * h1)
        w[k + 2] += tot / 6.0 * (2.0 - h0 / h1)
        return w
    ht = 0.5 * theta * h
    w[k] += ht / 3.0
    w[k + 1] += 4.0 * ht / 3.0
    w[k + 2] += ht / 3.0
    return w


def cumulative_quadrature(f, k, h, theta):
    """Running integral of samples laid out as in :func:`quadrature_weights`.

    Each interval is integrated with the quadratic through it and one
    neighbour, which keeps the running integral third order per step.
    """
    f = np.asarray(f, dtype=float)
    out = np.zeros(k + 3)
    fu = f[:k + 1]
    if k >= 2:
        inc = np.empty(k)
        inc[:-1] = h / 12.0 * (5.0 * fu[:-2] + 8.0 * fu[1:-1] - fu[2:])
        inc[-1] = h / 12.0 * (-fu[-3] + 8.0 * fu[-2] + 5.0 * fu[-1])
        out[1:k + 1] = np.cumsum(inc)
    elif k == 1:
        out[1] = 0.5 * h * (fu[0] + fu[1])
    ht = 0.5 * theta * h
    f0, f1, f2 = f[k], f[k + 1], f[k + 2]
    out[k + 1] = out[k] + ht / 12.0 * (5.0 * f0 + 8.0 * f1 - f2)
    out[k + 2] = out[k] + ht / 3.0 * (f0 + 4.0 * f1 + f2)
    return out


# --------------------------------------------------------------------------
# engine
# --------------------------------------------------------------------------

def _rk4(acc, x, v, h):
    h = np.asarray(h, dtype=float)
    hh = h[..., None] if h.ndim else h
    a1 = acc(x, v)
    x2, v2 = x + 0.5 * hh * v, v + 0.5 * hh * a1
    a2 = acc(x2, v2)
    x3, v3 = x + 0.5 * hh * v2, v + 0.5 * hh * a2
    a3 = acc(x3, v3)
    x4, v4 = x + hh * v3, v + hh * a3
    a4 = acc(x4, v4)
    xn = x + hh / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
    vn = v + hh / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return xn, vn


def integrate_batch(acc, exit_fn, x0, v0, step, max_steps=MAX_STEPS, on_trapped="raise"):
    """Advance second-order ODEs ``x'' = acc(x, x')`` until ``exit_fn(x) > 0``.

    ``x0``/``v0`` have shape (N, d).  Returns a :class:`RayBatch`.  Rays
    still inside after ``max_steps`` raise :class:`TrappedRayError`, or are
    flagged in ``RayBatch.trapped`` when ``on_trapped="flag"``.
    """
    x = np.array(x0, dtype=float, ndmin=2)
    v = np.array(v0, dtype=float, ndmin=2)
    N, d = x.shape
    active = np.arange(N)
    rec_pos, rec_vel, rec_id = [x.copy()], [v.copy()], [active.copy()]
    k = np.zeros(N, dtype=int)
    pre_x = np.empty_like(x)
    pre_v = np.empty_like(v)
    xa, va = x, v
    steps = 0
    while len(active) and steps < max_steps:
        xn, vn = _rk4(acc, xa, va, step)
        steps += 1
        out = exit_fn(xn) > 0.0
        if np.any(out):
            left = active[out]
            pre_x[left] = xa[out]
            pre_v[left] = va[out]
            k[left] = steps - 1
            keep = ~out
            active, xn, vn = active[keep], xn[keep], vn[keep]
        if len(active):
            rec_pos.append(xn)
            rec_vel.append(vn)
            rec_id.append(active)
        xa, va = xn, vn
    trapped = np.zeros(N, dtype=bool)
    if len(active):
        if on_trapped == "raise":
            raise TrappedRayError(f"{len(active)} ray(s) still inside after {max_steps} steps")
        trapped[active] = True
        pre_x[active] = xa
        pre_v[active] = va
        k[active] = steps

    K = int(k.max())
    pos = np.full((N, K + 1, d), np.nan)
    vel = np.full((N, K + 1, d), np.nan)
    for j, (ids, p, q) in enumerate(zip(rec_id, rec_pos, rec_vel)):
        if j > K:
            break
        sel = k[ids] >= j
        pos[ids[sel], j] = p[sel]
        vel[ids[sel], j] = q[sel]

    # exit location: bisection on the step fraction, all rays at once
    lo = np.zeros(N)
    hi = np.ones(N)
    live = ~trapped
    n_iter = int(np.ceil(np.log2(max(step, 1e-300) * 10.0 / EXIT_TOL))) + 2
    if np.any(live):
        xs, vs = pre_x[live], pre_v[live]
        lo_l, hi_l = lo[live], hi[live]
        for _ in range(max(n_iter, 1)):
            mid = 0.5 * (lo_l + hi_l)
            xm, _ = _rk4(acc, xs, vs, mid * step)
            outside = exit_fn(xm) > 0.0
            hi_l = np.where(outside, mid, hi_l)
            lo_l = np.where(outside, lo_l, mid)
        lo[live], hi[live] = lo_l, hi_l
    theta = np.where(live, 0.5 * (lo + hi), 1.0)
    theta = np.maximum(theta, 1e-14)
    tail_pos = np.empty((N, 2, d))
    tail_vel = np.empty((N, 2, d))
    for j, frac in enumerate((0.5, 1.0)):
        xt, vt = _rk4(acc, pre_x, pre_v, frac * theta * step)
        tail_pos[:, j] = xt
        tail_vel[:, j] = vt
    return RayBatch(pos, vel, k, theta, tail_pos, tail_vel, step, trapped)


def default_step(man):
    """Integrator step: 1e-3 times the chart diameter."""
    return 1e-3 * man.diameter


# --------------------------------------------------------------------------
# G-curves, geodesics, lifts
# --------------------------------------------------------------------------

def _g_curve_acc(geo, sign):
    if geo.trivial:
        return lambda x, v: np.zeros_like(v)

    def acc(x, v):
        p = geo.pieces(x)
        gamma = christoffel_from_metric(p["g_c"], p["dg_c"])
        geod = -np.einsum("...ijk,...j,...k->...i", gamma, v, v)
        if geo.static:
            return geod
        return geod + geo.g_field(x, v, sign=sign, p=p, gamma_c=gamma)

    return acc


def _geodesic_acc(man):
    def acc(x, v):
        return -np.einsum("...ijk,...j,...k->...i", man.christoffel(x), v, v)

    return acc


def integrate_g_curves(geo, x0, v0, step=None, sign=1, max_steps=MAX_STEPS, on_trapped="raise"):
    """Batch G-curves from points ``x0`` with velocities ``v0`` (both (N, n))."""
    step = default_step(geo.base) if step is None else step
    return integrate_batch(_g_curve_acc(geo, sign), geo.base.boundary, x0, v0, step,
                           max_steps, on_trapped)


def integrate_g_curve(geo, start, step=None, sign=1, max_steps=MAX_STEPS):
    """Single G-curve from ``start = (point, vector)``; returns a one-ray batch."""
    x, v = start
    return integrate_g_curves(geo, np.atleast_2d(x), np.atleast_2d(v), step, sign, max_steps)


def integrate_geodesics(man, x0, v0, step=None, max_steps=MAX_STEPS, on_trapped="raise"):
    """Batch geodesics of a :class:`~lightray.geometry.ChartedManifold`."""
    step = default_step(man) if step is None else step
    return integrate_batch(_geodesic_acc(man), man.boundary, x0, v0, step, max_steps, on_trapped)


def lift_batch(geo, batch, a0=0.0, sign=1):
    """Null lifts of all curves in ``batch``; returns a list of :class:`LiftedRay`."""
    ids, s, pos, vel = batch.flatten()
    adot = geo.adot(pos, vel, sign)
    a0 = np.broadcast_to(np.asarray(a0, dtype=float), (len(batch),))
    rays = []
    bounds = np.searchsorted(ids, np.arange(len(batch) + 1))
    for i in range(len(batch)):
        sl = slice(bounds[i], bounds[i + 1])
        k, th = int(batch.k[i]), float(batch.theta[i])
        a = a0[i] + cumulative_quadrature(adot[sl], k, batch.step, th)
        rays.append(LiftedRay(s[sl], a, pos[sl], vel[sl], adot[sl],
                              quadrature_weights(k, batch.step, th), float(batch.exit_s[i]),
                              sign, batch.step))
    return rays


def lift_ray(geo, curve, a0=0.0, sign=1):
    """Null lift of a single G-curve (a one-ray batch)."""
    return lift_batch(geo, curve, a0, sign)[0]


def trace_rays(geo, samples, a0=0.0, step=None, sign=1, max_steps=MAX_STEPS):
    """G-curves from inflow samples, lifted; list of :class:`LiftedRay`."""
    grid = stack_samples(samples)
    batch = integrate_g_curves(geo, grid.x, grid.v, step, sign, max_steps)
    return lift_batch(geo, batch, a0, sign)


def null_direction(geo, y, bdot, sign=1):
    """Spacetime vector (adot, bdot) on the null cone of gbar_c at ``y``."""
    y = np.asarray(y, dtype=float)
    bdot = np.asarray(bdot, dtype=float)
    return np.concatenate([geo.adot(y[..., 1:], bdot, sign)[..., None], bdot], axis=-1)


def project_null(geo, y, u):
    """Replace the time component of ``u`` so that gbar_c(u, u) = 0 (same branch)."""
    u = np.asarray(u, dtype=float)
    p = geo.pieces(np.asarray(y)[..., 1:])
    ev = np.einsum("...i,...i->...", p["eta_c"], u[..., 1:])
    vv = np.einsum("...i,...ij,...j->...", u[..., 1:], p["g_c"], u[..., 1:])
    root = np.sqrt(ev * ev + vv)
    plus, minus = ev + root, ev - root
    t = np.where(np.abs(u[..., 0] - plus) <= np.abs(u[..., 0] - minus), plus, minus)
    return np.concatenate([t[..., None], u[..., 1:]], axis=-1)


def integrate_spacetime_geodesics(christoffel_fn, base, y0, u0, step, sign=1,
                                  max_steps=MAX_STEPS):
    """Geodesics of a Lorentzian metric on R x M until the spatial part leaves M.

    ``christoffel_fn(y)`` returns the spacetime Christoffel symbols.
    Returns a list of :class:`LiftedRay`.
    """
    y0 = np.array(y0, dtype=float, ndmin=2)
    u0 = np.array(u0, dtype=float, ndmin=2)

    def acc(y, u):
        return -np.einsum("...ijk,...j,...k->...i", christoffel_fn(y), u, u)

    batch = integrate_batch(acc, lambda y: base.boundary(y[..., 1:]), y0, u0, step, max_steps)
    ids, s, pos, vel = batch.flatten()
    bounds = np.searchsorted(ids, np.arange(len(batch) + 1))
    rays = []
    for i in range(len(batch)):
        sl = slice(bounds[i], bounds[i + 1])
        rays.append(LiftedRay(s[sl], pos[sl, 0], pos[sl, 1:], vel[sl, 1:], vel[sl, 0],
                              quadrature_weights(int(batch.k[i]), step, float(batch.theta[i])),
                              float(batch.exit_s[i]), sign, step))
    return rays


def integrate_null_geodesics_direct(geo, y0, u0, step=None, max_steps=MAX_STEPS):
    """Full spacetime null geodesics of gbar_c from (y0, u0), both (N, n+1).

    ``u0`` is first projected onto the null cone (keeping the nearer
    branch).  Returns a list of :class:`LiftedRay`.
    """
    step = default_step(geo.base) if step is None else step
    y0 = np.array(y0, dtype=float, ndmin=2)
    u0 = project_null(geo, y0, np.array(u0, dtype=float, ndmin=2))
    sign = 1 if np.all(u0[:, 0] > 0) else -1
    return integrate_spacetime_geodesics(geo.spacetime_christoffel, geo.base, y0, u0, step,
                                         sign, max_steps)


def null_defect(geo, ray):
    """sup_s |gbar_c(beta', beta')| / sup_s |b'|^2_{g_c} along a ray."""
    y = ray.point
    u = ray.velocity
    lor = geo.assemble(conformal=True)
    vals = np.abs(lor.eval(y, u, u))
    scale = np.max(np.einsum("...i,...ij,...j->...", ray.bdot, geo.pieces(ray.b)["g_c"], ray.bdot))
    return float(np.max(vals) / scale)


def hausdorff(p, q):
    """Symmetric Hausdorff distance between two point clouds."""
    from scipy.spatial.distance import directed_hausdorff

    return max(directed_hausdorff(p, q)[0], directed_hausdorff(q, p)[0])


def reversed_branch(geo, ray, step=None):
    """Negative-branch curve started at the exit of ``ray`` with reversed velocity."""
    batch = integrate_g_curves(geo, ray.b[-1:], -ray.bdot[-1:], step or ray.step, sign=-1)
    return lift_batch(geo, batch, a0=ray.a[-1], sign=-1)[0]


# --------------------------------------------------------------------------
# inflow sampling
# --------------------------------------------------------------------------

def boundary_params(man, n_points):
    """Uniform boundary parameters (angles for discs, arclength on squares)."""
    if man.boundary_kind == "square":
        return 8.0 * (np.arange(n_points) + 0.5) / n_points
    return 2.0 * np.pi * np.arange(n_points) / n_points


def direction_params(n_dirs):
    """Midpoint angles in (-pi/2, pi/2) measured from the inward normal."""
    return -0.5 * np.pi + (np.arange(n_dirs) + 0.5) * np.pi / n_dirs


def inflow_frame(man, x):
    """(inward unit normal, unit tangent) at boundary points, orthonormal for ``man``."""
    nu = man.outward_normal(x)
    e1 = -nu
    g = man.metric(x)
    t = np.stack([-nu[..., 1], nu[..., 0]], axis=-1)
    t = t - np.einsum("...i,...ij,...j->...", t, g, e1)[..., None] * e1
    t = t / np.sqrt(np.einsum("...i,...ij,...j->...", t, g, t))[..., None]
    return e1, t


def inflow_from_params(man, theta_b, psi):
    """Inflow samples for matching arrays of boundary and direction parameters."""
    theta_b = np.asarray(theta_b, dtype=float)
    psi = np.asarray(psi, dtype=float)
    x = man.boundary_points(theta_b)
    e1, e2 = inflow_frame(man, x)
    v = np.cos(psi)[..., None] * e1 + np.sin(psi)[..., None] * e2
    return InflowGrid(x, v, theta_b, psi)


def sample_inflow(man, counts):
    """Fan-beam grid of inflow samples: boundary parameter x direction angle.

    ``man`` is the manifold whose metric normalizes the directions (pass
    ``geo.conformal_manifold()`` for g_c).  Returns an :class:`InflowGrid`
    ordered boundary-major.
    """
    n_points, n_dirs = counts
    tb, ps = np.meshgrid(boundary_params(man, n_points), direction_params(n_dirs), indexing="ij")
    return inflow_from_params(man, tb.ravel(), ps.ravel())


def random_inflow(man, n, rng, max_angle=0.45 * np.pi):
    """``n`` random inflow samples (directions within ``max_angle`` of the normal)."""
    if man.boundary_kind == "square":
        tb = rng.uniform(0.0, 8.0, n)
    else:
        tb = rng.uniform(0.0, 2.0 * np.pi, n)
    return inflow_from_params(man, tb, rng.uniform(-max_angle, max_angle, n))


# --------------------------------------------------------------------------
# convex foliation check
# --------------------------------------------------------------------------

@dataclass
class FoliationReport:
    passed: bool
    worst_margin: float
    n_tangencies: int
    failures: list
    orientation: int = 1
    degenerate: bool = False
    margins: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {"pass": bool(self.passed), "worst_margin": float(self.worst_margin),
                "n_tangencies": int(self.n_tangencies), "failures": self.failures,
                "orientation": int(self.orientation), "degenerate": bool(self.degenerate)}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def parse_rho(text):
    """Level function profiles: ``"1-r2"`` (1 - |x|^2), ``"r2"``, ``"const(c)"``."""
    text = str(text).strip()
    if text == "1-r2":
        return lambda x: (1.0 - np.sum(x * x, -1), -2.0 * x)
    if text == "r2":
        return lambda x: (np.sum(x * x, -1), 2.0 * x)
    if text.startswith("const"):
        c = float(text[text.index("(") + 1:text.rindex(")")]) if "(" in text else 0.0
        return lambda x: (np.full(np.shape(x)[:-1], c), np.zeros(np.shape(x)))
    raise ValueError(f"unknown rho profile {text!r}")


def foliation_check(geo, rho, n_curves, rng=None, step=None, threshold_factor=1e-6):
    """Convexity of G-curves tangent to the level sets of ``rho``.

    ``rho(x) -> (value, gradient)``.  At every tangency of a curve with a
    level set (a sign change of d/ds rho(b(s)) or a sample where it is
    below the threshold) the second difference of rho(b(s)) must be
    positive.  The level function is oriented so that it is largest on the
    boundary; a constant ``rho`` yields a degenerate (failing) report.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    man_c = geo.conformal_manifold()
    probe = np.concatenate([man_c.boundary_points(boundary_params(man_c, 64)),
                            0.5 * man_c.boundary_points(boundary_params(man_c, 16)),
                            np.zeros((1, geo.dim))])
    rv, rg = rho(probe)
    grad_sup = float(np.max(np.linalg.norm(rg, axis=-1)))
    if grad_sup == 0.0 or np.ptp(rv) == 0.0:
        return FoliationReport(False, float("nan"), 0,
                               [{"reason": "degenerate level function: d rho vanishes"}],
                               degenerate=True)
    n_b = len(probe) - 17
    orientation = 1 if np.mean(rv[:n_b]) >= rv[-1] else -1

    grid = random_inflow(man_c, n_curves, rng)
    batch = integrate_g_curves(geo, grid.x, grid.v, step, on_trapped="flag")
    ids, s, pos, vel = batch.flatten()
    rv, rg = rho(pos)
    rv = orientation * rv
    drho = orientation * np.einsum("...i,...i->...", rg, vel)
    bdot_sup = float(np.max(np.linalg.norm(vel, axis=-1)))
    thresh = threshold_factor * grid_sup_scale(grad_sup, bdot_sup)
    h = batch.step
    failures = []
    margins = []
    worst = np.inf
    n_tan = 0
    bounds = np.searchsorted(ids, np.arange(len(batch) + 1))
    for i in range(len(batch)):
        if batch.trapped[i]:
            failures.append({"curve": i, "reason": "trapped"})
            continue
        k = int(batch.k[i])
        sl = slice(bounds[i], bounds[i] + k + 1)      # uniform samples only
        r, d = rv[sl], drho[sl]
        cand = set(np.nonzero(np.abs(d[1:-1]) < thresh)[0] + 1)
        flips = np.nonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0)[0]
        for j in flips:
            near = j if abs(d[j]) <= abs(d[j + 1]) else j + 1
            cand.add(int(min(max(near, 1), k - 1)))
        for j in sorted(cand):
            if j < 1 or j > k - 1:
                continue
            n_tan += 1
            second = (r[j + 1] - 2.0 * r[j] + r[j - 1]) / (h * h)
            worst = min(worst, second)
            margins.append(float(second))
            if not second > 0.0:
                failures.append({"curve": i, "s": float(j * h), "point": pos[sl][j].tolist(),
                                 "second_derivative": float(second)})
    worst = float(worst) if n_tan else float("nan")
    return FoliationReport(not failures, worst, n_tan, failures, orientation, margins=margins)


def grid_sup_scale(grad_sup, bdot_sup):
    return grad_sup * bdot_sup


def foliation_threshold_sweep(make_geo, rho, eps_values, n_curves, rng_seed=0, step=None):
    """Run :func:`foliation_check` over a parameter sweep.

    ``make_geo(eps)`` builds the geometry (it may raise a causality error,
    which counts as failure).  Returns ``(results, first_failure)``.
    """
    from .errors import CausalityViolationError

    results = []
    first_fail = None
    for eps in eps_values:
        try:
            rep = foliation_check(make_geo(eps), rho, n_curves, np.random.default_rng(rng_seed), step)
            ok, margin = rep.passed, rep.worst_margin
            reason = "" if ok else "convexity"
        except CausalityViolationError:
            ok, margin, reason = False, float("nan"), "causality"
        results.append({"eps": float(eps), "pass": bool(ok), "worst_margin": margin, "reason": reason})
        if not ok and first_fail is None:
            first_fail = float(eps)
    return results, first_fail
