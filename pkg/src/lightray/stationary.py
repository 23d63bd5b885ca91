"""Stationary Lorentzian metrics on R x M and their conformal rescaling.

A stationary metric in normal form reads

    gbar = -(kappa - |eta|^2) dt^2 + dt (x) eta + eta (x) dt + g

and ``gbar_c = c * gbar`` with ``c = 1 / (kappa - |eta|^2)`` has unit
``tt`` component.  Spacetime points are ``(..., n+1)`` arrays with index 0
the time coordinate; the metric components never depend on ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CausalityViolationError, ConfigError, RankError
from .geometry import (ChartedManifold, SymTensorField, christoffel_from_metric, fd_gradient,
                       get_manifold, i_op, ji_inverse, j_op, parse_id, symmetrized_derivative)


# --------------------------------------------------------------------------
# kappa and eta profiles
# --------------------------------------------------------------------------

def parse_kappa(text):
    """``"1.0"`` or ``"bump(a,w)"`` = 1 + a exp(-|x|^2/w^2); returns x -> (value, grad)."""
    text = str(text).strip()
    try:
        const = float(text)
    except ValueError:
        const = None
    if const is not None:
        if const <= 0:
            raise ValueError("kappa must be positive")

        def constant(x):
            x = np.asarray(x)
            return np.full(x.shape[:-1], const), np.zeros(x.shape)

        constant.is_constant = True
        return constant
    name, args = parse_id(text)
    if name == "bump" and len(args) == 2:
        a, w = args

        def bump(x):
            x = np.asarray(x)
            e = np.exp(-np.sum(x * x, axis=-1) / w ** 2)
            return 1.0 + a * e, (-2.0 * a / w ** 2) * e[..., None] * x

        return bump
    raise ValueError(f"unknown kappa profile {text!r}")


def parse_eta(text):
    """Covector profiles on a 2D chart; returns x -> (eta, jac) with jac[m, k] = d_k eta_m."""
    name, args = parse_id(text)
    eps = args[0] if args else 0.0
    if name == "zero" and not args:
        mat = np.zeros((2, 2))
    elif name == "rotation" and len(args) == 1:
        mat = np.array([[0.0, -eps], [eps, 0.0]])      # eps * (-y, x)
    elif name == "shear" and len(args) == 1:
        mat = np.array([[0.0, eps], [0.0, 0.0]])       # eps * (y, 0)
    elif name == "gradient" and len(args) == 1:
        mat = np.array([[0.0, eps], [eps, 0.0]])       # eps * d(xy), closed
    else:
        raise ValueError(f"unknown eta profile {text!r}")

    def eta(x):
        x = np.asarray(x)
        return x @ mat.T, np.broadcast_to(mat, x.shape[:-1] + (2, 2)).copy()

    eta.is_zero = name == "zero" or eps == 0.0
    return eta


# --------------------------------------------------------------------------
# Lorentzian metric container
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LorentzMetric:
    """A Lorentzian metric on R x M given by matrix and derivative functions.

    ``grad_fn(y)[..., A, B, C] = d_C gbar_AB`` with ``C = 0`` the time slot.
    """

    matrix_fn: Callable
    grad_fn: Callable
    christoffel_fn: Optional[Callable] = None

    def matrix(self, y):
        return self.matrix_fn(np.asarray(y, dtype=float))

    metric = matrix

    def metric_grad(self, y, h=None):
        if h is not None:
            return fd_gradient(self.matrix_fn, y, h)
        return self.grad_fn(np.asarray(y, dtype=float))

    def christoffel(self, y):
        if self.christoffel_fn is not None:
            return self.christoffel_fn(np.asarray(y, dtype=float))
        return christoffel_from_metric(self.matrix(y), self.metric_grad(y))

    def inverse_metric(self, y):
        return np.linalg.inv(self.matrix(y))

    def tt(self, y):
        return self.matrix(y)[..., 0, 0]

    def tx(self, y):
        return self.matrix(y)[..., 0, 1:]

    def xx(self, y):
        return self.matrix(y)[..., 1:, 1:]

    def eval(self, y, u, w):
        return np.einsum("...a,...ab,...b->...", u, self.matrix(y), w)

    def scaled(self, c_fn):
        """The metric c * gbar for a spacetime scalar ``c_fn(y) -> (value, grad)``."""

        def matrix(y):
            return c_fn(y)[0][..., None, None] * self.matrix(y)

        def grad(y):
            c, dc = c_fn(y)
            return (dc[..., None, None, :] * self.matrix(y)[..., None]
                    + c[..., None, None, None] * self.metric_grad(y))

        return LorentzMetric(matrix, grad)


# --------------------------------------------------------------------------
# stationary geometry
# --------------------------------------------------------------------------

def probe_points(man, n=32):
    """Deterministic n x n chart grid restricted to the manifold."""
    if man.boundary_kind == "polar":
        r = (np.arange(n) + 0.5) / n
        th = 2.0 * np.pi * np.arange(n) / n
        R, TH = np.meshgrid(r, th, indexing="ij")
        return np.stack([R.ravel(), TH.ravel()], axis=-1)
    s = np.linspace(-1.0, 1.0, n)
    X, Y = np.meshgrid(s, s, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    pts = pts[man.inside(pts)]
    if man.boundary_kind == "disc":
        # the closed disc: the lattice never lands on the unit circle
        th = 2.0 * np.pi * np.arange(4 * n) / (4 * n)
        pts = np.concatenate([pts, np.stack([np.cos(th), np.sin(th)], axis=-1)])
    return pts


@dataclass(frozen=True)
class StationaryGeometry:
    """(kappa, eta, g) on M, with derived c, g_c and eta_c.

    ``kappa(x) -> (value, grad)`` and ``eta(x) -> (covector, jac)`` with
    ``jac[..., m, k] = d_k eta_m``.  Construction probes a 32 x 32 chart grid
    and raises :class:`CausalityViolationError` if kappa - |eta|^2 <= 0.
    """

    base: ChartedManifold
    kappa: Callable
    eta: Callable
    name: str = "stationary"
    static: bool = False
    conformal: bool = True
    min_margin: float = field(default=0.0, compare=False)

    def __post_init__(self):
        pts = probe_points(self.base)
        margin = float(np.min(self._Q(pts)[0]))
        if not margin > 0.0:
            raise CausalityViolationError(
                f"kappa - |eta|^2 = {margin:.3g} <= 0 on the probe grid of {self.name}")
        object.__setattr__(self, "min_margin", margin)

    @property
    def dim(self):
        return self.base.dim

    @property
    def trivial(self):
        """True for flat g, constant kappa and eta = 0: rays are straight lines."""
        return (self.static and self.base.name.startswith("flat")
                and bool(getattr(self.kappa, "is_constant", False)))

    # -- scalar pieces ---------------------------------------------------
    def _Q(self, x):
        x = np.asarray(x, dtype=float)
        k, dk = self.kappa(x)
        e, de = self.eta(x)
        g = self.base.metric(x)
        dg = self.base.metric_grad(x)
        ginv = np.linalg.inv(g)
        dginv = -np.einsum("...ia,...abk,...bj->...ijk", ginv, dg, ginv)
        e_up = np.einsum("...ij,...j->...i", ginv, e)
        Q = k - np.einsum("...i,...i->...", e, e_up)
        dQ = (dk - 2.0 * np.einsum("...a,...ak->...k", e_up, de)
              - np.einsum("...a,...abk,...b->...k", e, dginv, e))
        return Q, dQ, k, dk, e, de, g, dg

    def pieces(self, x):
        """Everything derived from (kappa, eta, g) at ``x``, with chart derivatives."""
        Q, dQ, k, dk, e, de, g, dg = self._Q(x)
        c = 1.0 / Q
        dc = -dQ / (Q * Q)[..., None]
        g_c = c[..., None, None] * g
        dg_c = dc[..., None, None, :] * g[..., None] + c[..., None, None, None] * dg
        eta_c = c[..., None] * e
        deta_c = dc[..., None, :] * e[..., None] + c[..., None, None] * de
        g_c_inv = np.linalg.inv(g_c)
        return {
            "Q": Q, "dQ": dQ, "kappa": k, "c": c, "dc": dc, "g": g, "dg": dg,
            "g_c": g_c, "dg_c": dg_c, "g_c_inv": g_c_inv, "eta_c": eta_c, "deta_c": deta_c,
            "eta_sharp": np.einsum("...ij,...j->...i", g_c_inv, eta_c), "q": Q / k,
        }

    def c(self, x):
        return 1.0 / self._Q(x)[0]

    # -- the spatial manifold (M, g_c) ----------------------------------
    def conformal_manifold(self):
        """(M, g_c) as a charted manifold with exact metric derivatives."""

        def metric(x):
            return self.pieces(x)["g_c"]

        def metric_grad(x):
            return self.pieces(x)["dg_c"]

        return self.base.with_metric(f"{self.name}:g_c", metric, metric_grad_fn=metric_grad)

    # -- spacetime metrics -----------------------------------------------
    def _spacetime_blocks(self, y, conformal):
        y = np.asarray(y, dtype=float)
        x = y[..., 1:]
        p = self.pieces(x)
        n = self.dim
        mat = np.empty(y.shape[:-1] + (n + 1, n + 1))
        grad = np.zeros(y.shape[:-1] + (n + 1, n + 1, n + 1))
        if conformal:
            mat[..., 0, 0] = -1.0
            mat[..., 0, 1:] = p["eta_c"]
            mat[..., 1:, 0] = p["eta_c"]
            mat[..., 1:, 1:] = p["g_c"]
            grad[..., 0, 1:, 1:] = p["deta_c"]
            grad[..., 1:, 0, 1:] = p["deta_c"]
            grad[..., 1:, 1:, 1:] = p["dg_c"]
        else:
            e = p["eta_c"] / p["c"][..., None]
            _, _, _, _, _, de, _, _ = self._Q(x)
            mat[..., 0, 0] = -p["Q"]
            mat[..., 0, 1:] = e
            mat[..., 1:, 0] = e
            mat[..., 1:, 1:] = p["g"]
            grad[..., 0, 0, 1:] = -p["dQ"]
            grad[..., 0, 1:, 1:] = de
            grad[..., 1:, 0, 1:] = de
            grad[..., 1:, 1:, 1:] = p["dg"]
        return mat, grad

    def assemble(self, conformal=True):
        """gbar (``conformal=False``) or gbar_c = c * gbar as a :class:`LorentzMetric`."""
        return LorentzMetric(lambda y: self._spacetime_blocks(y, conformal)[0],
                             lambda y: self._spacetime_blocks(y, conformal)[1])

    def spacetime_christoffel(self, y):
        """Christoffel symbols of gbar_c at spacetime points."""
        mat, grad = self._spacetime_blocks(y, True)
        return christoffel_from_metric(mat, grad)

    def inverse_conformal_metric(self, x):
        """Closed-form block inverse of gbar_c at spatial points ``x``."""
        p = self.pieces(x)
        n = self.dim
        q = p["q"]
        es = p["eta_sharp"]
        out = np.empty(np.shape(q) + (n + 1, n + 1))
        out[..., 0, 0] = -q
        out[..., 0, 1:] = q[..., None] * es
        out[..., 1:, 0] = q[..., None] * es
        out[..., 1:, 1:] = p["g_c_inv"] - q[..., None, None] * np.einsum("...i,...j->...ij", es, es)
        return out

    # -- null lift and the G field --------------------------------------
    def adot(self, x, v, sign=1, p=None):
        """Time speed of the null lift: eta_c v +/- sqrt((eta_c v)^2 + |v|^2_{g_c})."""
        p = self.pieces(x) if p is None else p
        ev = np.einsum("...i,...i->...", p["eta_c"], v)
        vv = np.einsum("...i,...ij,...j->...", v, p["g_c"], v)
        return ev + sign * np.sqrt(ev * ev + vv)

    def g_field(self, x, v, sign=1, p=None, gamma_c=None):
        """Forcing term G(x, v) of the projected null geodesic equation.

        ``gamma_c`` (Christoffels of g_c at x) may be passed to avoid
        recomputation.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        p = self.pieces(x) if p is None else p
        if gamma_c is None:
            gamma_c = christoffel_from_metric(p["g_c"], p["dg_c"])
        es = p["eta_sharp"]
        q = p["q"]
        de = p["deta_c"]
        # (nabla_v eta_c) v
        nab = (np.einsum("...mk,...k,...m->...", de, v, v)
               - np.einsum("...lkm,...k,...m,...l->...", gamma_c, v, v, p["eta_c"]))
        # D[m, k] = d_k eta_m - d_m eta_k ; (D v)_m = D[m, k] v^k
        D = de - np.swapaxes(de, -1, -2)
        Dv = np.einsum("...mk,...k->...m", D, v)
        F = (np.einsum("...ij,...j->...i", p["g_c_inv"], Dv)
             - (q * np.einsum("...i,...i->...", es, Dv))[..., None] * es)
        a = self.adot(x, v, sign, p)
        return -(q * nab)[..., None] * es - a[..., None] * F

    def g_field_oracle(self, x, v, sign=1, h=None):
        """G from the Christoffel difference, with finite-difference spacetime Christoffels."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        y = np.concatenate([np.zeros(x.shape[:-1] + (1,)), x], axis=-1)
        h = 1e-4 * self.base.diameter if h is None else h
        lor = self.assemble(conformal=True)
        gbar = christoffel_from_metric(lor.matrix(y), lor.metric_grad(y, h=h))
        gc = self.conformal_manifold().christoffel(x, closed_form=False, h=h)
        a = self.adot(x, v, sign)
        return (np.einsum("...ijk,...j,...k->...i", gc - gbar[..., 1:, 1:, 1:], v, v)
                - 2.0 * a[..., None] * np.einsum("...ik,...k->...i", gbar[..., 1:, 0, 1:], v))


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------

GEOMETRY_IDS = ("minkowski", "rotation(0.1)", "conformal-minkowski", "conformal-rotation(0.1)")


def make_geometry(base="flat-disc", kappa="1.0", eta="zero", name=None, conformal=True):
    """Build a :class:`StationaryGeometry` from profile strings."""
    man = get_manifold(base)
    eta_fn = parse_eta(eta)
    return StationaryGeometry(man, parse_kappa(kappa), eta_fn,
                              name=name or f"{base}|{kappa}|{eta}",
                              static=bool(getattr(eta_fn, "is_zero", False)), conformal=conformal)


def get_geometry(ident):
    """Registered stationary geometry by id, or from a config block (dict)."""
    if isinstance(ident, dict):
        block = ident
        if block.get("kind", "stationary") != "stationary":
            raise ConfigError("geometry.kind", f"unsupported kind {block.get('kind')!r}")
        try:
            return make_geometry(block.get("base", "flat-disc"), block.get("kappa", "1.0"),
                                 block.get("eta", "zero"), conformal=bool(block.get("conformal", True)))
        except (KeyError, ValueError) as exc:
            raise ConfigError("geometry", str(exc)) from None
    name, args = parse_id(ident)
    if name == "minkowski" and not args:
        return make_geometry(name="minkowski")
    if name == "rotation" and len(args) == 1:
        return make_geometry(eta=f"rotation({args[0]!r})", name=f"rotation({args[0]:g})")
    if name == "conformal-minkowski" and not args:
        return make_geometry("conformal-disc(0.2)", "bump(0.3,0.5)", "zero", name=name)
    if name == "conformal-rotation" and len(args) == 1:
        return make_geometry("conformal-disc(0.2)", "bump(0.3,0.5)", f"rotation({args[0]!r})",
                             name=f"conformal-rotation({args[0]:g})")
    raise KeyError(f"unknown geometry id {ident!r}")


# --------------------------------------------------------------------------
# conformal change of the symmetrized derivative
# --------------------------------------------------------------------------

def _scaled_metric_fns(metric, c_fn):
    def mat(y):
        return c_fn(y)[0][..., None, None] * metric.metric(y)

    return mat


def conformal_gauge_parts(metric, T, c_fn, y, h=1e-5):
    """Both sides of the conformal change formula for d^s at points ``y``.

    ``metric`` provides ``metric(y)``/``metric_grad(y)``; ``c_fn(y) ->
    (value, grad)`` is the positive conformal factor.  Returns ``(D, U)``
    where ``D = c^{1-m} d~^s T - d^s(c^{1-m} T)`` (tilde: the metric
    ``c * metric``, Christoffels by finite differences of the scaled matrix)
    and ``U = (j i)^{-1} j D`` (``None`` for m = 1).
    """
    y = np.asarray(y, dtype=float)
    r = T.rank
    m = r + 1
    c, _ = c_fn(y)
    weight = c ** (1 - m)
    g = metric.metric(y)
    ginv = np.linalg.inv(g)
    scaled = _scaled_metric_fns(metric, c_fn)
    gamma_t = christoffel_from_metric(scaled(y), fd_gradient(scaled, y, h))
    gamma = christoffel_from_metric(g, metric.metric_grad(y))
    comps = T.components(y)
    lhs = weight.reshape(weight.shape + (1,) * m) * symmetrized_derivative(
        comps, T.gradient(y), gamma_t, r)

    def weighted(z):
        w = c_fn(z)[0] ** (1 - m)
        return w.reshape(w.shape + (1,) * r) * T.components(z)

    rhs = symmetrized_derivative(weight.reshape(weight.shape + (1,) * r) * comps,
                                 fd_gradient(weighted, y, h), gamma, r)
    D = lhs - rhs
    if m < 2:
        return D, None
    return D, ji_inverse(j_op(D, ginv, m), g, ginv, m - 2)


def conformal_gauge_decompose(metric, T, c_fn, h=1e-5):
    """Split the conformal change of d^s T into ``(T', U)``.

    ``T' = c^{1-m} T`` and ``U`` is the trace part, so that
    ``c^{1-m} d~^s T = d^s T' + i U`` where ``i`` multiplies by ``metric``.
    For m = 1 the returned U is ``None`` (it vanishes identically).
    """
    if T.rank < 0:
        raise RankError("rank must be >= 0")
    m = T.rank + 1

    def t_prime(y):
        w = c_fn(y)[0] ** (1 - m)
        return w.reshape(w.shape + (1,) * T.rank) * T.components(y)

    T_prime = SymTensorField(T.rank, T.dim, t_prime)
    if m < 2:
        return T_prime, None
    U = SymTensorField(m - 2, T.dim, lambda y: conformal_gauge_parts(metric, T, c_fn, y, h)[1])
    return T_prime, U


def conformal_gauge_residual(metric, T, c_fn, y, h=1e-5):
    """max |c^{1-m} d~^s T - d^s(c^{1-m} T) - i U| at points ``y``."""
    D, U = conformal_gauge_parts(metric, T, c_fn, y, h)
    if U is None:
        return float(np.max(np.abs(D)))
    return float(np.max(np.abs(D - i_op(U, metric.metric(y), T.rank - 1))))
