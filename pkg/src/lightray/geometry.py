"""Charted Riemannian manifolds, symmetric tensor fields and metric algebra.

Array conventions used throughout the package:

* points ``x`` have shape ``(..., n)``;
* a metric has shape ``(..., n, n)`` and its chart derivative
  ``(..., n, n, n)`` with ``dg[..., i, j, k] = d_k g_ij``;
* Christoffel symbols are stored as ``gamma[..., i, j, k] = Gamma^i_jk``;
* a rank-m tensor has shape ``(..., n, ..., n)`` (m trailing axes) and its
  partial derivatives carry one extra trailing axis for the derivative.
"""

from __future__ import annotations

import csv
import itertools
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import BoundaryStencilError, RankError

MAX_RANK = 4


# --------------------------------------------------------------------------
# symmetric tensor algebra
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _permutations(m):
    return tuple(itertools.permutations(range(m)))


def symmetrize(a, m):
    """Average of ``a`` over all permutations of its last ``m`` axes."""
    a = np.asarray(a)
    if m <= 1:
        return a
    if m > MAX_RANK:
        raise RankError(f"rank {m} exceeds the supported ceiling {MAX_RANK}")
    lead = tuple(range(a.ndim - m))
    perms = _permutations(m)
    out = np.zeros_like(a)
    for p in perms:
        out = out + np.transpose(a, lead + tuple(len(lead) + q for q in p))
    out = out / len(perms)
    n = a.shape[-1]
    if a.shape[a.ndim - m:] == (n,) * m:
        # the sums above round differently per slot order; copy the sorted
        # component to every permutation so the result is exactly symmetric
        out = unpack(pack(out, n, m), n, m)
    return out


def sym_product(a, ra, b, rb):
    """Symmetrized tensor product of a rank-``ra`` and a rank-``rb`` tensor."""
    a = np.asarray(a, dtype=np.result_type(a, b, float))
    b = np.asarray(b)
    a_exp = a.reshape(a.shape + (1,) * rb)
    b_lead = b.shape[:b.ndim - rb]
    b_exp = b.reshape(b_lead + (1,) * ra + b.shape[b.ndim - rb:])
    return symmetrize(a_exp * b_exp, ra + rb)


def contract(a, vectors, m):
    """Evaluate a rank-``m`` tensor on ``m`` vectors.

    ``vectors`` is either one array (used in every slot) or a sequence of
    ``m`` arrays.
    """
    a = np.asarray(a)
    if m == 0:
        return a
    if not isinstance(vectors, (list, tuple)):
        vectors = [vectors] * m
    if len(vectors) != m:
        raise RankError(f"expected {m} vectors, got {len(vectors)}")
    out = a
    for k, v in enumerate(reversed(vectors)):
        v = np.asarray(v)
        remaining = m - k
        vb = v.reshape(v.shape[:-1] + (1,) * (remaining - 1) + v.shape[-1:])
        out = np.sum(out * vb, axis=-1)
    return out


@lru_cache(maxsize=None)
def sym_multi_indices(n, m):
    """Sorted multi-indices labelling the independent symmetric components."""
    return tuple(itertools.combinations_with_replacement(range(n), m))


@lru_cache(maxsize=None)
def multiplicities(n, m):
    """Number of full index tuples represented by each sorted multi-index."""
    out = []
    for idx in sym_multi_indices(n, m):
        counts = np.bincount(np.asarray(idx, dtype=int), minlength=n) if m else []
        out.append(math.factorial(m) / math.prod(math.factorial(int(c)) for c in counts))
    return np.asarray(out)


@lru_cache(maxsize=None)
def _unpack_map(n, m):
    lookup = {idx: k for k, idx in enumerate(sym_multi_indices(n, m))}
    full = np.empty((n,) * m, dtype=int)
    for idx in itertools.product(range(n), repeat=m):
        full[idx] = lookup[tuple(sorted(idx))]
    return full


def pack(a, n, m):
    """Independent components of a symmetric tensor, shape ``(..., K)``."""
    a = np.asarray(a)
    if m == 0:
        return a[..., None]
    cols = tuple(np.array(c) for c in zip(*sym_multi_indices(n, m)))
    return a[(Ellipsis,) + cols]


def unpack(p, n, m):
    """Inverse of :func:`pack`."""
    p = np.asarray(p)
    if m == 0:
        return p[..., 0]
    return p[..., _unpack_map(n, m)]


# --------------------------------------------------------------------------
# derivatives and Christoffel symbols
# --------------------------------------------------------------------------

def fd_gradient(fn, x, h, chart=None):
    """Central-difference partials of ``fn`` at ``x``; derivative axis last.

    ``fn`` must broadcast over leading point axes.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    shifts = (np.eye(n) * h).reshape((n,) + (1,) * (x.ndim - 1) + (n,))
    stencil = np.concatenate([x[None] + shifts, x[None] - shifts])
    if chart is not None and not np.all(chart(stencil)):
        raise BoundaryStencilError(f"finite-difference stencil (h={h:g}) leaves the chart")
    vals = np.asarray(fn(stencil))
    return np.moveaxis((vals[:n] - vals[n:]) / (2.0 * h), 0, -1)


def christoffel_from_metric(g, dg):
    """Gamma^i_jk = 1/2 g^il (d_j g_lk + d_k g_lj - d_l g_jk)."""
    ginv = np.linalg.inv(g)
    lowered = 0.5 * (np.einsum("...lkj->...ljk", dg) + dg - np.einsum("...jkl->...ljk", dg))
    return np.einsum("...il,...ljk->...ijk", ginv, lowered)


def covariant_derivative(comps, grad, gamma, r):
    """Full covariant derivative of a rank-``r`` tensor; derivative axis first.

    Returns ``nabla[..., a, i1, ..., ir] = d_a T_{i1..ir} - sum_p Gamma^l_{a ip} T_{..l..}``.
    """
    nabla = np.moveaxis(np.asarray(grad), -1, -(r + 1))
    if r == 0:
        return nabla
    letters = "bcdefgh"[:r]
    for p in range(r):
        t_sub = letters[:p] + "l" + letters[p + 1:]
        spec = f"...la{letters[p]},...{t_sub}->...a{letters}"
        nabla = nabla - np.einsum(spec, gamma, comps)
    return nabla


def symmetrized_derivative(comps, grad, gamma, r):
    """[d^s T] for a rank-``r`` tensor T: symmetrized covariant derivative."""
    if r + 1 > MAX_RANK:
        raise RankError(f"d^s of rank {r} exceeds the rank ceiling {MAX_RANK}")
    return symmetrize(covariant_derivative(comps, grad, gamma, r), r + 1)


# --------------------------------------------------------------------------
# trace operators on fibers
# --------------------------------------------------------------------------

def i_op(w, g, r):
    """i w = symmetrized product of w with the metric."""
    return sym_product(w, r, g, 2)


def _trace12(ginv, t, r):
    t = np.asarray(t)
    n = ginv.shape[-1]
    lead = t.shape[:t.ndim - r]
    flat = t.reshape(lead + (n, n, n ** (r - 2)))
    out = np.einsum("...ab,...abk->...k", ginv, flat)
    return out.reshape(out.shape[:-1] + (n,) * (r - 2))


def j_op(w, ginv, r):
    """j w = metric trace over the first two slots."""
    if r < 2:
        raise RankError(f"trace needs rank >= 2, got {r}")
    return _trace12(ginv, w, r)


def ji_matrix(g, ginv, r):
    """Matrix of j i acting on packed rank-``r`` symmetric tensors."""
    n = g.shape[-1]
    basis = np.eye(len(sym_multi_indices(n, r)))
    full = unpack(basis, n, r)                      # (K, n..n)
    lead = g.shape[:-2]
    full = full.reshape((1,) * len(lead) + full.shape)
    gb = g[..., None, :, :]
    ginvb = ginv[..., None, :, :]
    image = j_op(i_op(full, gb, r), ginvb, r + 2)   # (..., K, n..n)
    return np.swapaxes(pack(image, n, r), -1, -2)


def ji_inverse(w, g, ginv, r):
    """(j i)^{-1} w by a dense solve on each fiber."""
    n = g.shape[-1]
    mat = ji_matrix(g, ginv, r)
    rhs = pack(w, n, r)
    sol = np.linalg.solve(mat, rhs[..., None])[..., 0]
    return unpack(sol, n, r)


def p_op(w, g, ginv, r):
    """Orthogonal projection onto Ker j: p = 1 - i (j i)^{-1} j."""
    if r < 2:
        return np.asarray(w)
    return w - i_op(ji_inverse(j_op(w, ginv, r), g, ginv, r - 2), g, r - 2)


def fiber_inner(a, b, ginv, r):
    """Pointwise inner product <a, b>_g of two rank-``r`` tensors."""
    raised = np.asarray(b)
    letters = "abcdefgh"[:r]
    for ch in letters:
        sub = letters.replace(ch, "z")
        raised = np.einsum(f"...{ch}z,...{sub}->...{letters}", ginv, raised)
    return np.sum((np.asarray(a) * raised).reshape(raised.shape[:raised.ndim - r] + (-1,)), axis=-1)


# --------------------------------------------------------------------------
# manifolds and fields
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ChartedManifold:
    """A compact Riemannian manifold with boundary, described in one chart.

    ``boundary_fn`` is negative inside, zero on the boundary.  Optional
    closed forms (``metric_grad_fn``, ``christoffel_fn``) replace finite
    differences when present.
    """

    name: str
    dim: int
    metric_fn: Callable
    inside_fn: Callable
    boundary_fn: Callable
    diameter: float
    metric_grad_fn: Optional[Callable] = None
    christoffel_fn: Optional[Callable] = None
    boundary_grad_fn: Optional[Callable] = None
    chart_fn: Optional[Callable] = None
    boundary_kind: str = "disc"

    @property
    def fd_step(self):
        return 1e-4 * self.diameter

    def metric(self, x):
        return np.asarray(self.metric_fn(np.asarray(x, dtype=float)), dtype=float)

    def inverse_metric(self, x):
        return np.linalg.inv(self.metric(x))

    def metric_grad(self, x, h=None):
        if self.metric_grad_fn is not None and h is None:
            return np.asarray(self.metric_grad_fn(np.asarray(x, dtype=float)))
        return fd_gradient(self.metric_fn, x, h or self.fd_step, chart=self.chart_fn)

    def christoffel(self, x, closed_form=True, h=None):
        x = np.asarray(x, dtype=float)
        if closed_form and h is None and self.christoffel_fn is not None:
            return np.asarray(self.christoffel_fn(x))
        return christoffel_from_metric(self.metric(x), self.metric_grad(x, h=h))

    def inside(self, x):
        return np.asarray(self.inside_fn(np.asarray(x, dtype=float)), dtype=bool)

    def boundary(self, x):
        return np.asarray(self.boundary_fn(np.asarray(x, dtype=float)), dtype=float)

    def boundary_grad(self, x):
        if self.boundary_grad_fn is not None:
            return np.asarray(self.boundary_grad_fn(np.asarray(x, dtype=float)))
        return fd_gradient(self.boundary_fn, x, self.fd_step)

    def outward_normal(self, x):
        """Unit (with respect to the metric) outward normal vector at ``x``."""
        d = self.boundary_grad(x)
        vec = np.einsum("...ij,...j->...i", self.inverse_metric(x), d)
        norm = np.sqrt(np.einsum("...i,...i->...", vec, d))
        return vec / norm[..., None]

    def norm(self, x, v):
        return np.sqrt(np.einsum("...i,...ij,...j->...", v, self.metric(x), v))

    def with_metric(self, name, metric_fn, metric_grad_fn=None, christoffel_fn=None):
        """Same chart and boundary, different metric (e.g. g_c = c g)."""
        return ChartedManifold(name=name, dim=self.dim, metric_fn=metric_fn,
                               inside_fn=self.inside_fn, boundary_fn=self.boundary_fn,
                               diameter=self.diameter, metric_grad_fn=metric_grad_fn,
                               christoffel_fn=christoffel_fn,
                               boundary_grad_fn=self.boundary_grad_fn,
                               chart_fn=self.chart_fn, boundary_kind=self.boundary_kind)

    def boundary_points(self, params):
        """Boundary points for boundary parameters (angle for discs, arclength for squares)."""
        params = np.asarray(params, dtype=float)
        if self.boundary_kind == "disc":
            return np.stack([np.cos(params), np.sin(params)], axis=-1)
        if self.boundary_kind == "square":
            s = np.mod(params, 8.0)
            side = np.floor(s / 2.0)
            u = s - 2.0 * side - 1.0
            pts = np.empty(s.shape + (2,))
            pts[side == 0] = np.stack([np.ones_like(u), u], -1)[side == 0]
            pts[side == 1] = np.stack([-u, np.ones_like(u)], -1)[side == 1]
            pts[side == 2] = np.stack([-np.ones_like(u), -u], -1)[side == 2]
            pts[side == 3] = np.stack([u, -np.ones_like(u)], -1)[side == 3]
            return pts
        if self.boundary_kind == "polar":
            return np.stack([np.ones_like(params), params], axis=-1)
        raise ValueError(f"no boundary parametrization for {self.boundary_kind!r}")


@dataclass(frozen=True)
class SymTensorField:
    """A rank-m symmetric tensor field given by chart components."""

    rank: int
    dim: int
    components_fn: Callable
    gradient_fn: Optional[Callable] = None
    fd_step: float = 1e-5

    def components(self, x):
        return np.asarray(self.components_fn(np.asarray(x, dtype=float)))

    def gradient(self, x):
        if self.gradient_fn is not None:
            return np.asarray(self.gradient_fn(np.asarray(x, dtype=float)))
        return fd_gradient(self.components_fn, x, self.fd_step)

    def eval(self, x, vectors):
        return contract(self.components(x), vectors, self.rank)

    def __add__(self, other):
        if (other.rank, other.dim) != (self.rank, self.dim):
            raise RankError("cannot add fields of different rank or dimension")
        grad = None
        if self.gradient_fn is not None and other.gradient_fn is not None:
            grad = lambda x: self.gradient(x) + other.gradient(x)
        return SymTensorField(self.rank, self.dim,
                              lambda x: self.components(x) + other.components(x), grad,
                              self.fd_step)

    def scaled(self, factor):
        grad = None if self.gradient_fn is None else (lambda x: factor * self.gradient(x))
        return SymTensorField(self.rank, self.dim, lambda x: factor * self.components(x),
                              grad, self.fd_step)


def christoffel(man, x):
    """Christoffel symbols of ``man`` at ``x`` (closed form if registered)."""
    x = np.asarray(x, dtype=float)
    if man.chart_fn is not None and not np.all(man.chart_fn(x)):
        raise BoundaryStencilError("point outside the chart")
    return man.christoffel(x)


def sym_cov_derivative(man, T, x):
    """[d^s T](x) for a field T of rank m-1; returns a rank-m array."""
    x = np.asarray(x, dtype=float)
    return symmetrized_derivative(T.components(x), T.gradient(x), christoffel(man, x), T.rank)


def divergence(man, w):
    """delta^s w = -trace_12 (nabla w); the L^2 adjoint of d^s."""
    if w.rank < 1:
        raise RankError("divergence needs rank >= 1")

    def comps(x):
        nab = covariant_derivative(w.components(x), w.gradient(x), christoffel(man, x), w.rank)
        return -_trace12(man.inverse_metric(x), nab, w.rank + 1)

    return SymTensorField(w.rank - 1, w.dim, comps, fd_step=w.fd_step)


def trace_ops(man, w):
    """The fields i w (rank m+2), j w (rank m-2, None if m < 2) and p w (rank m)."""
    m = w.rank
    i_field = SymTensorField(m + 2, w.dim, lambda x: i_op(w.components(x), man.metric(x), m))
    j_field = None
    if m >= 2:
        j_field = SymTensorField(m - 2, w.dim,
                                 lambda x: j_op(w.components(x), man.inverse_metric(x), m))
    p_field = SymTensorField(m, w.dim, lambda x: p_op(w.components(x), man.metric(x),
                                                      man.inverse_metric(x), m))
    return {"i": i_field, "j": j_field, "p": p_field}


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------

def _flat_metric(x):
    x = np.asarray(x)
    return np.broadcast_to(np.eye(x.shape[-1]), x.shape + (x.shape[-1],)).copy()


def _zero_grad(x):
    x = np.asarray(x)
    n = x.shape[-1]
    return np.zeros(x.shape[:-1] + (n, n, n))


def _disc_boundary(x):
    return np.sum(np.asarray(x) ** 2, axis=-1) - 1.0


def _disc_boundary_grad(x):
    return 2.0 * np.asarray(x)


def flat_disc(dim=2):
    return ChartedManifold(
        name="flat-disc", dim=dim, metric_fn=_flat_metric,
        inside_fn=lambda x: _disc_boundary(x) <= 0.0, boundary_fn=_disc_boundary,
        diameter=2.0, metric_grad_fn=_zero_grad, christoffel_fn=_zero_grad,
        boundary_grad_fn=_disc_boundary_grad)


def flat_square():
    def bfn(x):
        return np.max(np.abs(x), axis=-1) - 1.0

    def bgrad(x):
        x = np.asarray(x)
        ax = np.argmax(np.abs(x), axis=-1)
        out = np.zeros_like(x)
        np.put_along_axis(out, ax[..., None], np.sign(np.take_along_axis(x, ax[..., None], -1)), -1)
        return out

    return ChartedManifold(
        name="flat-square", dim=2, metric_fn=_flat_metric,
        inside_fn=lambda x: bfn(x) <= 0.0, boundary_fn=bfn, diameter=2.0 * math.sqrt(2.0),
        metric_grad_fn=_zero_grad, christoffel_fn=_zero_grad, boundary_grad_fn=bgrad,
        boundary_kind="square")


def polar_disc():
    """Euclidean unit disc in polar coordinates (r, theta)."""

    def metric(x):
        x = np.asarray(x)
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = x[..., 0] ** 2
        return g

    def metric_grad(x):
        x = np.asarray(x)
        dg = np.zeros(x.shape[:-1] + (2, 2, 2))
        dg[..., 1, 1, 0] = 2.0 * x[..., 0]
        return dg

    def gamma(x):
        x = np.asarray(x)
        r = x[..., 0]
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = -r
        out[..., 1, 0, 1] = 1.0 / r
        out[..., 1, 1, 0] = 1.0 / r
        return out

    return ChartedManifold(
        name="polar-disc", dim=2, metric_fn=metric,
        inside_fn=lambda x: (np.asarray(x)[..., 0] > 0) & (np.asarray(x)[..., 0] <= 1.0),
        boundary_fn=lambda x: np.asarray(x)[..., 0] - 1.0, diameter=2.0,
        metric_grad_fn=metric_grad, christoffel_fn=gamma,
        boundary_grad_fn=lambda x: np.stack([np.ones_like(np.asarray(x)[..., 0]),
                                             np.zeros_like(np.asarray(x)[..., 0])], -1),
        chart_fn=lambda x: np.asarray(x)[..., 0] > 0.0, boundary_kind="polar")


def conformal_disc(amplitude, dim=2):
    """Unit disc with g = c(x) * delta, c = exp(amplitude * exp(-|x|^2 / 2))."""
    a = float(amplitude)

    def log_c(x):
        return a * np.exp(-0.5 * np.sum(np.asarray(x) ** 2, axis=-1))

    def dlog_c(x):
        return -np.asarray(x) * log_c(x)[..., None]

    def metric(x):
        x = np.asarray(x)
        return np.exp(log_c(x))[..., None, None] * np.eye(x.shape[-1])

    def metric_grad(x):
        x = np.asarray(x)
        c = np.exp(log_c(x))
        return (c[..., None] * dlog_c(x))[..., None, None, :] * np.eye(x.shape[-1])[..., None]

    def gamma(x):
        # g = e^{2 psi} delta with psi = log(c)/2
        x = np.asarray(x)
        n = x.shape[-1]
        dpsi = 0.5 * dlog_c(x)
        eye = np.eye(n)
        return (np.einsum("ij,...k->...ijk", eye, dpsi) + np.einsum("ik,...j->...ijk", eye, dpsi)
                - np.einsum("jk,...i->...ijk", eye, dpsi))

    return ChartedManifold(
        name=f"conformal-disc({a:g})", dim=dim, metric_fn=metric,
        inside_fn=lambda x: _disc_boundary(x) <= 0.0, boundary_fn=_disc_boundary,
        diameter=2.0, metric_grad_fn=metric_grad, christoffel_fn=gamma,
        boundary_grad_fn=_disc_boundary_grad)


_ID_RE = re.compile(r"^\s*([a-z][a-z-]*)\s*(?:\(\s*([^)]*)\s*\))?\s*$")


def parse_id(text):
    """Split ``"name(arg1, arg2)"`` into ``("name", [arg1, arg2])``."""
    m = _ID_RE.match(str(text))
    if not m:
        raise ValueError(f"malformed id {text!r}")
    args = [float(a) for a in m.group(2).split(",")] if m.group(2) else []
    return m.group(1), args


def get_manifold(ident):
    """Look up a registered manifold by id, e.g. ``"conformal-disc(0.3)"``."""
    name, args = parse_id(ident)
    if name == "flat-disc" and not args:
        return flat_disc()
    if name == "flat-square" and not args:
        return flat_square()
    if name == "polar-disc" and not args:
        return polar_disc()
    if name == "conformal-disc" and len(args) == 1:
        return conformal_disc(args[0])
    raise KeyError(f"unknown manifold id {ident!r}")


MANIFOLD_IDS = ("flat-disc", "polar-disc", "flat-square", "conformal-disc(0.3)")


# --------------------------------------------------------------------------
# grid export
# --------------------------------------------------------------------------

_COORD_NAMES = ("x", "y", "z")


def export_components_csv(field, points, path):
    """Write independent components of ``field`` at ``points`` as long-format CSV.

    Header: ``x,y,i1..im,value``; indices are 1-based and sorted, the
    remaining components follow by symmetry.
    """
    points = np.asarray(points, dtype=float).reshape(-1, field.dim)
    comps = pack(field.components(points), field.dim, field.rank)
    idx = sym_multi_indices(field.dim, field.rank)
    header = list(_COORD_NAMES[:field.dim]) + [f"i{k + 1}" for k in range(field.rank)] + ["value"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for p, row in zip(points, comps):
            for mi, val in zip(idx, row):
                writer.writerow([repr(float(c)) for c in p] + [k + 1 for k in mi] + [repr(float(val))])


def read_components_csv(path, dim, rank):
    """Read a file written by :func:`export_components_csv`.

    Returns ``(points, components)`` with full symmetric component arrays.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    k = len(sym_multi_indices(dim, rank))
    data = np.array([[float(v) for v in r] for r in rows]).reshape(-1, k, dim + rank + 1)
    points = data[:, 0, :dim]
    return points, unpack(data[:, :, -1], dim, rank)
