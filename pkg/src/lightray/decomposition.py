"""Helmholtz and trace-free Helmholtz decompositions on staggered 2D grids.

Grid layout
-----------
The chart square [-1, 1]^2 carries N cells of width ``dx = 2 / N``.  A
component ``omega_I`` whose multi-index contains ``a`` copies of x and ``b``
copies of y lives at the offsets ``((a mod 2) / 2, (b mod 2) / 2)`` in cell
units.  With this placement the centred symmetric gradient, the trace and
the product with the (flat) metric only ever combine co-located values, so
all operators are second order and local.

The elliptic problems are discretized variationally: ``h`` minimizes the
quadrature norm ``|| X (omega - d^s h) ||_W`` with ``X`` the identity or the
trace-free projection ``p``.  The discrete divergence is defined as the
adjoint ``delta^s = V^{-1} D^T W`` of the discrete symmetric gradient ``D``,
so ``delta^s omega^s = 0`` holds to solver precision.

Boundary handling on the square: ``h`` vanishes on nodes that sit on the
boundary; derivatives at boundary nodes of half-offset components use an
odd reflection across the boundary.  The reflection keeps the discrete
divergence consistent up to the boundary (a one-sided quadratic formula
does not) and the potentials still converge at second order.  On the disc the
grid is a masked staircase (``h`` = 0 outside), which is only first order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import null_space
from scipy.sparse.linalg import splu

from .errors import DiscretizationError, RankError, SupportError, ZeroMeanViolationError
from .geometry import (i_op, j_op, ji_inverse, multiplicities, p_op, pack, sym_multi_indices,
                       unpack)

MAX_DECOMP_RANK = 3
GHOST = "reflect"


# --------------------------------------------------------------------------
# node spaces
# --------------------------------------------------------------------------

def _axis_nodes(N, offset):
    n = N + 1 if offset == 0 else N
    return -1.0 + (np.arange(n) + 0.5 * offset) * (2.0 / N)


def _trap_weights(N, offset):
    n = N + 1 if offset == 0 else N
    w = np.ones(n)
    if offset == 0:
        w[0] = w[-1] = 0.5
    return w


@dataclass
class _Block:
    index: tuple
    parity: tuple
    shape: tuple
    start: int
    X: np.ndarray
    Y: np.ndarray

    @property
    def stop(self):
        return self.start + self.shape[0] * self.shape[1]


class NodeSpace:
    """All node values of a rank-``rank`` symmetric tensor on the staggered grid."""

    def __init__(self, N, rank, domain="square"):
        if domain not in ("square", "disc"):
            raise ValueError(f"unknown domain {domain!r}")
        self.N = N
        self.rank = rank
        self.domain = domain
        self.dx = 2.0 / N
        self.indices = sym_multi_indices(2, rank)
        self.mult = multiplicities(2, rank)
        self.blocks = []
        start = 0
        for I in self.indices:
            a = I.count(0)
            b = rank - a
            par = (a % 2, b % 2)
            xs, ys = _axis_nodes(N, par[0]), _axis_nodes(N, par[1])
            X, Y = np.meshgrid(xs, ys, indexing="ij")
            self.blocks.append(_Block(I, par, X.shape, start, X, Y))
            start += X.size
        self.size = start

    @cached_property
    def points(self):
        return np.concatenate([np.stack([b.X.ravel(), b.Y.ravel()], -1) for b in self.blocks])

    @cached_property
    def inside(self):
        """Nodes that belong to the (closed) domain."""
        if self.domain == "square":
            return np.ones(self.size, dtype=bool)
        r2 = np.sum(self.points ** 2, axis=-1)
        return r2 < 1.0 - 1e-12

    @cached_property
    def dirichlet(self):
        """Nodes where a potential is forced to zero."""
        if self.domain == "disc":
            return ~self.inside
        out = np.zeros(self.size, dtype=bool)
        for b in self.blocks:
            m = np.zeros(b.shape, dtype=bool)
            if b.parity[0] == 0:
                m[0, :] = m[-1, :] = True
            if b.parity[1] == 0:
                m[:, 0] = m[:, -1] = True
            out[b.start:b.stop] = m.ravel()
        return out

    @cached_property
    def weights(self):
        """Quadrature weight x multiplicity of every node (the W inner product)."""
        out = np.empty(self.size)
        for b, mu in zip(self.blocks, self.mult):
            if self.domain == "square":
                w = np.outer(_trap_weights(self.N, b.parity[0]), _trap_weights(self.N, b.parity[1]))
            else:
                w = np.ones(b.shape)
            out[b.start:b.stop] = (w * self.dx ** 2 * mu).ravel()
        out[~self.inside] = 0.0
        return out

    def sample(self, fn):
        """Node vector of a field given by full chart components ``fn(points)``."""
        out = np.empty(self.size, dtype=complex)
        for b in self.blocks:
            pts = np.stack([b.X.ravel(), b.Y.ravel()], -1)
            comps = np.asarray(fn(pts))
            out[b.start:b.stop] = comps[(Ellipsis,) + tuple(b.index)] if self.rank else comps
        out[~self.inside] = 0.0
        return out.real.copy() if np.all(out.imag == 0) else out

    def grids(self, vec):
        return [np.asarray(vec)[b.start:b.stop].reshape(b.shape) for b in self.blocks]

    def classes(self):
        """Parity class -> list of block positions."""
        out = {}
        for k, b in enumerate(self.blocks):
            out.setdefault(b.parity, []).append(k)
        return out


@dataclass
class GridField:
    """Symmetric tensor node values on a staggered grid.

    ``values`` is the stacked node vector of :class:`NodeSpace`; the
    ``components`` property splits it into one 2D array per sorted
    multi-index.
    """

    rank: int
    N: int
    values: np.ndarray
    domain: str = "square"

    @cached_property
    def space(self):
        return NodeSpace(self.N, self.rank, self.domain)

    @property
    def h(self):
        return 2.0 / self.N

    @property
    def components(self):
        return self.space.grids(self.values)

    @property
    def mask(self):
        return self.space.dirichlet

    @classmethod
    def from_function(cls, fn, rank, N, domain="square"):
        space = NodeSpace(N, rank, domain)
        return cls(rank, N, space.sample(fn), domain)

    def __add__(self, other):
        return GridField(self.rank, self.N, self.values + other.values, self.domain)

    def __sub__(self, other):
        return GridField(self.rank, self.N, self.values - other.values, self.domain)

    def scaled(self, c):
        return GridField(self.rank, self.N, c * self.values, self.domain)

    def max_abs(self):
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def to_csv(self, path):
        space = self.space
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"] + [f"i{k + 1}" for k in range(self.rank)] + ["value"])
            for b in space.blocks:
                vals = self.values[b.start:b.stop]
                for x, y, v in zip(b.X.ravel(), b.Y.ravel(), vals):
                    w.writerow([f"{x:.12g}", f"{y:.12g}"] + [k + 1 for k in b.index]
                               + [f"{float(np.real(v)):.12e}"])


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------

def _d_int_to_half(N, dx):
    rows = np.arange(N)
    data = np.concatenate([-np.ones(N), np.ones(N)]) / dx
    return sp.csr_matrix((data, (np.concatenate([rows, rows]), np.concatenate([rows, rows + 1]))),
                         shape=(N, N + 1))


def _d_half_to_int(N, dx, ghost):
    m = sp.lil_matrix((N + 1, N))
    for i in range(1, N):
        m[i, i - 1] = -1.0
        m[i, i] = 1.0
    if ghost == "quadratic":
        m[0, 0], m[0, 1] = 3.0, -1.0 / 3.0
        m[N, N - 1], m[N, N - 2] = -3.0, 1.0 / 3.0
    elif ghost == "reflect":
        m[0, 0] = 2.0
        m[N, N - 1] = -2.0
    else:
        m[0, 0] = 1.0
        m[N, N - 1] = -1.0
    return (m / dx).tocsr()


def sym_grad_matrix(hs, ws):
    """Sparse centred d^s from rank r node space ``hs`` to rank r+1 space ``ws``."""
    N, dx, m = hs.N, hs.dx, ws.rank
    ghost = GHOST if hs.domain == "square" else "zero"
    d_ih = _d_int_to_half(N, dx)
    d_hi = _d_half_to_int(N, dx, ghost)
    pos = {b.index: b for b in hs.blocks}
    rows = []
    for bw in ws.blocks:
        I = bw.index
        a = I.count(0)
        row = [None] * len(hs.blocks)
        for axis, count in ((0, a), (1, m - a)):
            if count == 0:
                continue
            J = list(I)
            J.remove(axis)
            bh = pos[tuple(J)]
            k = hs.blocks.index(bh)
            off = bh.parity[axis]
            d1 = d_ih if off == 0 else d_hi
            n_other = bh.shape[1 - axis]
            eye = sp.identity(n_other, format="csr")
            op = sp.kron(d1, eye) if axis == 0 else sp.kron(eye, d1)
            op = (count / m) * op
            row[k] = op if row[k] is None else row[k] + op
        rows.append(row)
    for i, bw in enumerate(ws.blocks):
        for k, bh in enumerate(hs.blocks):
            if rows[i][k] is None:
                rows[i][k] = sp.csr_matrix((bw.shape[0] * bw.shape[1], bh.shape[0] * bh.shape[1]))
    return sp.bmat(rows, format="csr")


def _fiber_packed(op, r_in, r_out):
    """Packed matrix of a pointwise flat-metric operator ``op`` (rank r_in -> r_out)."""
    K_in = len(sym_multi_indices(2, r_in))
    basis = unpack(np.eye(K_in), 2, r_in)
    return pack(op(basis), 2, r_out).T


def fiber_operator(op, src, dst):
    """Sparse node-space version of a pointwise fiber map between co-located blocks."""
    M = _fiber_packed(op, src.rank, dst.rank)
    rows = []
    for i, bd in enumerate(dst.blocks):
        row = []
        for k, bs in enumerate(src.blocks):
            n_d = bd.shape[0] * bd.shape[1]
            n_s = bs.shape[0] * bs.shape[1]
            c = M[i, k]
            if abs(c) > 1e-14:
                if bd.parity != bs.parity:
                    raise RuntimeError("pointwise operator mixes staggered locations")
                row.append(c * sp.identity(n_d, format="csr"))
            else:
                row.append(sp.csr_matrix((n_d, n_s)))
        rows.append(row)
    return sp.bmat(rows, format="csr")


_EYE2 = np.eye(2)


def _p(w, r):
    return p_op(w, _EYE2, _EYE2, r)


def _j(w, r):
    return j_op(w, _EYE2, r)


def _i(w, r):
    return i_op(w, _EYE2, r)


def _ji_inv(w, r):
    return ji_inverse(w, _EYE2, _EYE2, r)


# --------------------------------------------------------------------------
# solver
# --------------------------------------------------------------------------

@dataclass
class SolverReport:
    residual: float
    iterations: int
    grid_h: float

    def to_dict(self):
        return {"residual": self.residual, "iterations": self.iterations, "grid_h": self.grid_h}


class HelmholtzSolver:
    """Factorized elliptic system for one grid, rank and decomposition kind.

    ``trace_free=False``: delta^s d^s h = delta^s omega.
    ``trace_free=True``:  delta^s p d^s h = delta^s p omega with j h = 0.
    """

    def __init__(self, N, rank, domain="square", trace_free=False):
        if rank < 1 or (trace_free and rank < 2):
            raise RankError(f"rank {rank} not admissible for this decomposition")
        if rank > MAX_DECOMP_RANK:
            raise RankError(f"rank {rank} exceeds the decomposition ceiling {MAX_DECOMP_RANK}")
        self.N, self.rank, self.domain, self.trace_free = N, rank, domain, trace_free
        self.ws = NodeSpace(N, rank, domain)
        self.hs = NodeSpace(N, rank - 1, domain)
        self.D = sym_grad_matrix(self.hs, self.ws)
        self.Wd = sp.diags(self.ws.weights)
        self.P = fiber_operator(lambda w: _p(w, rank), self.ws, self.ws) if trace_free else None
        self.E = self._embedding()
        X = self.P if trace_free else sp.identity(self.ws.size)
        self._rhs_op = (self.E.T @ self.D.T @ self.Wd @ X).tocsr()
        A = (self._rhs_op @ self.D @ self.E).tocsc()
        A = 0.5 * (A + A.T)
        try:
            self.lu = splu(A.tocsc())
        except RuntimeError as exc:
            raise DiscretizationError(f"singular discrete system: {exc}") from None
        self._A = A

    def _embedding(self):
        hs = self.hs
        free = ~hs.dirichlet
        if not (self.trace_free and hs.rank >= 2):
            sel = np.nonzero(free)[0]
            return sp.csr_matrix((np.ones(len(sel)), (sel, np.arange(len(sel)))),
                                 shape=(hs.size, len(sel)))
        Jp = _fiber_packed(lambda w: _j(w, hs.rank), hs.rank, hs.rank - 2)
        cols = []
        rows_i, cols_i, data = [], [], []
        ncol = 0
        for par, members in hs.classes().items():
            B = null_space(Jp[:, members]) if Jp[:, members].any() else np.eye(len(members))
            ref = hs.blocks[members[0]]
            local_free = np.nonzero(free[ref.start:ref.stop])[0]
            for q in range(B.shape[1]):
                for t, k in enumerate(members):
                    if abs(B[t, q]) < 1e-14:
                        continue
                    blk = hs.blocks[k]
                    rows_i.append(blk.start + local_free)
                    cols_i.append(ncol + np.arange(len(local_free)))
                    data.append(np.full(len(local_free), B[t, q]))
                ncol += len(local_free)
        return sp.csr_matrix((np.concatenate(data), (np.concatenate(rows_i), np.concatenate(cols_i))),
                             shape=(hs.size, ncol))

    def solve_potential(self, omega_vec):
        rhs = self._rhs_op @ omega_vec
        if np.iscomplexobj(rhs):
            u = self.lu.solve(rhs.real) + 1j * self.lu.solve(rhs.imag)
        else:
            u = self.lu.solve(rhs)
        return self.E @ u

    def sym_grad(self, h_vec):
        return self.D @ h_vec

    def divergence(self, w_vec):
        """Discrete delta^s = V^{-1} D^T W on the free potential nodes (zero elsewhere)."""
        v = self.hs.weights
        out = np.zeros(self.hs.size, dtype=np.result_type(w_vec, float))
        free = ~self.hs.dirichlet
        out[free] = (self.D.T @ (self.Wd @ w_vec))[free] / v[free]
        return out

    def divergence_tested(self, w_vec):
        """delta^s w restricted to the admissible potentials (E^T D^T W w)."""
        return self.E.T @ self.D.T @ (self.Wd @ w_vec)


_SOLVERS = {}


def get_solver(N, rank, domain="square", trace_free=False):
    key = (N, rank, domain, trace_free)
    if key not in _SOLVERS:
        _SOLVERS[key] = HelmholtzSolver(N, rank, domain, trace_free)
    return _SOLVERS[key]


def _check(omega, min_rank):
    if omega.rank < min_rank:
        raise RankError(f"rank {omega.rank} < {min_rank}")
    if omega.N < 32:
        raise DiscretizationError("grid resolution must be at least 32 x 32")


def _rel_residual(res, ref, scale):
    denom = max(float(np.max(np.abs(ref))) if ref.size else 0.0, scale, 1e-300)
    return float(np.max(np.abs(res))) / denom if res.size else 0.0


def helmholtz(man, omega, solver=None):
    """omega = omega^s + d^s h with delta^s omega^s = 0 and h = 0 on the boundary.

    ``man`` selects the domain (a flat square or flat disc manifold, or the
    strings ``"square"``/``"disc"``).  Returns ``(omega_s, h, report)``.
    """
    _check(omega, 1)
    solver = solver or get_solver(omega.N, omega.rank, _domain(man, omega))
    h = solver.solve_potential(omega.values)
    ws = omega.values - solver.sym_grad(h)
    res = solver.divergence(ws)
    ref = solver.divergence(omega.values)
    rep = SolverReport(_rel_residual(res, ref, omega.max_abs()), 1, omega.h)
    return (GridField(omega.rank, omega.N, ws, omega.domain),
            GridField(omega.rank - 1, omega.N, h, omega.domain), rep)


def tf_helmholtz(man, omega, solver=None):
    """omega = omega^tfs + i omega^t + d^s h with j omega^tfs = 0, delta^s omega^tfs = 0.

    The potential satisfies h = 0 on the boundary and j h = 0.  Returns
    ``(omega_tfs, omega_t, h, report)``; the report residual is the
    divergence of omega^tfs tested against admissible potentials.
    """
    _check(omega, 2)
    m = omega.rank
    solver = solver or get_solver(omega.N, m, _domain(man, omega), trace_free=True)
    h = solver.solve_potential(omega.values)
    rest = omega.values - solver.sym_grad(h)
    ts = NodeSpace(omega.N, m - 2, omega.domain)
    J = fiber_operator(lambda w: _j(w, m), solver.ws, ts)
    Jinv = fiber_operator(lambda w: _ji_inv(w, m - 2), ts, ts)
    Iop = fiber_operator(lambda w: _i(w, m - 2), ts, solver.ws)
    wt = Jinv @ (J @ rest)
    wtfs = rest - Iop @ wt
    res = solver.divergence_tested(wtfs)
    ref = solver.divergence_tested(omega.values)
    rep = SolverReport(_rel_residual(res, ref, omega.max_abs() * omega.h ** 2), 1, omega.h)
    return (GridField(m, omega.N, wtfs, omega.domain), GridField(m - 2, omega.N, wt, omega.domain),
            GridField(m - 1, omega.N, h, omega.domain), rep)


def trace_of(field):
    """Pointwise j of a grid field (rank >= 2)."""
    src = NodeSpace(field.N, field.rank, field.domain)
    dst = NodeSpace(field.N, field.rank - 2, field.domain)
    return GridField(field.rank - 2, field.N,
                     fiber_operator(lambda w: _j(w, field.rank), src, dst) @ field.values,
                     field.domain)


def divergence_of(field):
    """Discrete delta^s of a grid field (rank >= 1), zero on Dirichlet nodes."""
    return GridField(field.rank - 1, field.N,
                     get_solver(field.N, field.rank, field.domain).divergence(field.values),
                     field.domain)


def _domain(man, omega):
    if isinstance(man, str):
        return man
    if man is None:
        return omega.domain
    name = getattr(man, "name", "")
    if getattr(man, "boundary_kind", "") == "square" or "square" in name:
        return "square"
    if name.startswith("flat-disc"):
        return "disc"
    raise DiscretizationError(f"no grid solver for manifold {name!r} (flat square or disc only)")


# --------------------------------------------------------------------------
# time families
# --------------------------------------------------------------------------

@dataclass
class FamilyDecomposition:
    parts: list
    commutation_residual: float
    taus: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _dtft(values, t_grid, tau):
    w = np.ones(1)
    if len(t_grid) > 1:
        w = np.full(len(t_grid), t_grid[1] - t_grid[0])
        w[0] = w[-1] = 0.5 * w[0]
    return np.tensordot(w * np.exp(-1j * tau * np.asarray(t_grid)), values, axes=(0, 0))


def time_family_decompose(man, family, t_grid, taus=(0.0, 0.5, 1.0, 2.0), trace_free=False,
                          support_tol=1e-12):
    """Decompose every time slice and check that the time Fourier transform commutes.

    ``family`` is a list of :class:`GridField` sampled at ``t_grid``.  The
    first and last slices must vanish (support inside the window).
    Returns a :class:`FamilyDecomposition` whose ``parts`` are the per-slice
    outputs of :func:`helmholtz` (or :func:`tf_helmholtz`).
    """
    vals = np.stack([f.values for f in family])
    scale = float(np.max(np.abs(vals))) or 1.0
    if len(family) > 1 and (np.max(np.abs(vals[0])) > support_tol * scale
                            or np.max(np.abs(vals[-1])) > support_tol * scale):
        raise SupportError("time family does not vanish at the ends of the window")
    f0 = family[0]
    dom = _domain(man, f0)
    decomp = tf_helmholtz if trace_free else helmholtz
    solver = get_solver(f0.N, f0.rank, dom, trace_free)
    parts = [decomp(dom, f, solver) for f in family]
    worst = 0.0
    for tau in taus:
        fam_hat = GridField(f0.rank, f0.N, _dtft(vals, t_grid, tau), f0.domain)
        direct = decomp(dom, fam_hat, solver)
        for k in range(len(direct) - 1):
            sliced = _dtft(np.stack([p[k].values for p in parts]), t_grid, tau)
            ref = max(float(np.max(np.abs(sliced))), 1e-300)
            worst = max(worst, float(np.max(np.abs(direct[k].values - sliced))) / max(ref, scale))
    return FamilyDecomposition(parts, worst, np.asarray(taus, dtype=float))


def primitive_in_time(family, t_grid, tol=1e-8):
    """a0(t) = int_{t_0}^t omega(t') dt' (cumulative trapezoid) for a zero-mean family."""
    vals = np.stack([f.values for f in family])
    t = np.asarray(t_grid, dtype=float)
    a0 = cumulative_trapezoid(vals, t, axis=0, initial=0.0)
    total = np.max(np.abs(a0[-1]))
    ref = float(np.max(cumulative_trapezoid(np.abs(vals), t, axis=0, initial=0.0)[-1])) or 1.0
    if total > tol * ref:
        raise ZeroMeanViolationError(
            f"time integral of the family is {total:.3g} (relative {total / ref:.3g})")
    f0 = family[0]
    return [GridField(f0.rank, f0.N, a, f0.domain) for a in a0]
