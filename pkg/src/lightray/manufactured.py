"""Manufactured fields on the square [-1, 1]^2 with known decompositions.

* :func:`potential` returns a rank-r potential vanishing on the boundary of
  the square together with the exact d^s of it, so ``d^s h`` has a known
  Helmholtz split (solenoidal part zero).
* :func:`holomorphic_tensor` returns a trace-free, divergence-free tensor
  built from exp(c z): every component is Re(i^b exp(c z)) with b the
  number of y indices.
* :func:`trace_free_potential` projects a potential onto Ker j.
"""

from __future__ import annotations

import itertools

import numpy as np

from .geometry import fd_gradient, p_op, sym_product, symmetrize


def _wave(kx, ky, phase):
    """cos(pi x/2) cos(pi y/2) sin(kx x + ky y + phase), zero on the square's boundary."""
    def fn(p):
        x, y = p[..., 0], p[..., 1]
        cx, cy = np.cos(np.pi * x / 2), np.cos(np.pi * y / 2)
        sx, sy = np.sin(np.pi * x / 2), np.sin(np.pi * y / 2)
        arg = kx * x + ky * y + phase
        s, c = np.sin(arg), np.cos(arg)
        v = cx * cy * s
        dx = -np.pi / 2 * sx * cy * s + cx * cy * kx * c
        dy = -np.pi / 2 * cx * sy * s + cx * cy * ky * c
        return v, np.stack([dx, dy], -1)
    return fn


def potential(rng, rank, n_terms=2):
    """Random rank-``rank`` potential h and its symmetrized derivative, as callables."""
    terms = [(_wave(*rng.uniform(-2, 2, 2), rng.uniform(0, 3)),
              symmetrize(rng.normal(size=(2,) * rank), rank)) for _ in range(n_terms)]

    def h(x):
        out = 0.0
        for fn, A in terms:
            v = fn(x)[0]
            out = out + v.reshape(v.shape + (1,) * rank) * A
        return out

    def dh(x):
        out = 0.0
        for fn, A in terms:
            g = fn(x)[1]
            out = out + sym_product(g, 1, np.broadcast_to(A, x.shape[:-1] + A.shape), rank)
        return out

    return h, dh


def holomorphic_tensor(rank, c=0.7 + 0.3j):
    """Trace-free and divergence-free rank-``rank`` field from exp(c z)."""
    def w(x):
        z = x[..., 0] + 1j * x[..., 1]
        f = np.exp(c * z)
        out = np.zeros(x.shape[:-1] + (2,) * rank)
        for idx in itertools.product(range(2), repeat=rank):
            out[(Ellipsis,) + idx] = np.real(1j ** sum(idx) * f)
        return out
    return w


def trace_free_potential(rng, rank):
    """Potential projected onto Ker j; its d^s by finite differences."""
    h, dh = potential(rng, rank)
    if rank < 2:
        return h, dh
    eye = np.eye(2)

    def hp(x):
        return p_op(h(x), eye, eye, rank)

    def dhp(x):
        return symmetrize(fd_gradient(hp, x, 1e-5), rank + 1)

    return hp, dhp


def smooth_scalar(x):
    return np.exp(-(x[..., 0] - 0.1) ** 2 - 2.0 * x[..., 1] ** 2)


def trace_datum(rank):
    """A smooth rank-``rank`` field (rank 0 or 1) used as the trace part."""
    if rank == 0:
        return smooth_scalar
    return lambda x: np.stack([smooth_scalar(x), 0.5 * smooth_scalar(x) * x[..., 0]], -1)
