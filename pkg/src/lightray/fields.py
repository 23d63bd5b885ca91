"""Smooth test fields with closed-form gradients.

All builders return :class:`~lightray.geometry.SymTensorField` instances (or
the spacetime variant) whose ``gradient_fn`` is exact, so downstream
identities are not polluted by finite-difference error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SymTensorField, symmetrize


@dataclass(frozen=True)
class SpacetimeTensorField(SymTensorField):
    """Symmetric tensor field on R x M; point index 0 is time.

    ``t_min``/``t_max`` bound the temporal support (the field vanishes
    outside it).
    """

    t_min: float = -np.inf
    t_max: float = np.inf


def poly_bump(y, center, radius, power=8):
    """(1 - |y-c|^2 / r^2)^power on the ball, zero outside; value and gradient."""
    y = np.asarray(y, dtype=float)
    d = (y - center) / radius
    u = 1.0 - np.sum(d * d, axis=-1)
    pos = np.where(u > 0.0, u, 0.0)
    val = pos ** power
    grad = (-2.0 * power / radius) * (pos ** (power - 1))[..., None] * d
    return val, grad


def gaussian(y, center, widths, amplitude=1.0):
    """amplitude * exp(-sum(((y-c)/w)^2) / 2); value and gradient."""
    y = np.asarray(y, dtype=float)
    d = (y - center) / widths
    val = amplitude * np.exp(-0.5 * np.sum(d * d, axis=-1))
    return val, -val[..., None] * d / widths


def _bump_sum_fns(centers, radii, coeffs, rank, power):
    centers = [np.asarray(c, dtype=float) for c in centers]
    coeffs = [np.asarray(a, dtype=float) for a in coeffs]

    def comps(y):
        y = np.asarray(y, dtype=float)
        out = 0.0
        for c, r, a in zip(centers, radii, coeffs):
            val, _ = poly_bump(y, c, r, power)
            out = out + val.reshape(val.shape + (1,) * rank) * a
        return np.broadcast_to(out, y.shape[:-1] + (y.shape[-1],) * rank).copy()

    def grad(y):
        y = np.asarray(y, dtype=float)
        out = 0.0
        for c, r, a in zip(centers, radii, coeffs):
            _, dv = poly_bump(y, c, r, power)
            dv = dv.reshape(dv.shape[:-1] + (1,) * rank + dv.shape[-1:])
            out = out + dv * a[..., None]
        return np.broadcast_to(out, y.shape[:-1] + (y.shape[-1],) * (rank + 1)).copy()

    return comps, grad


def bump_tensor(centers, radii, coeffs, rank, dim, power=8, spacetime=False):
    """Sum of polynomial bumps times constant symmetric coefficient tensors."""
    comps, grad = _bump_sum_fns(centers, radii, coeffs, rank, power)
    if not spacetime:
        return SymTensorField(rank, dim, comps, grad)
    t_min = min(c[0] - r for c, r in zip(centers, radii))
    t_max = max(c[0] + r for c, r in zip(centers, radii))
    return SpacetimeTensorField(rank, dim, comps, grad, t_min=t_min, t_max=t_max)


def random_bump_tensor(rng, rank, dim, n_bumps=2, spatial_extent=0.55, radius=(0.2, 0.35),
                       time_range=(-0.5, 0.5), spacetime=True, power=8):
    """Random compactly supported symmetric tensor field.

    For spacetime fields (``dim`` includes time) the spatial support stays
    inside the ball of radius ``spatial_extent + radius[1]`` and the
    temporal support inside ``time_range`` widened by the radius.
    """
    centers, radii, coeffs = [], [], []
    n_space = dim - 1 if spacetime else dim
    for _ in range(n_bumps):
        r = rng.uniform(*radius)
        direction = rng.normal(size=n_space)
        direction /= np.linalg.norm(direction)
        x = direction * spatial_extent * np.sqrt(rng.uniform())
        center = np.concatenate([[rng.uniform(*time_range)], x]) if spacetime else x
        a = rng.normal(size=(dim,) * rank) if rank else np.asarray(rng.normal())
        centers.append(center)
        radii.append(r)
        coeffs.append(symmetrize(a, rank))
    return bump_tensor(centers, radii, coeffs, rank, dim, power=power, spacetime=spacetime)


def gaussian_scalar(center, widths, amplitude=1.0, spacetime=False, t_support=None):
    """Scalar Gaussian field; ``t_support`` marks the numerically relevant time window."""
    center = np.asarray(center, dtype=float)
    widths = np.asarray(widths, dtype=float)

    def comps(y):
        return gaussian(y, center, widths, amplitude)[0]

    def grad(y):
        return gaussian(y, center, widths, amplitude)[1]

    if not spacetime:
        return SymTensorField(0, len(center), comps, grad)
    if t_support is None:
        t_support = (center[0] - 9.0 * widths[0], center[0] + 9.0 * widths[0])
    return SpacetimeTensorField(0, len(center), comps, grad, t_min=t_support[0], t_max=t_support[1])


def gaussian_sum_scalar(centers, widths, amplitudes, spacetime=True):
    """Sum of Gaussians (each with its own width vector)."""
    parts = [gaussian_scalar(c, w, a, spacetime=spacetime) for c, w, a in zip(centers, widths, amplitudes)]

    def comps(y):
        return sum(p.components(y) for p in parts)

    def grad(y):
        return sum(p.gradient(y) for p in parts)

    dim = len(centers[0])
    if not spacetime:
        return SymTensorField(0, dim, comps, grad)
    return SpacetimeTensorField(0, dim, comps, grad, t_min=min(p.t_min for p in parts),
                                t_max=max(p.t_max for p in parts))


def zero_field(rank, dim, spacetime=False):
    def comps(y):
        y = np.asarray(y)
        return np.zeros(y.shape[:-1] + (dim,) * rank)

    def grad(y):
        y = np.asarray(y)
        return np.zeros(y.shape[:-1] + (dim,) * (rank + 1))

    if spacetime:
        return SpacetimeTensorField(rank, dim, comps, grad, t_min=0.0, t_max=0.0)
    return SymTensorField(rank, dim, comps, grad)


def time_shifted(field, shift):
    """The field y -> field(y - shift * e_t)."""
    e = np.zeros(field.dim)
    e[0] = shift
    grad = None if field.gradient_fn is None else (lambda y: field.gradient(np.asarray(y) - e))
    return SpacetimeTensorField(field.rank, field.dim, lambda y: field.components(np.asarray(y) - e),
                                grad, field.fd_step, t_min=field.t_min + shift,
                                t_max=field.t_max + shift)
