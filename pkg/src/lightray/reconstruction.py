"""Scalar reconstruction from light-ray data in the static flat case.

Pipeline: scan time-translated rays (:func:`forward_scan`), Fourier
transform in the translation variable (:func:`slice_stack`), invert the
resulting weighted ray transform per frequency on the unit disc
(:func:`invert_slice`) and assemble f(t, x) by the inverse time transform
(:func:`reconstruct_scalar`).

For the Minkowski product the time along a ray is a(s) = s, so slicing at
frequency tau leaves the spatial data int exp(i tau s) f^(tau, b(s)) ds.
At tau = 0 that is the plain X-ray transform and filtered backprojection
applies; other frequencies go through a regularized least-squares solve.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.ndimage import map_coordinates
from scipy.sparse.linalg import LinearOperator, cg, eigsh

from .errors import ResolutionError
from .fields import SpacetimeTensorField, gaussian
from .rays import InflowGrid, sample_inflow, trace_rays
from .tensor_suite import theorem2_suite  # noqa: F401  (re-exported)
from .transforms import RaySet, Sinogram, _trapezoid_weights, check_t_coverage, slice_sinogram

log = logging.getLogger(__name__)

MIN_COUNTS = 64


# --------------------------------------------------------------------------
# phantoms
# --------------------------------------------------------------------------

@dataclass
class GaussianPhantom:
    """Sum of space-time Gaussians A exp(-|(y - c) / w|^2 / 2).

    Each term factorizes as chi(t) g(x), which the scanner exploits.  The
    time window bounds the numerically relevant support.
    """

    centers: np.ndarray
    widths: np.ndarray
    amplitudes: np.ndarray
    time_window: tuple = None

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.widths = np.atleast_2d(np.asarray(self.widths, dtype=float))
        self.amplitudes = np.atleast_1d(np.asarray(self.amplitudes, dtype=float))
        if not (self.centers.shape == self.widths.shape and len(self.amplitudes) == len(self.centers)):
            raise ValueError("phantom centers, widths and amplitudes disagree in shape")
        if np.any(self.widths <= 0):
            raise ValueError("phantom widths must be positive")
        if self.time_window is None:
            lo = np.min(self.centers[:, 0] - 6.0 * self.widths[:, 0])
            hi = np.max(self.centers[:, 0] + 6.0 * self.widths[:, 0])
            self.time_window = (float(lo), float(hi))

    @classmethod
    def from_config(cls, block):
        return cls(block["centers"], block["widths"], block["amplitudes"],
                   tuple(block["time_window"]) if block.get("time_window") else None)

    @property
    def dim(self):
        return self.centers.shape[1]

    def terms(self):
        """(chi, g) pairs with chi(t) and g(x) vectorized."""
        out = []
        for c, w, amp in zip(self.centers, self.widths, self.amplitudes):
            def chi(t, c=c, w=w, amp=amp):
                return amp * np.exp(-0.5 * ((t - c[0]) / w[0]) ** 2)

            def g(x, c=c, w=w):
                return gaussian(x, c[1:], w[1:])[0]
            out.append((chi, g))
        return out

    def field(self):
        def comps(y):
            return sum(gaussian(y, c, w, a)[0] for c, w, a in
                       zip(self.centers, self.widths, self.amplitudes))

        def grad(y):
            return sum(gaussian(y, c, w, a)[1] for c, w, a in
                       zip(self.centers, self.widths, self.amplitudes))

        return SpacetimeTensorField(0, self.dim, comps, grad, t_min=self.time_window[0],
                                    t_max=self.time_window[1])

    def __call__(self, t, x):
        """f(t, x) for broadcastable ``t`` (...) and ``x`` (..., n)."""
        t = np.asarray(t, dtype=float)
        return sum(chi(t) * g(x) for chi, g in self.terms())

    def fhat(self, tau, x):
        """Exact time transform int exp(-i tau t) f(t, x) dt."""
        out = 0.0
        for c, w, amp in zip(self.centers, self.widths, self.amplitudes):
            k = amp * w[0] * np.sqrt(2 * np.pi) * np.exp(-1j * tau * c[0] - 0.5 * (w[0] * tau) ** 2)
            out = out + k * gaussian(x, c[1:], w[1:])[0]
        return out

    def temporal_bandwidth(self, rel=2e-3):
        """Frequency beyond which every term's spectrum is below ``rel`` of its peak."""
        return float(np.sqrt(2.0 * np.log(1.0 / rel)) / np.min(self.widths[:, 0]))


# --------------------------------------------------------------------------
# scanning and slicing
# --------------------------------------------------------------------------

def _require_static(geo):
    if not geo.static:
        raise ValueError(f"reconstruction needs a static geometry, got {geo.name}")


def fan_grid(man, counts):
    """Fan-beam inflow grid; raises :class:`ResolutionError` below 64 x 64."""
    if min(counts) < MIN_COUNTS:
        raise ResolutionError(f"inflow grid {counts[0]}x{counts[1]} is below {MIN_COUNTS}x{MIN_COUNTS}")
    return sample_inflow(man, counts)


def forward_scan(geo, f, samples, T_grid, step=0.01, chunk=8):
    """Sinogram L f(T, x, v) over translations ``T_grid`` and inflow ``samples``.

    ``f`` is a scalar spacetime field or a :class:`GaussianPhantom`; the
    latter is scanned term by term as sum_p w_p g(b_p) chi(a_p + T).
    """
    _require_static(geo)
    rays = trace_rays(geo, samples, step=step)
    rs = RaySet(rays)
    T_grid = np.asarray(T_grid, dtype=float)
    a = rs.y[:, 0]
    fld = f.field() if isinstance(f, GaussianPhantom) else f
    check_t_coverage(fld, a.min(), a.max(), T_grid)
    if not isinstance(f, GaussianPhantom):
        vals = np.stack([rs.integrate(fld.components(np.column_stack([a + T, rs.y[:, 1:]])))
                         for T in T_grid])
        return Sinogram(T_grid, samples, vals)
    vals = np.zeros((len(T_grid), rs.n))
    cols = np.arange(len(a))
    for chi, g in f.terms():
        M = sparse.csr_matrix((rs.w * g(rs.y[:, 1:]), (rs.ids, cols)), shape=(rs.n, len(a)))
        for lo in range(0, len(T_grid), chunk):
            T = T_grid[lo:lo + chunk]
            vals[lo:lo + chunk] += (M @ chi(a[:, None] + T[None, :])).T
    return Sinogram(T_grid, samples, vals)


@dataclass
class SliceStack:
    """Frequency slices g_tau of a sinogram over one inflow grid.

    ``phase_corrected`` records whether the exp(i tau a) weights have been
    divided out of the data (they have not, for slices made here).
    """

    taus: np.ndarray
    data: np.ndarray
    samples: InflowGrid
    counts: tuple
    phase_corrected: bool = False

    def hermitian_defect(self):
        """max |g_{-tau} - conj g_tau| / max |g| over paired frequencies."""
        taus = np.asarray(self.taus)
        worst = 0.0
        for i, tau in enumerate(taus):
            j = np.nonzero(np.isclose(taus, -tau))[0]
            if len(j):
                worst = max(worst, float(np.max(np.abs(self.data[j[0]] - np.conj(self.data[i])))))
        return worst / max(float(np.max(np.abs(self.data))), 1e-300)

    def at(self, tau):
        i = int(np.argmin(np.abs(np.asarray(self.taus) - tau)))
        if not np.isclose(self.taus[i], tau):
            raise KeyError(f"no slice at tau={tau}")
        return self.data[i]


def slice_data(sino, tau):
    """g_tau(x, v) = int exp(-i tau T) L f(T, x, v) dT (trapezoid in T)."""
    return slice_sinogram(sino, tau)


def slice_stack(sino, taus, counts):
    taus = np.asarray(taus, dtype=float)
    w = _trapezoid_weights(sino.axis1)
    phase = np.exp(-1j * np.outer(taus, sino.axis1)) * w[None, :]
    return SliceStack(taus, phase @ sino.values, sino.samples, tuple(counts))


# --------------------------------------------------------------------------
# reconstruction grid
# --------------------------------------------------------------------------

@dataclass
class PixelGrid:
    """Node grid on [-1, 1]^2 with the unknowns restricted to the open disc."""

    n: int

    def __post_init__(self):
        self.axis = np.linspace(-1.0, 1.0, self.n)
        self.h = self.axis[1] - self.axis[0]
        X, Y = np.meshgrid(self.axis, self.axis, indexing="ij")
        self.points = np.stack([X, Y], axis=-1)
        self.mask = X ** 2 + Y ** 2 < 1.0
        self.index = -np.ones((self.n, self.n), dtype=int)
        self.index[self.mask] = np.arange(int(self.mask.sum()))

    @property
    def size(self):
        return int(self.mask.sum())

    def inside_points(self):
        return self.points[self.mask]

    def to_image(self, values):
        img = np.zeros((self.n, self.n), dtype=np.asarray(values).dtype)
        img[self.mask] = values
        return img


def _fan_geometry(samples):
    """Entry points, directions and chord lengths of straight fan rays in the unit disc."""
    x, v = samples.x, samples.v
    xv = np.sum(x * v, axis=1)
    length = np.maximum(-2.0 * xv, 0.0)
    return x, v, length


# --------------------------------------------------------------------------
# tau = 0: filtered backprojection
# --------------------------------------------------------------------------

def ramp_filter(n_det, dp):
    """Frequency response of the Ram-Lak kernel times a Hann window, padded length."""
    size = int(2 ** np.ceil(np.log2(2 * n_det)))
    k = np.arange(-(size // 2), size // 2)
    h = np.zeros(size)
    h[k == 0] = 1.0 / (4.0 * dp ** 2)
    odd = k % 2 == 1
    h[odd] = -1.0 / (np.pi * k[odd] * dp) ** 2
    H = np.real(np.fft.fft(np.fft.ifftshift(h)))
    freq = np.fft.fftfreq(size)
    return H * 0.5 * (1.0 + np.cos(2.0 * np.pi * freq)), size


def rebin_parallel(data, counts, n_angles=None, n_det=None):
    """Resample fan data D[theta_b, psi] to parallel data P[phi, p].

    A fan ray from boundary angle theta_b at angle psi to the inward normal
    is the line with direction angle phi = theta_b - psi + pi and signed
    distance p = -sin(psi).  Returns ``(P, phi, p)`` with phi in [0, pi).
    """
    n_b, n_d = counts
    n_angles = n_angles or n_b
    n_det = n_det or n_d
    D = np.asarray(data).reshape(n_b, n_d)
    phi = np.arange(n_angles) * np.pi / n_angles
    p = -1.0 + (np.arange(n_det) + 0.5) * 2.0 / n_det
    PHI, P = np.meshgrid(phi, p, indexing="ij")
    psi = -np.arcsin(P)
    theta = np.mod(PHI + psi - np.pi, 2.0 * np.pi)
    pad = 4
    it = theta / (2.0 * np.pi / n_b) + pad
    ip = (psi + 0.5 * np.pi) / (np.pi / n_d) - 0.5 + pad
    out = np.empty(PHI.shape, dtype=D.dtype)
    parts = [D.real, D.imag] if np.iscomplexobj(D) else [D]
    vals = []
    for part in parts:
        src = np.pad(np.pad(part, ((pad, pad), (0, 0)), mode="wrap"), ((0, 0), (pad, pad)), mode="edge")
        vals.append(map_coordinates(src, [it, ip], order=3, mode="nearest"))
    out[...] = vals[0] if len(vals) == 1 else vals[0] + 1j * vals[1]
    return out, phi, p


def fbp(parallel, phi, p, points):
    """Filtered backprojection of parallel data at ``points`` (..., 2)."""
    dp = p[1] - p[0]
    H, size = ramp_filter(len(p), dp)
    P = np.zeros((len(phi), size))
    P[:, :len(p)] = parallel
    Q = dp * np.real(np.fft.ifft(np.fft.fft(P, axis=1) * H[None, :], axis=1))[:, :len(p)]
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    out = np.zeros(len(pts))
    for i, ang in enumerate(phi):
        proj = -pts[:, 0] * np.sin(ang) + pts[:, 1] * np.cos(ang)
        out += np.interp(proj, p, Q[i], left=0.0, right=0.0)
    return (out * np.pi / len(phi)).reshape(np.shape(points)[:-1])


# --------------------------------------------------------------------------
# tau != 0: weighted ray operator and Tikhonov CG
# --------------------------------------------------------------------------

class WeightedRayOperator:
    """A_tau x = int exp(i tau s) (bilinear interpolant of x)(x_e + s v) ds per ray.

    The sample-to-node interpolation matrix S is real and shared by all
    frequencies; per frequency the phase-weighted ray sums R_tau are folded
    into an explicit sparse matrix A_tau = R_tau S.
    """

    def __init__(self, samples, grid, ds=None):
        self.grid = grid
        ds = ds or 0.75 * grid.h
        x, v, length = _fan_geometry(samples)
        K = np.maximum(np.ceil(length / ds).astype(int), 1)
        self.n_rays = len(x)
        self.indptr = np.concatenate([[0], np.cumsum(K)])
        self.ids = np.repeat(np.arange(self.n_rays), K)
        offs = np.arange(len(self.ids)) - np.repeat(self.indptr[:-1], K)
        dsr = (length / K)[self.ids]
        self.s = (offs + 0.5) * dsr
        self.w = dsr
        pts = x[self.ids] + self.s[:, None] * v[self.ids]
        fi = (pts + 1.0) / grid.h
        i0 = np.clip(np.floor(fi).astype(int), 0, grid.n - 2)
        fr = fi - i0
        rows, cols, vals = [], [], []
        n_s = len(self.s)
        for di in (0, 1):
            for dj in (0, 1):
                wgt = (fr[:, 0] if di else 1 - fr[:, 0]) * (fr[:, 1] if dj else 1 - fr[:, 1])
                col = grid.index[i0[:, 0] + di, i0[:, 1] + dj]
                keep = (col >= 0) & (wgt != 0)
                rows.append(np.arange(n_s)[keep])
                cols.append(col[keep])
                vals.append(wgt[keep])
        self.S = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                   shape=(n_s, grid.size))
        self._tau = None
        self._norm = None

    def matrix(self, tau):
        """(A_tau, A_tau^H) as CSR matrices, cached for the last frequency."""
        if self._tau != tau:
            R = sparse.csr_matrix((self.w * np.exp(1j * tau * self.s), np.arange(len(self.s)),
                                   self.indptr), shape=(self.n_rays, len(self.s)))
            A = (R @ self.S).tocsr()
            self._tau, self._A, self._AH = tau, A, A.conj().T.tocsr()
        return self._A, self._AH

    def forward(self, x, tau):
        return self.matrix(tau)[0] @ x

    def adjoint(self, r, tau):
        return self.matrix(tau)[1] @ r

    def normal(self, tau):
        A, AH = self.matrix(tau)
        n = self.grid.size
        return LinearOperator((n, n), matvec=lambda x: AH @ (A @ x), dtype=complex)

    def norm_estimate(self):
        """Largest eigenvalue of A_0^T A_0, an upper bound for every ||A_tau^H A_tau||.

        |A_tau x| <= A_0 |x| entrywise because the phases have modulus one
        and the interpolation weights are non-negative.
        """
        if self._norm is None:
            A = self.S.T @ sparse.csr_matrix((self.w, np.arange(len(self.s)), self.indptr),
                                             shape=(self.n_rays, len(self.s))).T
            N = (A @ A.T).tocsr()
            self._norm = float(eigsh(N, k=1, which="LA", tol=1e-3, return_eigenvectors=False,
                                     v0=np.ones(self.grid.size))[0])
        return self._norm


@dataclass
class InversionInfo:
    tau: float
    method: str
    iterations: int = 0
    residual: float = 0.0
    lam: float = 0.0
    seconds: float = 0.0

    def to_dict(self):
        return dict(self.__dict__)


def _cg_invert(op, g, tau, lam_factor, maxiter, rtol):
    N = op.normal(tau)
    lam = lam_factor * op.norm_estimate()
    n = op.grid.size
    A = LinearOperator((n, n), matvec=lambda x: N.matvec(x) + lam * x, dtype=complex)
    b = op.adjoint(np.asarray(g, dtype=complex), tau)
    count = [0]

    def tick(_):
        count[0] += 1

    x, _ = cg(A, b, rtol=rtol, maxiter=maxiter, callback=tick)
    res = float(np.linalg.norm(A.matvec(x) - b) / max(np.linalg.norm(b), 1e-300))
    return x, count[0], res, lam


def invert_slice(g, tau, samples, counts, grid=None, lam_factor=1e-4, maxiter=200,
                 rtol=1e-6, operator=None):
    """Recover f^(tau, .) on the disc nodes of ``grid`` from slice data ``g``.

    Returns ``(values, info)``; ``values`` is aligned with
    ``grid.inside_points()``.
    """
    if min(counts) < MIN_COUNTS:
        raise ResolutionError(f"inflow grid {counts[0]}x{counts[1]} is below {MIN_COUNTS}x{MIN_COUNTS}")
    grid = grid or PixelGrid(64)
    g = np.asarray(g)
    t0 = time.perf_counter()
    if tau == 0.0:
        P, phi, p = rebin_parallel(g.real, counts)
        vals = fbp(P, phi, p, grid.inside_points())
        return vals, InversionInfo(0.0, "fbp", seconds=time.perf_counter() - t0)
    op = operator or WeightedRayOperator(samples, grid)
    if not np.any(g):
        return np.zeros(grid.size, dtype=complex), InversionInfo(tau, "cg")
    x, its, res, lam = _cg_invert(op, g, tau, lam_factor, maxiter, rtol)
    log.debug("tau=%.3f cg iterations=%d residual=%.2e", tau, its, res)
    return x, InversionInfo(float(tau), "cg", its, res, lam, time.perf_counter() - t0)


# --------------------------------------------------------------------------
# end-to-end pipeline
# --------------------------------------------------------------------------

def tau_grid(bandwidth, window, oversample=2.0):
    """Non-negative half of a symmetric uniform frequency grid.

    The spacing 2 pi / (oversample * window) samples the spectrum of a
    signal supported in a window of that length with the requested margin.
    """
    dtau = 2.0 * np.pi / (oversample * window)
    n = int(np.ceil(bandwidth / dtau))
    return dtau * np.arange(n + 1)


@dataclass
class Reconstruction:
    t: np.ndarray
    grid: PixelGrid
    values: np.ndarray              # (n_t, n_inside) real part
    imag_residual: float
    taus: np.ndarray
    infos: list = field(default_factory=list)
    slices: np.ndarray = None      # (n_tau, n_inside) recovered f^(tau)

    def image(self, k):
        return self.grid.to_image(self.values[k])


def reconstruct_scalar(geo, sino, counts, taus, t_out, grid=None, lam_factor=1e-4, maxiter=200):
    """f(t, x) on ``t_out`` x disc nodes from a fan-beam sinogram.

    ``taus`` is the non-negative half of a symmetric uniform grid starting
    at 0.  Slices at -tau are taken from the data; the Hermitian symmetry
    of real data is checked and used to reuse the +tau inversions.
    """
    _require_static(geo)
    if not (geo.trivial and geo.base.boundary_kind == "disc"):
        raise ValueError("scalar reconstruction is implemented for the flat unit disc only")
    grid = grid or PixelGrid(64)
    taus = np.asarray(taus, dtype=float)
    if taus[0] != 0.0 or np.any(np.diff(taus) <= 0):
        raise ValueError("taus must start at 0 and increase")
    dtau = taus[1] - taus[0] if len(taus) > 1 else 1.0
    stack = slice_stack(sino, np.concatenate([-taus[:0:-1], taus]), counts)
    herm = stack.hermitian_defect()
    if herm > 1e-10:
        log.warning("slice data break Hermitian symmetry (defect %.2e)", herm)
    op = WeightedRayOperator(sino.samples, grid) if len(taus) > 1 else None
    F, infos = [], []
    for tau in taus:
        x, info = invert_slice(stack.at(tau), tau, sino.samples, counts, grid, lam_factor,
                               maxiter, operator=op)
        F.append(x)
        infos.append(info)
    F = np.array(F)
    t_out = np.asarray(t_out, dtype=float)
    # symmetric grid: tau_k and -tau_k with F(-tau) = conj F(tau)
    full_tau = np.concatenate([-taus[:0:-1], taus])
    full_F = np.concatenate([np.conj(F[:0:-1]), F])
    wts = np.full(len(full_tau), dtau)
    wts[[0, -1]] *= 0.5
    kern = np.exp(1j * np.outer(t_out, full_tau)) * wts[None, :] / (2.0 * np.pi)
    f = kern @ full_F
    imag = float(np.linalg.norm(f.imag) / max(np.linalg.norm(f.real), 1e-300))
    return Reconstruction(t_out, grid, f.real, imag, taus, infos, F)


def relative_l2(approx, exact):
    return float(np.linalg.norm(approx - exact) / np.linalg.norm(exact))


def scan_window(phantom, geo, samples=None, dT=0.2):
    """T grid covering the phantom's time window for chords of length <= diameter."""
    lo = phantom.time_window[0] - geo.base.diameter - dT
    hi = phantom.time_window[1] + dT
    n = int(np.ceil((hi - lo) / dT)) + 1
    return np.linspace(lo, lo + (n - 1) * dT, n)


def run_reconstruction(geo, phantom, counts=(128, 128), n_pix=64, step=0.01, dT=0.2,
                       oversample=2.0, n_t=17, lam_factor=1e-4, maxiter=200):
    """Scan, slice, invert and score a phantom; returns ``(Reconstruction, report)``."""
    t0 = time.perf_counter()
    man = geo.conformal_manifold()
    samples = fan_grid(man, counts)
    T_grid = scan_window(phantom, geo, dT=dT)
    sino = forward_scan(geo, phantom, samples, T_grid, step=step)
    t_scan = time.perf_counter() - t0
    lo, hi = phantom.time_window
    taus = tau_grid(phantom.temporal_bandwidth(), hi - lo, oversample)
    grid = PixelGrid(n_pix)
    t_out = np.linspace(lo, hi, n_t)
    rec = reconstruct_scalar(geo, sino, counts, taus, t_out, grid, lam_factor, maxiter)
    exact = phantom(t_out[:, None], grid.inside_points()[None, :, :])
    err = relative_l2(rec.values, exact)
    report = {
        "relative_l2_error": err,
        "imag_residual": rec.imag_residual,
        "n_tau": int(len(taus)),
        "tau_max": float(taus[-1]),
        "counts": list(counts),
        "pixels": n_pix,
        "cg_iterations": [i.iterations for i in rec.infos],
        "scan_seconds": t_scan,
        "seconds": time.perf_counter() - t0,
    }
    return rec, report


def weighted_centroid(grid, values):
    w = np.clip(values, 0.0, None)
    return (w[:, None] * grid.inside_points()).sum(0) / w.sum()


def default_phantom():
    """Off-centre space-time Gaussian used by the acceptance suite."""
    return GaussianPhantom([[0.0, 0.15, -0.1]], [[0.8, 0.2, 0.2]], [1.0])

