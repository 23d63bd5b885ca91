import numpy as np
import pytest
from scipy.integrate import quad

from lightray.errors import ResolutionError, SupportError
from lightray.fields import gaussian_scalar, zero_field
from lightray.rays import InflowSample, stack_samples
from lightray.reconstruction import (GaussianPhantom, PixelGrid, fan_grid, fbp, forward_scan,
                                     invert_slice, rebin_parallel, relative_l2, run_reconstruction,
                                     scan_window, slice_data, slice_stack, weighted_centroid)
from lightray.stationary import get_geometry

COUNTS = (128, 128)
CENTERED = GaussianPhantom([[0.0, 0.0, 0.0]], [[0.8, 0.2, 0.2]], [1.0])


def line_integrals(phantom, tau, samples):
    """Closed-form I(f^(tau, .)) for Gaussian phantoms (full lines; the disc cut is negligible)."""
    x, v = samples.x, samples.v
    out = np.zeros(len(x), dtype=complex)
    for c, w, amp in zip(phantom.centers, phantom.widths, phantom.amplitudes):
        assert w[1] == w[2]
        k = amp * w[0] * np.sqrt(2 * np.pi) * np.exp(-1j * tau * c[0] - 0.5 * (w[0] * tau) ** 2)
        d = x - c[1:]
        perp = d - np.sum(d * v, 1)[:, None] * v
        out += k * w[1] * np.sqrt(2 * np.pi) * np.exp(-0.5 * np.sum(perp ** 2, 1) / w[1] ** 2)
    return out


@pytest.fixture(scope="module")
def scan():
    geo = get_geometry("minkowski")
    samples = fan_grid(geo.conformal_manifold(), COUNTS)
    T_grid = scan_window(CENTERED, geo, dT=0.1)
    return geo, samples, forward_scan(geo, CENTERED, samples, T_grid)


# -- scanning and slicing -------------------------------------------------------

def test_zero_field_gives_zero_sinogram():
    geo = get_geometry("minkowski")
    samples = stack_samples([InflowSample(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))])
    sino = forward_scan(geo, zero_field(0, 3, spacetime=True), samples, np.linspace(-3, 1, 5))
    assert np.all(sino.values == 0.0)


def test_phantom_scan_matches_dense_quadrature():
    geo = get_geometry("minkowski")
    ph = GaussianPhantom([[0.2, 0.1, -0.1]], [[0.5, 0.25, 0.25]], [1.5])
    psi = 0.4
    smp = stack_samples([InflowSample(np.array([1.0, 0.0]), np.array([-np.cos(psi), np.sin(psi)]))])
    T_grid = scan_window(ph, geo)
    sino = forward_scan(geo, ph, smp, T_grid, step=0.005)
    L = 2 * np.cos(psi)
    for k in (0, len(T_grid) // 2, len(T_grid) - 3):
        T = T_grid[k]
        ref, _ = quad(lambda r: float(ph(r + T, smp.x[0] + r * smp.v[0])), 0.0, L, epsabs=1e-13)
        assert sino.values[k, 0] == pytest.approx(ref, abs=1e-9)


def test_generic_field_path_agrees_with_phantom_path():
    geo = get_geometry("minkowski")
    ph = GaussianPhantom([[0.0, 0.1, 0.1]], [[0.5, 0.3, 0.3]], [1.0])
    smp = fan_grid(geo.conformal_manifold(), (64, 64))[::97]
    T_grid = scan_window(ph, geo, dT=0.25)
    a = forward_scan(geo, ph, smp, T_grid).values
    b = forward_scan(geo, ph.field(), smp, T_grid).values
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))


def test_time_shift_equivariance():
    geo = get_geometry("minkowski")
    smp = fan_grid(geo.conformal_manifold(), (64, 64))[::131]
    T0 = 0.5
    f = GaussianPhantom([[0.0, 0.1, -0.2]], [[0.4, 0.3, 0.3]], [1.0], time_window=(-3.0, 3.5))
    g = GaussianPhantom([[T0, 0.1, -0.2]], [[0.4, 0.3, 0.3]], [1.0], time_window=(-3.0, 3.5))
    T_grid = np.linspace(-6.0, 4.0, 41)
    sf = forward_scan(geo, f, smp, T_grid).values
    sg = forward_scan(geo, g, smp, T_grid + T0).values
    assert np.max(np.abs(sf - sg)) <= 1e-12


def test_scan_requires_static_geometry_and_coverage():
    smp = stack_samples([InflowSample(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))])
    with pytest.raises(ValueError):
        forward_scan(get_geometry("rotation(0.1)"), CENTERED, smp, np.linspace(-8, 6, 10))
    with pytest.raises(SupportError):
        forward_scan(get_geometry("minkowski"), CENTERED, smp, np.linspace(-1, 1, 10))


def test_zero_frequency_slice_is_x_ray_transform(scan):
    _, samples, sino = scan
    g0 = slice_data(sino, 0.0)
    ref = line_integrals(CENTERED, 0.0, samples)
    # the oracle integrates full lines; the part outside the disc is below exp(-1 / (2 sigma^2))
    cut = np.exp(-0.5 / 0.2 ** 2)
    assert np.max(np.abs(g0 - ref)) <= 2 * cut * np.max(np.abs(ref))


def test_slice_on_diameter_matches_direct_quadrature():
    geo = get_geometry("minkowski")
    ph = GaussianPhantom([[0.3, 0.2, 0.1]], [[0.5, 0.3, 0.3]], [1.0])
    smp = stack_samples([InflowSample(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))])
    sino = forward_scan(geo, ph, smp, scan_window(ph, geo, dT=0.02), step=0.005)
    x0, v = smp.x[0], smp.v[0]
    re, _ = quad(lambda r: float(np.real(np.exp(1j * r) * ph.fhat(1.0, x0 + r * v))), 0, 2, epsabs=1e-13)
    im, _ = quad(lambda r: float(np.imag(np.exp(1j * r) * ph.fhat(1.0, x0 + r * v))), 0, 2, epsabs=1e-13)
    assert slice_data(sino, 1.0)[0] == pytest.approx(re + 1j * im, abs=1e-6)


def test_hermitian_symmetry(scan):
    _, _, sino = scan
    stack = slice_stack(sino, [-2.0, -0.5, 0.0, 0.5, 2.0], COUNTS)
    assert stack.hermitian_defect() <= 1e-10
    assert np.allclose(stack.at(-0.5), np.conj(stack.at(0.5)), atol=1e-12)


# -- inversion ---------------------------------------------------------------------

def test_fbp_recovers_centered_gaussian(scan):
    _, samples, sino = scan
    grid = PixelGrid(64)
    vals, info = invert_slice(slice_data(sino, 0.0), 0.0, samples, COUNTS, grid)
    assert info.method == "fbp"
    exact = CENTERED.fhat(0.0, grid.inside_points()).real
    assert relative_l2(vals, exact) <= 0.05


def test_weighted_inversion_at_half_frequency(scan):
    _, samples, sino = scan
    grid = PixelGrid(64)
    vals, info = invert_slice(slice_data(sino, 0.5), 0.5, samples, COUNTS, grid)
    assert info.method == "cg" and info.iterations > 0
    exact = CENTERED.fhat(0.5, grid.inside_points())
    assert relative_l2(vals, exact) <= 0.10


def test_round_trip_matches_fbp_oracle(scan):
    _, samples, sino = scan
    pts = PixelGrid(64).inside_points()
    from_scan = fbp(*rebin_parallel(slice_data(sino, 0.0).real, COUNTS), pts)
    from_exact = fbp(*rebin_parallel(line_integrals(CENTERED, 0.0, samples).real, COUNTS), pts)
    assert relative_l2(from_scan, from_exact) <= 0.02


def test_zero_data_zero_reconstruction():
    samples = fan_grid(get_geometry("minkowski").conformal_manifold(), (64, 64))
    grid = PixelGrid(32)
    for tau in (0.0, 0.5):
        vals, _ = invert_slice(np.zeros(len(samples)), tau, samples, (64, 64), grid)
        assert np.all(vals == 0.0)


def test_fbp_error_decreases_with_detector_sampling():
    man = get_geometry("minkowski").conformal_manifold()
    ph = GaussianPhantom([[0.0, 0.2, -0.1]], [[0.8, 0.15, 0.15]], [1.0])
    pts = PixelGrid(64).inside_points()
    exact = ph.fhat(0.0, pts).real
    errs = []
    for n in (64, 128, 256):
        smp = fan_grid(man, (n, n))
        vals = fbp(*rebin_parallel(line_integrals(ph, 0.0, smp).real, (n, n)), pts)
        errs.append(relative_l2(vals, exact))
    assert errs[0] > errs[1] > errs[2]


def test_resolution_error():
    man = get_geometry("minkowski").conformal_manifold()
    with pytest.raises(ResolutionError):
        fan_grid(man, (32, 128))
    smp = fan_grid(man, (64, 64))
    with pytest.raises(ResolutionError):
        invert_slice(np.zeros(len(smp)), 0.0, smp, (48, 48))


# -- end to end ------------------------------------------------------------------------

def test_two_bumps_are_separated():
    geo = get_geometry("minkowski")
    ph = GaussianPhantom([[0.0, -0.4, 0.0], [0.0, 0.4, 0.1]], [[0.8, 0.15, 0.15], [0.8, 0.15, 0.15]],
                         [1.0, 1.0])
    rec, rep = run_reconstruction(geo, ph, counts=(96, 96), n_pix=48, dT=0.25, n_t=3)
    assert rep["imag_residual"] <= 0.01
    grid = rec.grid
    vals = rec.values[1]                               # t = 0, the bumps' common centre time
    pts = grid.inside_points()
    for c in ph.centers:
        near = np.linalg.norm(pts - c[1:], axis=1) < 0.35
        w = np.clip(vals[near], 0, None)
        centroid = (w[:, None] * pts[near]).sum(0) / w.sum()
        assert np.linalg.norm(centroid - c[1:]) <= grid.h
    assert weighted_centroid(grid, vals)[0] == pytest.approx(0.0, abs=grid.h)


def test_phantom_config_block():
    ph = GaussianPhantom.from_config({"centers": [[0, 0.1, 0]], "widths": [[0.5, 0.2, 0.2]],
                                      "amplitudes": [2.0]})
    assert ph.time_window == (-3.0, 3.0)
    assert ph(0.0, np.array([0.1, 0.0])) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        GaussianPhantom([[0, 0, 0]], [[0.5, -0.2, 0.2]], [1.0])


def test_field_of_phantom_matches_gaussian_scalar():
    ph = GaussianPhantom([[0.1, 0.2, -0.3]], [[0.4, 0.3, 0.2]], [1.0])
    ref = gaussian_scalar([0.1, 0.2, -0.3], [0.4, 0.3, 0.2], spacetime=True)
    y = np.random.default_rng(0).uniform(-1, 1, (20, 3))
    assert np.allclose(ph.field().components(y), ref.components(y), atol=1e-15)
