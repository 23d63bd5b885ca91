import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from lightray.errors import SupportError
from lightray.fields import (SpacetimeTensorField, bump_tensor, gaussian_scalar, random_bump_tensor,
                             time_shifted, zero_field)
from lightray.geometry import SymTensorField, get_manifold, sym_cov_derivative
from lightray.rays import (InflowSample, integrate_null_geodesics_direct, null_direction,
                           random_inflow, sample_inflow, trace_rays)
from lightray.stationary import GEOMETRY_IDS, get_geometry
from lightray.suites import default_conformal_factor, moment_suite
from lightray.transforms import (Sinogram, conformal_reparam_check, fourier_slice,
                                 generalized_ray_transform, generalized_ray_transform_batch,
                                 geodesic_ray_transform, geodesic_ray_transform_batch,
                                 light_ray_transform, light_ray_transform_batch, moment_transform,
                                 moment_transform_batch, slice_sinogram, t_grid_for,
                                 translation_sinogram, verify_gauge_kernel)

DIAMETER = InflowSample(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))


def _rays(gid, n, seed, a0=0.0, step=0.01):
    geo = get_geometry(gid)
    return geo, trace_rays(geo, random_inflow(geo.conformal_manifold(), n, np.random.default_rng(seed)),
                           a0=a0, step=step)


def _spatial_gaussian(center, width):
    center = np.asarray(center, dtype=float)

    def comps(x):
        return np.exp(-np.sum((np.asarray(x) - center) ** 2, -1) / (2 * width ** 2))

    return SymTensorField(0, 2, comps)


# -- light ray transform ---------------------------------------------------

def test_zero_field_gives_zero():
    geo, rays = _rays("rotation(0.1)", 3, 0)
    for m in range(3):
        assert np.all(light_ray_transform_batch(geo, zero_field(m, 3, spacetime=True), rays) == 0.0)


def test_unit_time_bump_integrates_to_one():
    geo = get_geometry("minkowski")
    ray = trace_rays(geo, DIAMETER, step=0.005)[0]
    sig = 0.05

    def comps(y):
        return np.exp(-0.5 * ((y[..., 0] - 1.0) / sig) ** 2) / (sig * np.sqrt(2 * np.pi))

    chi = SpacetimeTensorField(0, 3, comps, t_min=1.0 - 10 * sig, t_max=1.0 + 10 * sig)
    assert light_ray_transform(geo, chi, ray) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("gid", GEOMETRY_IDS)
def test_metric_is_annihilated(gid):
    geo, rays = _rays(gid, 4, 1)
    metric = geo.assemble(conformal=True)
    gbar = SpacetimeTensorField(2, 3, metric.matrix)
    vals = light_ray_transform_batch(geo, gbar, rays)
    assert np.max(np.abs(vals)) < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31))
def test_linearity(a, b, seed):
    geo, rays = _rays("rotation(0.1)", 3, 2, a0=-0.5)
    rng = np.random.default_rng(seed)
    f1 = random_bump_tensor(rng, 2, 3)
    f2 = random_bump_tensor(rng, 2, 3)
    comb = SymTensorField(2, 3, lambda y: a * f1.components(y) + b * f2.components(y))
    lhs = light_ray_transform_batch(geo, comb, rays)
    rhs = a * light_ray_transform_batch(geo, f1, rays) + b * light_ray_transform_batch(geo, f2, rays)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("T", [-0.7, 0.3, 1.1])
def test_time_translation_covariance(T):
    geo, rays = _rays("minkowski", 4, 3, a0=-0.5)
    alpha = random_bump_tensor(np.random.default_rng(4), 1, 3)
    along_shifted = light_ray_transform_batch(geo, alpha, rays, shift=T)
    shifted_field = light_ray_transform_batch(geo, time_shifted(alpha, -T), rays)
    assert np.allclose(along_shifted, shifted_field, atol=1e-13)
    explicit = light_ray_transform_batch(geo, alpha, [r.shifted(T) for r in rays])
    assert np.allclose(along_shifted, explicit, atol=1e-13)


def test_time_independent_integrand_is_shift_invariant():
    geo, rays = _rays("rotation(0.1)", 4, 5)
    w = _spatial_gaussian([0.1, 0.2], 0.3)
    stat = SpacetimeTensorField(0, 3, lambda y: w.components(y[..., 1:]))
    base = light_ray_transform_batch(geo, stat, rays)
    for T in (-2.0, 0.5, 3.0):
        assert np.allclose(light_ray_transform_batch(geo, stat, rays, shift=T), base, atol=1e-12)


# -- geodesic and generalized transforms ---------------------------------------

def test_geodesic_transform_chord_length():
    man = get_manifold("flat-disc")
    one = SymTensorField(0, 2, lambda x: np.ones(np.shape(x)[:-1]))
    assert geodesic_ray_transform(man, one, DIAMETER, step=0.01) == pytest.approx(2.0, abs=1e-9)
    grid = sample_inflow(man, (6, 5))
    vals = geodesic_ray_transform_batch(man, one, grid, step=0.01)
    assert np.allclose(vals, 2.0 * np.cos(grid.dir_param), atol=1e-9)


def test_geodesic_transform_matches_radon_oracle():
    man = get_manifold("flat-disc")
    center, width = np.array([0.2, -0.1]), 0.25
    bump = _spatial_gaussian(center, width)
    grid = random_inflow(man, 8, np.random.default_rng(6))
    vals = geodesic_ray_transform_batch(man, bump, grid, step=0.005)
    for x, v, val in zip(grid.x, grid.v, vals):
        L = -2.0 * float(x @ v)                      # chord length of the unit disc
        ref, _ = quad(lambda r: float(bump.components(x + r * v)), 0.0, L, epsabs=1e-13)
        assert val == pytest.approx(ref, abs=1e-9)


def test_gauge_one_form_has_zero_transform():
    man = get_manifold("conformal-disc(0.3)")
    h = random_bump_tensor(np.random.default_rng(7), 0, 2, spacetime=False, spatial_extent=0.3)
    dh = SymTensorField(1, 2, lambda x: sym_cov_derivative(man, h, x))
    grid = random_inflow(man, 10, np.random.default_rng(8))
    scale = np.max(np.abs(geodesic_ray_transform_batch(man, h, grid)))
    assert np.max(np.abs(geodesic_ray_transform_batch(man, dh, grid))) < 1e-8 * max(scale, 1.0)


def test_generalized_equals_geodesic_when_static():
    geo = get_geometry("conformal-minkowski")
    f = _spatial_gaussian([0.0, 0.3], 0.3)
    grid = random_inflow(geo.conformal_manifold(), 6, np.random.default_rng(9))
    a = generalized_ray_transform_batch(geo, f, grid, step=0.01)
    b = geodesic_ray_transform_batch(geo.conformal_manifold(), f, grid, step=0.01)
    assert np.allclose(a, b, atol=1e-13)
    assert generalized_ray_transform(geo, zero_field(0, 2), grid[0]) == 0.0


def test_generalized_matches_direct_projection():
    geo = get_geometry("rotation(0.1)")
    f = _spatial_gaussian([0.1, -0.2], 0.3)
    grid = random_inflow(geo.conformal_manifold(), 6, np.random.default_rng(10))
    vals = generalized_ray_transform_batch(geo, f, grid, step=0.01)
    y0 = np.concatenate([np.zeros((6, 1)), grid.x], axis=1)
    direct = integrate_null_geodesics_direct(geo, y0, null_direction(geo, y0, grid.v), step=0.01)
    ref = np.array([r.integrate(f.components(r.b)) for r in direct])
    assert np.allclose(vals, ref, atol=1e-8)


# -- moments ---------------------------------------------------------------------

def test_moment_zero_is_geodesic_transform():
    man = get_manifold("polar-disc")
    w = random_bump_tensor(np.random.default_rng(11), 2, 2, spacetime=False)
    grid = random_inflow(man, 5, np.random.default_rng(12))
    assert np.allclose(moment_transform_batch(man, w, grid, 0), geodesic_ray_transform_batch(man, w, grid),
                       atol=1e-14)


def test_first_moment_of_one_on_diameter():
    man = get_manifold("flat-disc")
    one = SymTensorField(0, 2, lambda x: np.ones(np.shape(x)[:-1]))
    assert moment_transform(man, one, DIAMETER, 1, step=0.01) == pytest.approx(2j, abs=1e-9)


def test_moment_integration_by_parts():
    res = moment_suite(ranks=(1, 2, 3), js=(1, 2, 3), n_fields=3, n_rays=4)
    assert res.passed, [(c.name, c.value) for c in res.criteria if not c.passed]


# -- Fourier slicing -----------------------------------------------------------

@pytest.mark.parametrize("gid", ["minkowski", "rotation(0.1)"])
def test_fourier_slice_identity(gid):
    geo, rays = _rays(gid, 2, 13)
    f = gaussian_scalar([0.1, 0.0, 0.2], [0.4, 0.3, 0.3], spacetime=True)
    for ray in rays:
        T_grid = t_grid_for(f, [ray], 401)
        for tau in (0.0, 1.0, 2.0):
            lhs, rhs = fourier_slice(geo, f, ray, tau, T_grid)
            assert abs(lhs - rhs) <= 1e-4 * max(abs(lhs), 1.0)


def test_fourier_slice_zero_field():
    geo, rays = _rays("minkowski", 1, 14)
    lhs, rhs = fourier_slice(geo, zero_field(0, 3, spacetime=True), rays[0], 1.0,
                             np.linspace(-3, 3, 11), t_quad=np.linspace(-1, 1, 11))
    assert lhs == 0 and rhs == 0


def test_fourier_slice_requires_coverage():
    geo, rays = _rays("minkowski", 1, 15)
    f = gaussian_scalar([0.0, 0.0, 0.0], [0.3, 0.3, 0.3], spacetime=True)
    with pytest.raises(SupportError):
        fourier_slice(geo, f, rays[0], 0.5, np.linspace(-0.5, 0.5, 21))


def test_translation_sinogram_slice_matches_pointwise():
    geo, rays = _rays("minkowski", 3, 16)
    f = gaussian_scalar([0.1, 0.0, 0.2], [0.4, 0.3, 0.3], spacetime=True)
    T_grid = t_grid_for(f, rays, 401)
    sino = translation_sinogram(geo, f, rays, T_grid)
    g = slice_sinogram(sino, 1.5)
    for k, ray in enumerate(rays):
        assert g[k] == pytest.approx(fourier_slice(geo, f, ray, 1.5, T_grid)[0], abs=1e-12)


def test_sinogram_csv_and_validation(tmp_path):
    grid = sample_inflow(get_manifold("flat-disc"), (2, 2))
    sino = Sinogram([0.0, 0.5], grid, np.array([[1, 2, 3, 4], [5, 6, 7, 8j]]))
    path = tmp_path / "sino.csv"
    sino.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["axis1", "boundary_param", "dir_param", "re", "im"]
    assert len(rows) == 1 + 8
    assert float(rows[-1][4]) == 8.0
    with pytest.raises(ValueError):
        Sinogram([0.0], grid, np.zeros((2, 4)))
    with pytest.raises(ValueError):
        Sinogram([0.0], grid, np.full((1, 4), np.nan))


# -- gauge kernel ----------------------------------------------------------------

def test_gauge_with_zero_potential_vanishes():
    geo, rays = _rays("rotation(0.1)", 6, 17, a0=-1.0)
    U = random_bump_tensor(np.random.default_rng(18), 0, 3, spatial_extent=0.3)
    res = verify_gauge_kernel(geo, zero_field(1, 3, spacetime=True), U, rays)
    assert res.max_abs < 1e-13


def test_gauge_scalar_potential_minkowski():
    geo, rays = _rays("minkowski", 100, 19, a0=-1.0)
    T = random_bump_tensor(np.random.default_rng(20), 0, 3, spatial_extent=0.3)
    res = verify_gauge_kernel(geo, T, None, rays)
    assert res.scale > 0.0
    assert res.relative <= 1e-6


@pytest.mark.parametrize("gid", GEOMETRY_IDS)
def test_gauge_rank_two_all_geometries(gid):
    geo, rays = _rays(gid, 20, 21, a0=-1.0)
    rng = np.random.default_rng(22)
    T = random_bump_tensor(rng, 1, 3, spatial_extent=0.3)
    U = random_bump_tensor(rng, 0, 3, spatial_extent=0.3)
    assert verify_gauge_kernel(geo, T, U, rays).relative <= 1e-5


def test_gauge_support_on_boundary_is_rejected():
    geo, rays = _rays("minkowski", 30, 23, a0=-1.0)
    T = bump_tensor([[0.0, 0.95, 0.0]], [0.3], [np.asarray(1.0)], 0, 3, spacetime=True)
    with pytest.raises(SupportError):
        verify_gauge_kernel(geo, T, None, rays)


# -- conformal reparametrization ---------------------------------------------------

def _local_bump(ray, m, seed):
    mid = ray.point[len(ray.s) // 2]
    coeff = np.random.default_rng(seed).normal(size=(3,) * m) if m else np.asarray(1.3)
    if m == 2:
        coeff = coeff + coeff.T
    return bump_tensor([mid], [0.6], [coeff], m, 3, spacetime=True)


def test_reparam_identity_factor():
    geo, rays = _rays("rotation(0.1)", 1, 24, a0=-1.0)

    def one(y):
        return np.ones(np.shape(y)[:-1]), np.zeros(np.shape(y))

    alpha = _local_bump(rays[0], 2, 25)
    lhs, rhs = conformal_reparam_check(geo, alpha, one, rays[0])
    # lhs comes from an independently integrated geodesic, so agreement is at integrator accuracy
    assert lhs == pytest.approx(rhs, rel=1e-9)


@pytest.mark.parametrize("m,tol", [(0, 1e-6), (2, 1e-5)])
def test_reparam_under_conformal_factor(m, tol):
    c_fn = default_conformal_factor()
    for gid in ("minkowski", "rotation(0.1)"):
        geo, rays = _rays(gid, 2, 26, a0=-1.0)
        for ray in rays:
            lhs, rhs = conformal_reparam_check(geo, _local_bump(ray, m, 27), c_fn, ray)
            assert abs(lhs - rhs) <= tol * max(abs(rhs), 1.0)
