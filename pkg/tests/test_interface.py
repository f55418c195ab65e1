import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from igauq import randomfield as rf
from igauq.bem import NearBoundaryWarning, eval_potential, solve
from igauq.geometry import cuboid_shell
from igauq.interface import (
    InterfaceCauchyData,
    InterfaceDomainError,
    InterfaceGrid,
    SecondMomentData,
    accumulate_second_moment,
    cgl_nodes,
    correlation_at,
    default_interface,
    eval_from_interface,
    sample_cauchy,
    variance_at,
)

from conftest import sphere_points


@pytest.fixture(scope="module")
def cube_data(cube_density, unit_cube, ctx, cube_grid):
    return sample_cauchy(cube_density, unit_cube, ctx, cube_grid)


@pytest.fixture(scope="module")
def far_points():
    return sphere_points(12, 5.0, centre=(0.5, 0.5, 0.5), seed=2)


def test_cgl_nodes():
    t = cgl_nodes(7)
    assert t[0] == 0.0 and t[-1] == 1.0
    assert np.all(np.diff(t) > 0)
    assert t == pytest.approx(1 - t[::-1], abs=1e-15)


def test_grid_layout(cube_grid):
    assert cube_grid.size == 6 * 49
    assert np.allclose(np.linalg.norm(cube_grid.normals, axis=1), 1.0)
    # outward normals on the box faces
    centre = np.array([0.5, 0.5, 0.5])
    assert np.all(np.einsum("ik,ik->i", cube_grid.nodes - centre, cube_grid.normals) > 0)


def test_interpolation_reproduces_polynomials(cube_grid):
    u, v = np.meshgrid(cgl_nodes(7), cgl_nodes(7), indexing="ij")
    f = lambda u, v: 1 + u**3 * v**2 - 2 * v**6 + u**6 * v**6
    vals = np.tile(f(u, v).ravel(), 6)
    coef = cube_grid.interpolation_coefficients(vals)
    uu, vv = np.random.default_rng(0).random((2, 30))
    assert np.abs(cube_grid.interpolate(coef, 3, uu, vv) - f(uu, vv)).max() < 1e-12


def test_interpolant_matches_direct_potential(cube_density, unit_cube, ctx):
    # 3x3x3 patch splits keep patches small relative to the distance to the cube
    grid = InterfaceGrid(cuboid_shell([-0.5] * 3, [1.5] * 3, (3, 3, 3)))
    data = sample_cauchy(cube_density, unit_cube, ctx, grid)
    cu, _ = data.coefficients(grid)
    rng = np.random.default_rng(1)
    err = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearBoundaryWarning)
        for ip in range(grid.n_patches):
            uu, vv = rng.random((2, 5))
            x = grid.surface.patches[ip].evaluate(uu, vv)
            err = max(err, np.abs(grid.interpolate(cu, ip, uu, vv) - eval_potential(cube_density, x)).max())
    assert err <= 1e-4 * np.abs(data.u).max()


def test_zero_data(cube_grid, ctx, far_points):
    z = InterfaceCauchyData.zeros(cube_grid.size)
    assert np.all(eval_from_interface(z, cube_grid, ctx, far_points) == 0)


def test_transparency_six_patch(cube_density, cube_data, cube_grid, ctx, far_points):
    # the 6-patch interface is coarser than the acceptance configuration
    ref = eval_potential(cube_density, far_points)
    u = eval_from_interface(cube_data, cube_grid, ctx, far_points)
    assert np.abs(u - ref).max() <= 1e-3 * np.abs(ref).max()


def test_nested_interfaces(cube_density, unit_cube, ctx, far_points):
    vals = []
    for lo, hi in ((-0.5, 1.5), (-1.0, 2.0)):
        g = InterfaceGrid(cuboid_shell([lo] * 3, [hi] * 3, (2, 2, 2)))
        vals.append(eval_from_interface(sample_cauchy(cube_density, unit_cube, ctx, g), g, ctx, far_points))
    assert np.abs(vals[0] - vals[1]).max() <= 1e-4 * np.abs(vals[0]).max()


def random_data(n, seed):
    rng = np.random.default_rng(seed)
    return InterfaceCauchyData(rng.standard_normal(n) + 1j * rng.standard_normal(n), rng.standard_normal(n) + 1j * rng.standard_normal(n))


def test_linearity(cube_grid, ctx, far_points):
    n = cube_grid.size
    samples = [random_data(n, s) for s in range(4)]
    w = np.array([0.1, 0.2, 0.3, 0.4])
    mean = sum((wi * d for wi, d in zip(w, samples)), InterfaceCauchyData.zeros(n))
    direct = sum(wi * eval_from_interface(d, cube_grid, ctx, far_points) for wi, d in zip(w, samples))
    via_mean = eval_from_interface(mean, cube_grid, ctx, far_points)
    assert np.abs(direct - via_mean).max() <= 1e-12 * np.abs(direct).max()


def test_vector_round_trip():
    d = random_data(5, 0)
    e = InterfaceCauchyData.from_vector(d.vector)
    assert np.array_equal(e.u, d.u) and np.array_equal(e.du, d.du)
    assert np.array_equal((d - d).u, np.zeros(5))
    with pytest.raises(ValueError):
        InterfaceCauchyData(np.zeros(3), np.zeros(4))


def test_two_sample_outer_average():
    a = InterfaceCauchyData([1 + 1j], [2.0])
    b = InterfaceCauchyData([-1.0], [1j])
    acc = SecondMomentData(1)
    accumulate_second_moment(a, acc, 0.5)
    accumulate_second_moment(b, acc, 0.5)
    # v = [du; u]: a -> [2, 1+i], b -> [i, -1]
    expect = 0.5 * np.array([[4, 2 * (1 - 1j)], [2 * (1 + 1j), 2]]) + 0.5 * np.array([[1, -1j], [1j, 1]])
    assert np.allclose(acc.matrix, expect, atol=0, rtol=0)
    assert acc.cor_du[0, 0] == 2.5 and acc.cor_u[0, 0] == 1.5
    assert acc.cor_du_u[0, 0] == np.conj(acc.cor_u_du[0, 0])


def test_second_moment_errors():
    acc = SecondMomentData(2)
    with pytest.raises(ValueError):
        accumulate_second_moment(random_data(3, 0), acc)
    with pytest.raises(ValueError):
        acc.add(SecondMomentData(3))
    with pytest.raises(ValueError):
        SecondMomentData(2, np.zeros((3, 3)))


@given(st.lists(st.tuples(st.integers(0, 10**6), st.floats(0.0, 5.0)), min_size=1, max_size=8))
def test_second_moment_hermitian_psd(updates):
    acc = SecondMomentData(3)
    for seed, w in updates:
        accumulate_second_moment(random_data(3, seed), acc, w)
        copy = acc.copy()
        acc.add(copy, 0.5)
    assert np.abs(acc.matrix - acc.matrix.conj().T).max() <= 1e-12 * max(1.0, np.abs(acc.matrix).max())
    assert np.linalg.eigvalsh(acc.matrix).min() >= -1e-10 * max(1.0, np.abs(acc.matrix).max())


def test_single_sample_correlation(cube_data, cube_grid, ctx, far_points):
    acc = accumulate_second_moment(cube_data, SecondMomentData(cube_grid.size))
    u = eval_from_interface(cube_data, cube_grid, ctx, far_points)
    cor = correlation_at(acc, cube_grid, ctx, far_points, far_points)
    assert np.abs(cor - np.abs(u) ** 2).max() <= 1e-12 * np.abs(u).max() ** 2
    assert correlation_at(acc, cube_grid, ctx, far_points[0], far_points[0]) == pytest.approx(cor[0], rel=1e-14)


def test_correlation_hermitian(cube_grid, ctx, far_points):
    acc = SecondMomentData(cube_grid.size)
    for s in range(3):
        accumulate_second_moment(random_data(cube_grid.size, s), acc, 1 / 3)
    x, xp = far_points[:6], far_points[6:]
    c1 = correlation_at(acc, cube_grid, ctx, x, xp)
    c2 = correlation_at(acc, cube_grid, ctx, xp, x)
    assert np.abs(c1 - c2.conj()).max() <= 1e-12 * np.abs(c1).max()


def test_antithetic_pair_variance(cube_data, cube_grid, ctx, far_points):
    acc = SecondMomentData(cube_grid.size)
    accumulate_second_moment(cube_data, acc, 0.5)
    accumulate_second_moment(-1.0 * cube_data, acc, 0.5)
    mean = 0.5 * cube_data + 0.5 * (-1.0 * cube_data)
    assert np.all(mean.u == 0)
    u = eval_from_interface(cube_data, cube_grid, ctx, far_points)
    var, imag = variance_at(acc, mean, cube_grid, ctx, far_points, return_imag=True)
    assert np.abs(var - np.abs(u) ** 2).max() <= 1e-12 * np.abs(u).max() ** 2
    assert imag.max() <= 1e-12 * np.abs(u).max() ** 2


def test_three_sample_ensemble(cube_kl, ctx, far_points):
    grid = InterfaceGrid(cuboid_shell([-0.5] * 3, [1.5] * 3, (2, 2, 2)))
    ys = np.random.default_rng(7).uniform(-1, 1, (3, cube_kl.rank))
    acc = SecondMomentData(grid.size)
    x, xp = far_points[:4], far_points[4:8]
    direct = np.zeros(4, complex)
    for y in ys:
        surf = rf.deform_surface(cube_kl, y)
        dens = solve(surf, ctx, 2, 0)
        accumulate_second_moment(sample_cauchy(dens, surf, ctx, grid), acc, 1 / 3)
        direct += eval_potential(dens, x) * np.conj(eval_potential(dens, xp)) / 3
    cor = correlation_at(acc, grid, ctx, x, xp)
    assert np.abs(cor - direct).max() <= 1e-4 * np.abs(direct).max()


def test_exterior_check(cube_grid, ctx):
    with pytest.raises(InterfaceDomainError):
        cube_grid.weights(np.array([[0.5, 0.5, 0.5]]), ctx.kappa)
    with pytest.raises(InterfaceDomainError):
        cube_grid.weights(np.array([[0.5, 0.5, 1.6]]), ctx.kappa)


def test_enclosure_check(cube_grid, unit_cube):
    cube_grid.check_enclosure(unit_cube)
    big = unit_cube.with_controls([2.0 * p.control for p in unit_cube.patches])
    with pytest.raises(rf.SampleRejected):
        cube_grid.check_enclosure(big)


def test_default_interface(unit_cube):
    T = default_interface(unit_cube, 0.5, (2, 1, 1))
    lo, hi = T.bounding_box()
    assert lo == pytest.approx([-0.5] * 3) and hi == pytest.approx([1.5] * 3)
    assert len(T) == 2 * (2 + 2 + 1)
