import numpy as np
import pytest
import scipy.linalg
import scipy.sparse
from hypothesis import given
from hypothesis import strategies as st

from igauq import randomfield as rf
from igauq.geometry import KnotVector, MultipatchSurface, NurbsPatch, cube, sphere


def unit_square():
    kv = KnotVector(1, [0, 0, 1, 1])
    ctrl = np.array([[[0, 0, 0], [0, 1, 0]], [[1, 0, 0], [1, 1, 0]]], dtype=float)
    return MultipatchSurface([NurbsPatch(kv, kv, ctrl)], closed=False)


@pytest.fixture(scope="module")
def cube_space():
    return rf.SplineSpace(cube(), 2, 0)


def test_kernel_at_coincidence():
    k = rf.gaussian_kernel(1 / 20, 4.0)
    assert np.array_equal(k(np.ones(3), np.ones(3))[0, 0], np.eye(3) / 20)


@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_kernel_symmetric(v):
    k = rf.gaussian_kernel(0.3, 2.0)
    x, y = np.array(v[:3]), np.array(v[3:])
    assert np.array_equal(k(x, y), k(y, x))


def test_kernel_decays_monotonically():
    k = rf.gaussian_kernel(1.0, 1.0)
    vals = [k(np.zeros(3), np.array([r, 0, 0]))[0, 0, 0, 0] for r in np.linspace(0, 8, 30)]
    assert np.all(np.diff(vals) < 0) and vals[-1] < 1e-25
    with pytest.raises(ValueError):
        rf.gaussian_kernel(0.0, 1.0)


def test_mass_flat_square_piecewise_constant():
    space = rf.SplineSpace(unit_square(), 0, 1, continuous=False)
    M = rf.assemble_mass(space).toarray()
    assert np.allclose(M, np.eye(4) / 4, atol=1e-15)


def test_mass_total_is_area(cube_space):
    M = rf.assemble_mass(cube_space)
    assert M.sum() == pytest.approx(6.0, abs=1e-10)
    assert abs(M - M.T).max() == 0.0
    np.linalg.cholesky(M.toarray())


def test_sphere_space_matches_geometry():
    s = sphere(spans=4)
    space = rf.SplineSpace(s, 2, 1)
    assert space.matched
    # the sphere measure is not polynomial, so match the quadrature orders
    M = rf.assemble_mass(space, q=8)
    assert M.sum() == pytest.approx(s.area(order=8), rel=1e-10)


def test_continuous_space_dimension(cube_space):
    # 6 patches of 3x3 control points glued along edges: 26 distinct anchors
    assert cube_space.n_local == 54
    assert cube_space.n == 26
    T = cube_space.T
    assert T.shape == (26, 54)
    assert np.all(np.asarray(T.sum(axis=0)).ravel() == 1)


def test_rank_one_kernel_single_pivot(cube_space):
    g = lambda X: np.stack([np.sin(X[:, 0]), X[:, 1] + 1, np.cos(X[:, 2])], axis=1)
    fac = rf.pivoted_cholesky(rf.rank_one_kernel(g), cube_space, 1e-12)
    assert fac.rank == 1
    assert fac.trace_error <= 1e-12


def test_dense_two_by_two():
    A = np.array([[4.0, 2.0], [2.0, 3.0]])
    fac = rf.pivoted_cholesky_dense(A)
    assert np.abs(fac.L @ fac.L.T - A).max() <= 1e-14
    assert fac.pivots.tolist() == [0, 1]


def test_negative_pivot():
    with pytest.raises(rf.KernelNotPositiveError):
        rf.pivoted_cholesky_dense(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(rf.KernelNotPositiveError):
        rf.pivoted_cholesky_dense(np.array([[-1.0, 0.0], [0.0, 1.0]]))


@given(st.integers(0, 10**6), st.integers(2, 12))
def test_cholesky_history_monotone(seed, n):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    A = B @ B.T
    fac = rf.pivoted_cholesky_dense(A, tol=1e-14)
    assert np.all(np.diff(fac.history) <= 1e-12 * np.trace(A))
    resid = np.trace(A) - np.trace(fac.L @ fac.L.T)
    assert resid <= max(1e-14 * np.trace(A), fac.history[-1] + 1e-10 * np.trace(A))


def test_cholesky_trace_tolerance(cube_space):
    for tol in (1e-3, 1e-6, 1e-9):
        fac = rf.pivoted_cholesky(rf.gaussian_kernel(1 / 20, 4.0), cube_space, tol)
        assert fac.trace_error <= tol
    with pytest.raises(ValueError):
        rf.pivoted_cholesky(rf.gaussian_kernel(1 / 20, 4.0), cube_space, 1.5)


def test_reduced_eig_identity():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((8, 8))
    M = B @ B.T + 8 * np.eye(8)
    lam, chi = rf.reduced_eig(scipy.linalg.sqrtm(M).real, scipy.sparse.csc_matrix(M))
    assert np.abs(lam - 1).max() <= 1e-12
    assert np.abs(chi.T @ M @ chi - np.eye(8)).max() <= 1e-10


def test_reduced_eig_random_12_dofs():
    rng = np.random.default_rng(12)
    L = rng.standard_normal((12, 5))
    B = rng.standard_normal((12, 12))
    M = B @ B.T + 12 * np.eye(12)
    lam, chi = rf.reduced_eig(L, scipy.sparse.csc_matrix(M))
    dense = scipy.linalg.eigh(L @ L.T, M, eigvals_only=True)[::-1][:5]
    assert len(lam) <= 5
    assert np.abs(lam - dense).max() <= 1e-8 * dense[0]
    assert np.abs(chi.T @ M @ chi - np.eye(len(lam))).max() <= 1e-8
    assert np.all(np.diff(lam) <= 0)


def test_reduced_eig_empty():
    lam, chi = rf.reduced_eig(np.zeros((4, 0)), scipy.sparse.eye(4))
    assert lam.shape == (0,) and chi.shape == (4, 0)


def test_truncate():
    lam = np.array([4.0, 2.0, 1.0, 1.0])
    chi = np.eye(4)
    assert len(rf.truncate(lam, chi, 0.75)[0]) == 2
    assert len(rf.truncate(lam, chi, 1.0)[0]) == 4
    assert len(rf.truncate(lam, chi, 0.99, max_modes=1)[0]) == 1
    with pytest.raises(ValueError):
        rf.truncate(lam, chi, 0.0)


@given(st.lists(st.floats(1e-6, 10.0), min_size=1, max_size=10), st.floats(0.01, 1.0))
def test_truncate_minimal(lam, frac):
    lam = np.sort(lam)[::-1]
    kept, _ = rf.truncate(lam, np.eye(len(lam)), frac)
    m = len(kept)
    assert kept.sum() >= frac * lam.sum() * (1 - 1e-12)
    assert m == 1 or lam[: m - 1].sum() < frac * lam.sum()
    assert np.all(np.diff(kept) <= 0)


def test_kl_properties(cube_kl):
    space = cube_kl.space
    M = rf.assemble_mass(space)
    Mv = scipy.sparse.block_diag([M] * 3).toarray()
    G = cube_kl.modes.T @ Mv @ cube_kl.modes
    assert np.abs(G - np.eye(cube_kl.rank)).max() <= 1e-8
    assert np.all(np.diff(cube_kl.eigenvalues) <= 0)


def test_mercer_trace(unit_cube):
    space = rf.SplineSpace(unit_cube, 2, 0)
    fac = rf.pivoted_cholesky(rf.gaussian_kernel(1 / 20, 4.0), space, 1e-10)
    lam, _ = rf.reduced_eig(fac, rf.assemble_mass(space))
    # projection onto the spline space loses a little trace
    assert lam.sum() == pytest.approx(3 / 20 * 6, rel=2e-3)
    assert lam.sum() <= 3 / 20 * 6


def test_deform_zero_is_identity(cube_kl, unit_cube):
    s = rf.deform_surface(cube_kl, np.zeros(cube_kl.rank))
    uv = np.random.default_rng(0).random((50, 2))
    for p, q in zip(unit_cube.patches, s.patches):
        assert np.abs(p.evaluate(uv[:, 0], uv[:, 1]) - q.evaluate(uv[:, 0], uv[:, 1])).max() <= 1e-14


def test_deform_first_mode(cube_kl, unit_cube):
    e1 = np.zeros(cube_kl.rank)
    e1[0] = 1.0
    s = rf.deform_surface(cube_kl, e1)
    mode = rf.KLExpansion(cube_kl.space, np.ones(1), cube_kl.modes[:, :1] * np.sqrt(cube_kl.eigenvalues[0]))
    uv = np.random.default_rng(1).random((50, 2))
    for ip, (p, q) in enumerate(zip(unit_cube.patches, s.patches)):
        disp = q.evaluate(uv[:, 0], uv[:, 1]) - p.evaluate(uv[:, 0], uv[:, 1])
        assert np.abs(disp - mode.displacement_at(np.ones(1), ip, uv[:, 0], uv[:, 1])).max() <= 1e-12


@given(st.integers(0, 10**6), st.floats(0.0, 1.0))
def test_deform_affine(cube_kl, seed, alpha):
    rng = np.random.default_rng(seed)
    y1, y2 = rng.uniform(-1, 1, (2, cube_kl.rank))
    c = lambda y: np.concatenate([p.control.ravel() for p in rf.deform_surface(cube_kl, y, validate=False).patches])
    lhs = c(alpha * y1 + (1 - alpha) * y2)
    rhs = alpha * c(y1) + (1 - alpha) * c(y2)
    assert np.abs(lhs - rhs).max() <= 1e-13


def test_deform_keeps_glue(cube_kl):
    s = rf.deform_surface(cube_kl, np.random.default_rng(3).uniform(-1, 1, cube_kl.rank))
    t = np.linspace(0, 1, 33)
    for g in s.glue:
        a = s.patches[g.patch].edge_points(g.edge, t)
        b = s.patches[g.other_patch].edge_points(g.other_edge, t)
        assert np.abs(a - (b if g.orientation > 0 else b[::-1])).max() <= 1e-12


def test_large_deformation_rejected(cube_kl):
    big = rf.KLExpansion(cube_kl.space, cube_kl.eigenvalues * 1e4, cube_kl.modes)
    rng = np.random.default_rng(0)
    with pytest.raises(rf.SampleRejected) as info:
        for _ in range(20):
            rf.deform_surface(big, rng.uniform(-1, 1, big.rank))
    assert info.value.y is not None


def test_sample_rejected_pickles():
    import pickle

    e = pickle.loads(pickle.dumps(rf.SampleRejected("bad", np.ones(2), 3)))
    assert str(e) == "bad" and e.level == 3 and e.y.tolist() == [1.0, 1.0]


def test_parameter_dimension(cube_kl):
    with pytest.raises(ValueError):
        cube_kl.coefficients(np.zeros(cube_kl.rank + 1))
