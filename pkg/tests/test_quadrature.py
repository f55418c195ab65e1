import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from igauq.quadrature import (
    AnisotropyWeights,
    gauss_legendre,
    halton_points,
    halton_rule,
    primes,
    radical_inverse,
    smolyak_indices,
    sparse_grid,
    tensor_rule,
)


def test_halton_base2():
    assert halton_points(3, 1)[:, 0].tolist() == [0.5, 0.25, 0.75]


def test_halton_first_node():
    rule = halton_rule(1, 2)
    assert rule.nodes[0] == pytest.approx([0.0, -1.0 / 3.0], abs=1e-15)
    assert rule.kind == "qmc"


def test_halton_offset_continues_sequence():
    a = halton_points(10, 3)
    b = halton_points(4, 3, offset=6)
    assert np.array_equal(a[6:], b)


def test_primes_and_radical_inverse():
    assert primes(6) == [2, 3, 5, 7, 11, 13]
    assert radical_inverse(np.array([1, 2, 3, 4]), 3).tolist() == pytest.approx([1 / 3, 2 / 3, 1 / 9, 4 / 9])


@pytest.mark.parametrize("m,floor", [(1, 0.8), (2, 0.8), (3, 0.75), (4, 0.75)])
def test_halton_convergence_rate(m, floor):
    # least-squares rates measured for unscrambled Halton: 2.0, 0.91, 0.78, 0.79
    exact = np.sin(1.0) ** m
    ns = 2 ** np.arange(6, 15)
    errs = [abs(halton_rule(int(n), m).integrate(lambda y: np.prod(np.cos(y))) - exact) for n in ns]
    rate = -np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert rate > floor


def test_gauss_legendre_two_points():
    x, w = gauss_legendre(2)
    assert x == pytest.approx([-1 / np.sqrt(3), 1 / np.sqrt(3)], abs=1e-15)
    assert w == pytest.approx([0.5, 0.5], abs=1e-15)


@pytest.mark.parametrize("n", range(1, 30))
def test_gauss_legendre_moments(n):
    x, w = gauss_legendre(n)
    assert abs(w.sum() - 1.0) <= 1e-14
    assert abs(w @ x ** (2 * n - 1)) <= 1e-14
    if n >= 2:
        assert abs(w @ x**2 - 1 / 3) <= 1e-14
    ref, rw = np.polynomial.legendre.leggauss(n)
    assert np.abs(x - ref).max() <= 1e-14
    assert np.abs(w - rw / 2).max() <= 1e-14


def test_sparse_grid_1d_collapse():
    sg = sparse_grid(2, m=1)
    x, w = gauss_legendre(3)
    order = np.argsort(sg.nodes[:, 0])
    assert np.abs(sg.nodes[order, 0] - x).max() <= 1e-14
    # the one-point node stays with zero weight
    w_sg = sg.weights[order]
    assert np.abs(w_sg - w).max() <= 1e-14


def test_sparse_grid_root_only():
    sg = sparse_grid(0, m=4)
    assert len(sg) == 1 and sg.weights[0] == 1.0
    with pytest.raises(ValueError):
        sparse_grid(-1, m=2)
    with pytest.raises(ValueError):
        sparse_grid(1)


@pytest.mark.parametrize("m,q", [(2, 3), (3, 3), (4, 2), (5, 4)])
def test_sparse_grid_product_moment(m, q):
    sg = sparse_grid(q, m=m)
    val = sg.integrate(lambda y: np.prod(1 + y / 2))
    assert val == pytest.approx(1.0, abs=1e-13)
    assert abs(sg.weights.sum() - 1.0) <= 1e-12


def test_sparse_grid_exactness_total_degree():
    sg = sparse_grid(3, m=2)
    # level-3 isotropic rule integrates y1^2 y2^2 exactly (uses 3-point rules in both)
    assert sg.integrate(lambda y: y[0] ** 2 * y[1] ** 2) == pytest.approx(1 / 9, abs=1e-14)
    assert sg.integrate(lambda y: y[0] ** 4) == pytest.approx(1 / 5, abs=1e-14)


def _node_set(rule):
    return {tuple(np.round(y, 12) + 0.0) for y in rule.nodes}


@given(st.integers(1, 3), st.integers(0, 4))
def test_sparse_grid_nested(m, q):
    g = AnisotropyWeights(np.linspace(1.0, 2.0, m))
    assert _node_set(sparse_grid(q, g)) <= _node_set(sparse_grid(q + g.gamma.min(), g))


@given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=6))
def test_anisotropy_weights_from_eigenvalues(lam):
    lam = np.sort(lam)[::-1]
    g = AnisotropyWeights.from_eigenvalues(lam)
    assert g.gamma[0] == 1.0
    assert np.all(np.diff(g.gamma) >= 0)
    assert np.all(g.gamma >= 1.0)


def test_flat_spectrum_is_isotropic():
    assert np.array_equal(AnisotropyWeights.from_eigenvalues(np.ones(4)).gamma, np.ones(4))


def test_anisotropy_validation():
    with pytest.raises(ValueError):
        AnisotropyWeights([1.0, 0.0])
    with pytest.raises(ValueError):
        AnisotropyWeights([2.0, 1.0])


def test_smolyak_indices_downward_closed():
    idx = set(smolyak_indices(4, [1.0, 1.5, 2.5]))
    for i in idx:
        for k in range(3):
            if i[k] > 1:
                j = list(i)
                j[k] -= 1
                assert tuple(j) in idx


@given(st.integers(1, 64), st.integers(1, 5))
def test_weights_sum_to_one(n, m):
    assert abs(halton_rule(n, m).weights.sum() - 1.0) <= 1e-12
    assert abs(tensor_rule([min(n, 5)] * min(m, 3)).weights.sum() - 1.0) <= 1e-12


def test_csv_dump(tmp_path):
    path = tmp_path / "rule.csv"
    sparse_grid(2, m=2).to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "y1,y2,weight"
    assert len(lines) == 1 + len(sparse_grid(2, m=2))


def test_rules_are_immutable():
    rule = halton_rule(4, 2)
    with pytest.raises(ValueError):
        rule.nodes[0, 0] = 1.0
