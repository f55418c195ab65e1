import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from igauq import randomfield as rf
from igauq.bayes import (
    EstimatorFailure,
    ObservationSetup,
    circular_noise,
    gaussian_potential,
    ml_ratio_posterior,
    posterior_surface_report,
    prior_moments,
    synthesize_observations,
)
from igauq.mlq import LevelHierarchy
from igauq.quadrature import QuadratureRule, halton_rule, tensor_rule


def toy_forward(level, y):
    y = np.asarray(y)
    return np.array([y[0] + 1j * y[1], np.exp(1j * y.sum()) * (1 + 2.0**-(level + 3))])


def toy_quantity(y):
    y = np.asarray(y)
    return np.array([[y[0], y[1], y[0] * y[1]], [1.0, y[0] ** 2, 0.0]])


def setup_for(delta, sigma=1.0):
    delta = np.asarray(delta, complex)
    n = len(delta)
    return ObservationSetup(delta, sigma * np.eye(n), delta, np.zeros(2), 0.0, 0, 0)


def test_potential_values():
    d = np.array([1.0 + 0j, 2.0, 3.0])
    assert gaussian_potential(d, d, np.eye(3)) == 0.0
    assert gaussian_potential(np.array([1.0, 0, 0]), np.zeros(3), np.eye(3)) == 0.5
    assert gaussian_potential(np.array([1j, 0, 0]), np.zeros(3), 1.0) == 0.5
    assert gaussian_potential(np.array([3.0, 4.0]), np.zeros(2), np.eye(2), squared=False) == 5.0


@given(st.integers(0, 10**6), st.floats(0.1, 10.0))
def test_potential_scaling(seed, c):
    rng = np.random.default_rng(seed)
    d = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    B = rng.standard_normal((4, 4))
    S = B @ B.T + np.eye(4)
    p = gaussian_potential(d, np.zeros(4), S)
    assert p >= 0
    assert gaussian_potential(d, np.zeros(4), c * S) == pytest.approx(p / c, rel=1e-12)


def test_potential_batch():
    rng = np.random.default_rng(0)
    g = rng.standard_normal((5, 3)) + 0j
    d = np.ones(3, complex)
    batch = gaussian_potential(d, g, np.eye(3))
    assert batch == pytest.approx([gaussian_potential(d, gi, np.eye(3)) for gi in g], rel=1e-15)


def test_covariance_validation():
    with pytest.raises(ValueError):
        gaussian_potential(np.ones(2), np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        gaussian_potential(np.ones(2), np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        gaussian_potential(np.ones(2), np.zeros(2), np.eye(3))


def test_noise_moments():
    sigma = 0.3
    rng = np.random.default_rng(5)
    eta = circular_noise(sigma**2 * np.eye(3), 3, rng, size=100_000)
    assert np.var(eta.real[:, 0]) == pytest.approx(sigma**2 / 2, rel=0.02)
    cov = eta.T @ eta.conj() / len(eta)
    pseudo = eta.T @ eta / len(eta)
    assert np.abs(cov - sigma**2 * np.eye(3)).max() < 0.02 * sigma**2
    assert np.abs(pseudo).max() < 0.02 * sigma**2


def test_noise_free_observations():
    setup = synthesize_observations(toy_forward, np.array([0.2, -0.4]), 0, 0.0, seed=3)
    assert np.array_equal(setup.delta, toy_forward(0, [0.2, -0.4]))
    with pytest.raises(ValueError):
        synthesize_observations(toy_forward, np.array([1.5, 0.0]), 0, 0.1, seed=3)


def test_observations_reproducible():
    a = synthesize_observations(toy_forward, np.array([0.2, -0.4]), 0, 0.1, seed=11)
    b = synthesize_observations(toy_forward, np.array([0.2, -0.4]), 0, 0.1, seed=11)
    assert np.array_equal(a.delta, b.delta)
    sig = 0.1 * np.abs(a.clean).max()
    assert np.allclose(a.sigma, sig**2 * np.eye(2))
    assert a.manifest()["n_obs"] == 2


def test_flat_likelihood_gives_prior_mean():
    rule = halton_rule(33, 2)
    h = LevelHierarchy(0, [rule])
    setup = setup_for(np.zeros(2), sigma=1e300)
    post = ml_ratio_posterior(h, setup, toy_forward, toy_quantity)
    prior = rule.integrate(toy_quantity)
    assert np.abs(post.mean - prior).max() <= 1e-12


def test_flat_likelihood_multilevel():
    h = LevelHierarchy(2, [halton_rule(20, 2), halton_rule(8, 2, 100), halton_rule(4, 2, 200)])
    setup = setup_for(np.zeros(2), sigma=1e300)
    post = ml_ratio_posterior(h, setup, toy_forward, toy_quantity)
    # difference terms vanish, leaving the level-0 rule
    assert np.abs(post.mean - h.rules[0].integrate(toy_quantity)).max() <= 1e-12


def test_shift_invariance():
    h = LevelHierarchy(1, [halton_rule(30, 2), halton_rule(6, 2, 50)])
    setup = synthesize_observations(toy_forward, np.array([0.3, 0.1]), 1, 0.2, seed=1)
    base = ml_ratio_posterior(h, setup, toy_forward, toy_quantity)
    for c in (-50.0, 3.7, 700.0):
        post = ml_ratio_posterior(h, setup, toy_forward, toy_quantity, potential_shift=c)
        # phi + c rounds in floating point; the cancellation itself is exact
        assert np.abs(post.mean - base.mean).max() <= 1e-12 * np.abs(base.mean).max()
        assert np.abs(post.variance - base.variance).max() <= 1e-12 * np.abs(base.variance).max()
        assert post.log_Z == pytest.approx(base.log_Z - c, abs=1e-9)


def test_two_node_hand_computation():
    rule = QuadratureRule(np.array([[-0.5, 0.0], [0.5, 0.0]]), np.array([0.5, 0.5]), "tensor")
    h = LevelHierarchy(0, [rule])
    fwd = lambda lev, y: np.array([y[0] + 0j])
    setup = setup_for(np.array([0.5]))
    q = lambda y: np.array([[y[0], 0.0, 0.0]])
    post = ml_ratio_posterior(h, setup, fwd, q)
    r1, r2 = np.exp(-0.5 * 1.0), np.exp(-0.0)
    mean = (0.5 * r1 * -0.5 + 0.5 * r2 * 0.5) / (0.5 * r1 + 0.5 * r2)
    second = (0.5 * r1 * 0.25 + 0.5 * r2 * 0.25) / (0.5 * r1 + 0.5 * r2)
    assert post.mean[0, 0] == pytest.approx(mean, abs=1e-15)
    assert post.variance[0, 0, 0] == pytest.approx(second - mean**2, abs=1e-15)
    assert post.Z == pytest.approx(0.5 * (r1 + r2), rel=1e-14)


def test_level_independent_collapse():
    rule = halton_rule(17, 2)
    fwd = lambda lev, y: toy_forward(0, y)
    setup = synthesize_observations(fwd, np.array([0.3, 0.1]), 0, 0.2, seed=1)
    single = ml_ratio_posterior(LevelHierarchy(0, [rule]), setup, fwd, toy_quantity)
    multi = ml_ratio_posterior(LevelHierarchy(2, [rule] * 3), setup, fwd, toy_quantity)
    assert np.abs(single.mean - multi.mean).max() <= 1e-12


def test_variance_psd():
    h = LevelHierarchy(0, [halton_rule(64, 2)])
    setup = synthesize_observations(toy_forward, np.array([0.3, 0.1]), 0, 0.3, seed=2)
    post = ml_ratio_posterior(h, setup, toy_forward, toy_quantity)
    for V in post.variance:
        assert np.linalg.eigvalsh(V).min() >= -1e-8
    assert 1.0 <= post.ess <= 64.0


def test_nonpositive_denominator():
    # level 0 sees a poor fit at its node; the level-1 correction at another
    # node removes a good fit and drives the estimate negative
    q1 = QuadratureRule(np.array([[0.9, 0.0]]), np.array([1.0]), "tensor")
    q0 = QuadratureRule(np.array([[0.0, 0.0]]), np.array([1.0]), "tensor")
    fwd = lambda lev, y: np.array([10.0 + 0j]) if (lev == 0 and y[0] == 0.0) else np.array([0.0 + 0j])
    setup = setup_for(np.array([10.0]))
    with pytest.raises(EstimatorFailure) as info:
        ml_ratio_posterior(LevelHierarchy(1, [q1, q0]), setup, fwd, toy_quantity)
    assert info.value.diagnostics["denominator"] <= 0


def test_unsquared_misfit():
    h = LevelHierarchy(0, [halton_rule(16, 2)])
    setup = synthesize_observations(toy_forward, np.array([0.3, 0.1]), 0, 0.3, seed=2)
    a = ml_ratio_posterior(h, setup, toy_forward, toy_quantity, squared=True)
    b = ml_ratio_posterior(h, setup, toy_forward, toy_quantity, squared=False)
    assert not np.array_equal(a.mean, b.mean)


@pytest.fixture(scope="module")
def small_kl(unit_cube):
    kl, _, _ = rf.compute_kl(unit_cube, rf.gaussian_kernel(1 / 20, 4.0), 2, 0, 1e-8, 0.99, 3)
    return kl


def test_flat_report_reproduces_prior(small_kl, tmp_path):
    kl = small_kl
    uv = np.array([[0.5, 0.5], [0.2, 0.7]])
    pts = lambda coef: np.concatenate([kl.space.evaluate_function(coef, ip, uv[:, 0], uv[:, 1]) for ip in range(6)])
    quantity = lambda y: pts(kl.local_displacement(y))
    rule = tensor_rule([2] * kl.rank)
    h = LevelHierarchy(0, [rule])
    setup = setup_for(np.zeros(1), sigma=1e300)
    post = ml_ratio_posterior(h, setup, lambda lev, y: np.zeros(1, complex), quantity)
    prior_mean, prior_var = prior_moments(kl, pts)
    assert np.abs(post.mean).max() <= 1e-14
    assert np.abs(prior_mean).max() <= 1e-14
    assert np.abs(post.componentwise_variance - prior_var).max() <= 1e-14
    ref = np.concatenate([kl.space.surface.patches[ip].evaluate(uv[:, 0], uv[:, 1]) for ip in range(6)])
    rep = posterior_surface_report(post, ref, prior_mean, path=tmp_path / "post.csv")
    assert np.allclose(rep["upper"] - rep["posterior_mean"], rep["posterior_mean"] - rep["lower"], atol=1e-15)
    assert (tmp_path / "post.csv").read_text().splitlines()[0].startswith("ref_x,ref_y,ref_z")


def test_zero_variance_intervals_collapse():
    from igauq.bayes import PosteriorSummary

    s = PosteriorSummary(0.0, np.ones((2, 3)), None, np.zeros((2, 3, 3)), [], [], 1.0, 0.0)
    rep = posterior_surface_report(s, np.zeros((2, 3)))
    assert np.array_equal(rep["lower"], rep["upper"])
