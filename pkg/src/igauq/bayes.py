"""Bayesian shape inversion with a multilevel ratio estimator.

Observations are noisy point values of the scattered wave.  With the misfit
``Phi(y) = 1/2 (delta - G(y))^H Sigma^{-1} (delta - G(y))`` and
``rho_l = exp(-Phi_l)``, posterior expectations are

    E[chi] ~ sum_l Q_{L-l}(chi (rho_l - rho_{l-1})) / sum_l Q_{L-l}(rho_l - rho_{l-1}).

Potentials are shifted by their minimum before exponentiation; the common
factor cancels in the ratio and is added back to ``log Z``.
"""

from __future__ import annotations

import csv
import dataclasses

import numpy as np
import scipy.linalg

from .mlq import Evaluator, LevelHierarchy, _plan


class EstimatorFailure(RuntimeError):
    """Nonpositive normalization estimate (insufficient sampling)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def _cholesky(sigma, n):
    S = np.asarray(sigma, dtype=float)
    if S.ndim == 0:
        S = float(S) * np.eye(n)
    if S.shape != (n, n):
        raise ValueError(f"noise covariance of shape {S.shape} does not match {n} observations")
    if not np.allclose(S, S.T, rtol=0, atol=1e-14 * np.abs(S).max()):
        raise ValueError("noise covariance is not symmetric")
    try:
        return scipy.linalg.cholesky(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("noise covariance is not positive definite") from exc


def gaussian_potential(delta, g, sigma, squared=True, chol=None):
    """Misfit ``1/2 ||delta - g||_Sigma^2`` (or ``||delta - g||_Sigma`` if not ``squared``).

    ``g`` may be a single prediction ``(N,)`` or a batch ``(S, N)``.
    """
    delta = np.asarray(delta, dtype=complex)
    g = np.asarray(g, dtype=complex)
    Lc = chol if chol is not None else _cholesky(sigma, len(delta))
    r = delta - g
    z = scipy.linalg.solve_triangular(Lc, r.T, lower=True)
    nrm2 = np.sum(np.abs(z) ** 2, axis=0)
    return 0.5 * nrm2 if squared else np.sqrt(nrm2)


def circular_noise(sigma, n_obs, rng, size=None):
    """Circular complex Gaussian vectors with covariance ``Sigma`` (``E[eta eta^T] = 0``)."""
    Lc = _cholesky(sigma, n_obs)
    shape = (n_obs,) if size is None else (n_obs, size)
    xi = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    eta = Lc @ xi
    return eta if size is None else eta.T


@dataclasses.dataclass
class ObservationSetup:
    delta: np.ndarray
    sigma: np.ndarray
    clean: np.ndarray
    y_true: np.ndarray
    sigma_rel: float
    seed: int
    level: int
    points: np.ndarray | None = None

    def __post_init__(self):
        self.chol = _cholesky(self.sigma, len(self.delta))

    def potential(self, g, squared=True):
        return gaussian_potential(self.delta, g, self.sigma, squared, chol=self.chol)

    def manifest(self):
        return {
            "seed": self.seed,
            "sigma_rel": self.sigma_rel,
            "level": self.level,
            "y_true": [float(v) for v in self.y_true],
            "n_obs": int(len(self.delta)),
        }


def synthesize_observations(forward, y_star, level, sigma_rel, seed, points=None) -> ObservationSetup:
    """Noisy data ``G(y*) + eta`` with ``Sigma = sigma^2 I``, ``sigma = sigma_rel max|G(y*)|``."""
    y_star = np.asarray(y_star, dtype=float)
    if np.any(np.abs(y_star) > 1.0):
        raise ValueError("truth parameter outside [-1, 1]^M")
    clean = np.asarray(forward(level, y_star), dtype=complex)
    n = len(clean)
    sig = sigma_rel * float(np.abs(clean).max())
    rng = np.random.default_rng(seed)
    if sig > 0:
        Sigma = sig**2 * np.eye(n)
        delta = clean + circular_noise(Sigma, n, rng)
    else:
        # noise-free data; keep a nominal covariance so the misfit stays defined
        Sigma = np.eye(n)
        delta = clean.copy()
    return ObservationSetup(delta, Sigma, clean, y_star, sigma_rel, seed, level, points)


@dataclasses.dataclass
class PosteriorSummary:
    log_Z: float
    mean: np.ndarray  # (P, 3) or quantity shape
    second: np.ndarray  # (P, 3, 3)
    variance: np.ndarray  # (P, 3, 3)
    numerator_contributions: list
    denominator_contributions: list
    ess: float
    shift: float

    @property
    def Z(self):
        return float(np.exp(self.log_Z))

    @property
    def componentwise_variance(self):
        return np.diagonal(self.variance, axis1=-2, axis2=-1)


def ml_ratio_posterior(
    h: LevelHierarchy,
    setup: ObservationSetup,
    forward,
    quantity,
    evaluator: Evaluator | None = None,
    squared=True,
    potential_shift=0.0,
    observe=None,
) -> PosteriorSummary:
    """Multilevel ratio estimator of posterior mean and second moment of ``quantity``.

    ``forward(level, y)`` returns predicted observations; ``quantity(y)`` an
    array of shape ``(P, 3)`` (deformation at sample points).  The same
    coupled nodes are used in numerator and denominator.
    ``potential_shift`` adds a constant to every potential (diagnostics).
    ``observe`` maps evaluator results to observation vectors (default:
    the results are the observations).
    """
    ev = evaluator or Evaluator(forward)
    tasks = _plan(h)
    preds = ev.evaluate(tasks)
    observe = observe or np.asarray
    phis = np.array([setup.potential(observe(p), squared) for p in preds]) + potential_shift
    if not np.all(np.isfinite(phis)):
        raise EstimatorFailure("non-finite potential")
    shift = float(phis.min())
    rho = np.exp(-(phis - shift))
    it = iter(rho)
    num_c, sec_c, den_c = [], [], []
    ess_num = ess_den = 0.0
    for lev, rule in enumerate(h.rules):
        num = sec = None
        den = 0.0
        for y, w in zip(rule.nodes, rule.weights):
            if w == 0.0:
                continue
            fine = next(it)
            d = fine - next(it) if lev > 0 else fine
            chi = np.asarray(quantity(y), dtype=float)
            t = w * d
            den += t
            num = t * chi if num is None else num + t * chi
            outer = chi[..., :, None] * chi[..., None, :]
            sec = t * outer if sec is None else sec + t * outer
            if lev == 0:
                ess_num += w * fine
                ess_den += w * w * fine * fine
        num_c.append(num)
        sec_c.append(sec)
        den_c.append(den)
    D = float(sum(den_c))
    diag = {"denominator": D, "contributions": [float(v) for v in den_c], "shift": shift}
    if not D > 0.0:
        raise EstimatorFailure(f"normalization estimate {D:.3e} is not positive", diag)
    mean = sum(c for c in num_c if c is not None) / D
    second = sum(c for c in sec_c if c is not None) / D
    var = second - mean[..., :, None] * mean[..., None, :]
    var = 0.5 * (var + np.swapaxes(var, -1, -2))
    ess = float(ess_num**2 / ess_den) if ess_den > 0 else 0.0
    return PosteriorSummary(float(np.log(D) - shift), mean, second, var, num_c, den_c, ess, shift)


def prior_moments(kl, points_fn):
    """Prior mean and componentwise variance of the displacement at sample points.

    ``points_fn(coef_local)`` evaluates a local coefficient array at the
    sample points.  Uses ``E[y_k] = 0`` and ``E[y_k^2] = 1/3``.
    """
    mean = points_fn(kl.local_displacement(np.zeros(kl.rank)))
    var = np.zeros_like(mean)
    for k in range(kl.rank):
        e = np.zeros(kl.rank)
        e[k] = 1.0
        dk = points_fn(kl.local_displacement(e)) - mean
        var += dk**2 / 3.0
    return mean, var


def posterior_surface_report(summary: PosteriorSummary, reference_points, prior_mean=None, path=None):
    """Per-point prior/posterior positions and componentwise 2-sigma intervals.

    ``reference_points`` has shape ``(P, 3)``.  Returns a dict of arrays and
    optionally writes CSV.
    """
    ref = np.asarray(reference_points, dtype=float)
    pm = np.zeros_like(ref) if prior_mean is None else np.asarray(prior_mean)
    sd = np.sqrt(np.maximum(summary.componentwise_variance, 0.0))
    post = ref + summary.mean
    report = {
        "reference": ref,
        "prior_mean": ref + pm,
        "posterior_mean": post,
        "lower": post - 2.0 * sd,
        "upper": post + 2.0 * sd,
        "std": sd,
    }
    if path is not None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            head = []
            for name in ("ref", "prior", "post", "lo", "hi"):
                head += [f"{name}_{c}" for c in "xyz"]
            wr.writerow(head)
            for i in range(len(ref)):
                row = np.concatenate([report[k][i] for k in ("reference", "prior_mean", "posterior_mean", "lower", "upper")])
                wr.writerow([repr(float(v)) for v in row])
    return report
