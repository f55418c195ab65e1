"""Exterior evaluation of the scattered field from a boundary density."""

from __future__ import annotations

import warnings

import numpy as np

from .. import kernels
from .assembly import DensitySolution, far_order


class NearBoundaryWarning(UserWarning):
    pass


def _potential(density: DensitySolution, x, n_x, kind, tol, return_flags):
    space = density.space
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if n_x is not None:
        n_x = np.broadcast_to(np.asarray(n_x, dtype=float), x.shape)
    pts, side = space.cell_geometry
    # distance from each target to each cell (3x3 samples) -> per-pair order
    diff = x[:, None, None, :] - pts[None, :, :, :]
    dist = np.sqrt(np.einsum("tcsk,tcsk->tcs", diff, diff)).min(axis=2)
    near = dist < side[None, :]
    orders = far_order(dist, side[None, :], tol=tol, qmin=3, qmax=24)
    out = np.zeros(len(x), dtype=complex)
    coef = density.coefficients
    if np.any(coef):
        for q in np.unique(orders):
            mask = orders == q
            cells = np.flatnonzero(mask.any(axis=0))
            targets = np.flatnonzero(mask.any(axis=1))
            X, N, W, _, _ = space.tensor_data(int(q))
            vals = space.coefficients_at(coef, int(q))[cells] * W[cells]
            K = kernels.potential_matrix(
                x[targets], None if n_x is None else n_x[targets],
                X[cells].reshape(-1, 3), N[cells].reshape(-1, 3), density.ctx.kappa, kind,
            )
            per_cell = np.einsum("tcq,cq->tc", K.reshape(len(targets), len(cells), -1), vals)
            out[targets] += np.sum(np.where(mask[np.ix_(targets, cells)], per_cell, 0.0), axis=1)
    # u_s = -V q for the total-field Neumann trace q
    out = -out
    flags = near.any(axis=1)
    if flags.any() and not return_flags:
        warnings.warn(
            f"{int(flags.sum())} evaluation point(s) within one element diameter of the surface",
            NearBoundaryWarning,
            stacklevel=3,
        )
    return (out, flags) if return_flags else out


def eval_potential(density: DensitySolution, x, tol=1e-12, return_flags=False):
    """Scattered field ``u_s(x) = -int_S Phi(x, z) q(z) dsigma_z``."""
    return _potential(density, x, None, 0, tol, return_flags)


def eval_potential_normal_derivative(density: DensitySolution, x, n_x, tol=1e-12, return_flags=False):
    """Normal derivative of the scattered field along ``n_x`` at ``x``."""
    return _potential(density, x, n_x, 1, tol, return_flags)
