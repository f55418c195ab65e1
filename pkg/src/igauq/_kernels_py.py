"""NumPy implementation of the point kernels.

Same signatures and results as the compiled ``_kernels`` extension; used when
the extension is unavailable or ``IGAUQ_PURE=1`` is set.
"""

import numpy as np

from . import bspline

FOUR_PI = 4.0 * np.pi


def _kernels(diff, kappa):
    # diff = x - z, last axis 3
    r = np.sqrt(np.einsum("...k,...k->...", diff, diff))
    e = np.exp(1j * kappa * r)
    phi = e / (FOUR_PI * r)
    dphi = e * (1j * kappa * r - 1.0) / (FOUR_PI * r**3)
    return phi, dphi


def potential_matrix(T, NT, S, NS, kappa, kind):
    """Kernel matrix between targets ``T`` and sources ``S``.

    ``kind`` 0: Phi(t, s); 1: dPhi/dn_t; 2: dPhi/dn_s.
    """
    if kind not in (0, 1, 2):
        raise ValueError("kind must be 0, 1 or 2")
    diff = T[:, None, :] - S[None, :, :]
    phi, dphi = _kernels(diff, kappa)
    if kind == 0:
        return phi
    if kind == 1:
        return dphi * np.einsum("tsk,tk->ts", diff, NT)
    return -dphi * np.einsum("tsk,sk->ts", diff, NS)


def pair_kernels(X, NX, Z, NZ, kappa):
    """Phi, dPhi/dn_x and dPhi/dn_z at paired points; shape (3, N)."""
    diff = X - Z
    phi, dphi = _kernels(diff, kappa)
    kx = dphi * np.einsum("qk,qk->q", diff, NX)
    kz = -dphi * np.einsum("qk,qk->q", diff, NZ)
    return np.stack([phi, kx, kz])


def tensor_kernels(X, NX, Z, NZ, kappa):
    """Kernel matrices for batched point sets; shape (3, B, qx, qz)."""
    diff = X[:, :, None, :] - Z[:, None, :, :]
    phi, dphi = _kernels(diff, kappa)
    kx = dphi * np.einsum("bxzk,bxk->bxz", diff, NX)
    kz = -dphi * np.einsum("bxzk,bzk->bxz", diff, NZ)
    return np.stack([phi, kx, kz])


def basis_values(U, p, span, x, nder):
    """Non-zero basis values (and first derivatives) at given spans."""
    return bspline.basis_funs(U, p, span, x, nder)


def nurbs_eval(U, V, pu, pv, hom, u, v):
    """Points and parametric tangents of a NURBS patch; three (N, 3) arrays."""
    ku, kv = hom.shape[:2]
    su = bspline.find_span(U, pu, u)
    sv = bspline.find_span(V, pv, v)
    bu = bspline.basis_funs(U, pu, su, u, 1)
    bv = bspline.basis_funs(V, pv, sv, v, 1)
    iu = su[:, None] - pu + np.arange(pu + 1)
    iv = sv[:, None] - pv + np.arange(pv + 1)
    h = hom[iu[:, :, None], iv[:, None, :]]
    A = np.einsum("na,nb,nabk->nk", bu[:, 0], bv[:, 0], h)
    Au = np.einsum("na,nb,nabk->nk", bu[:, 1], bv[:, 0], h)
    Av = np.einsum("na,nb,nabk->nk", bu[:, 0], bv[:, 1], h)
    x = A[:, :3] / A[:, 3:]
    xu = (Au[:, :3] - Au[:, 3:] * x) / A[:, 3:]
    xv = (Av[:, :3] - Av[:, 3:] * x) / A[:, 3:]
    return x, xu, xv
