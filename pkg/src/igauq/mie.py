"""Series solution for plane-wave scattering by a sound-soft sphere."""

from __future__ import annotations

import numpy as np
from scipy.special import eval_legendre, spherical_jn, spherical_yn


def _h1(n, x, derivative=False):
    return spherical_jn(n, x, derivative) + 1j * spherical_yn(n, x, derivative)


def n_terms(kr_max, radius_kr):
    return int(max(kr_max, radius_kr) + 4.05 * max(kr_max, radius_kr) ** (1 / 3) + 20)


def sound_soft_sphere(x, kappa=1.0, radius=1.0, direction=(0.0, 0.0, 1.0), normals=None):
    """Scattered field (and optionally its normal derivative) at points ``x``.

    ``u_s = -sum_n i^n (2n+1) j_n(ka) / h_n(ka) h_n(kr) P_n(cos theta)`` for the
    incident wave ``exp(i k <d, x>)``.  With ``normals`` the derivative
    along each normal is returned as a second array.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    r = np.linalg.norm(x, axis=1)
    if np.any(r < radius * (1.0 - 1e-12)):
        raise ValueError("evaluation points must lie outside the sphere")
    cos_t = np.clip(x @ d / r, -1.0, 1.0)
    ka = kappa * radius
    N = n_terms(kappa * r.max(), ka)
    u = np.zeros(len(x), dtype=complex)
    du_dr = np.zeros(len(x), dtype=complex)
    du_dc = np.zeros(len(x), dtype=complex)  # derivative with respect to cos(theta)
    for n in range(N + 1):
        a = -(1j**n) * (2 * n + 1) * spherical_jn(n, ka) / _h1(n, ka)
        P = eval_legendre(n, cos_t)
        h = _h1(n, kappa * r)
        u += a * h * P
        if normals is not None:
            du_dr += a * kappa * _h1(n, kappa * r, True) * P
            if n > 0:
                # (1 - c^2) P_n' = n (P_{n-1} - c P_n)
                dP = n * (eval_legendre(n - 1, cos_t) - cos_t * P)
                du_dc += a * h * dP
    if normals is None:
        return u
    nrm = np.broadcast_to(np.asarray(normals, dtype=float), x.shape)
    rhat = x / r[:, None]
    # grad cos(theta) = (d - c rhat) / r; du_dc holds (1 - c^2) du/dc
    sin2 = np.maximum(1.0 - cos_t**2, 1e-300)
    grad_c = (d[None, :] - cos_t[:, None] * rhat) / r[:, None]
    dn = du_dr * np.einsum("ik,ik->i", rhat, nrm) + (du_dc / sin2) * np.einsum("ik,ik->i", grad_c, nrm)
    return u, dn
