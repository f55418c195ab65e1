"""Helmholtz fundamental solution, its normal derivatives and the incident wave."""

from __future__ import annotations

import dataclasses

import numpy as np

SINGULAR_TOL = 1e-14


class SingularityError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class WaveContext:
    """Wavenumber, CFIE coupling and plane-wave direction."""

    kappa: float
    direction: tuple = (0.0, 0.0, 1.0)
    eta: float | None = None

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("wavenumber must be positive")
        d = np.asarray(self.direction, dtype=float)
        nd = np.linalg.norm(d)
        if abs(nd - 1.0) > 1e-14:
            if abs(nd - 1.0) > 1e-8:
                raise ValueError(f"incident direction must be a unit vector, |d|={nd}")
            d = d / nd
        object.__setattr__(self, "direction", tuple(float(c) for c in d))
        if self.eta is None:
            object.__setattr__(self, "eta", 0.5 * self.kappa)

    @property
    def d(self):
        return np.asarray(self.direction)


def _distance(x, z):
    diff = np.asarray(x, dtype=float) - np.asarray(z, dtype=float)
    r = np.linalg.norm(diff, axis=-1)
    if np.any(r < SINGULAR_TOL):
        raise SingularityError("kernel evaluated at coincident points")
    return diff, r


def helmholtz_kernel(kappa, x, z):
    """``e^{i kappa r} / (4 pi r)``; ``kappa = 0`` gives the Laplace kernel."""
    _, r = _distance(x, z)
    return np.exp(1j * kappa * r) / (4.0 * np.pi * r)


def dlp_kernel(kappa, x, z, n_z):
    """Normal derivative of the kernel with respect to ``z`` along ``n_z``."""
    diff, r = _distance(x, z)
    proj = -np.einsum("...k,...k->...", diff, np.asarray(n_z, dtype=float))
    return np.exp(1j * kappa * r) * (1j * kappa * r - 1.0) / (4.0 * np.pi * r**3) * proj


def adjoint_dlp_kernel(kappa, x, z, n_x):
    """Normal derivative of the kernel with respect to ``x`` along ``n_x``."""
    diff, r = _distance(x, z)
    proj = np.einsum("...k,...k->...", diff, np.asarray(n_x, dtype=float))
    return np.exp(1j * kappa * r) * (1j * kappa * r - 1.0) / (4.0 * np.pi * r**3) * proj


def incident_trace(ctx: WaveContext, x, n):
    """Plane wave ``e^{i kappa <d, x>}`` and its normal derivative."""
    x = np.asarray(x, dtype=float)
    n = np.asarray(n, dtype=float)
    u = np.exp(1j * ctx.kappa * (x @ ctx.d))
    return u, 1j * ctx.kappa * (n @ ctx.d) * u
