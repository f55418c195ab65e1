"""Statistics transport through a fixed artificial interface.

For a radiating field ``u_s`` outside a closed surface ``T`` that encloses every
shape realization, Green's representation

    u_s(x) = int_T dPhi(x, z)/dn_z u_s(z) - Phi(x, z) du_s/dn(z) dsigma_z

turns exterior evaluation into a deterministic linear functional of the
Cauchy data on ``T``.  Both traces are stored at tensor Chebyshev-Gauss-Lobatto
nodes per patch and integrated through their polynomial interpolants, so
``u_s(x) = a(x)^T U - b(x)^T D`` with fixed weight vectors ``a`` and ``b``.
Means and second moments of ``(D, U)`` then give the mean and the
correlation of the field at any exterior point.
"""

from __future__ import annotations

import dataclasses
import numpy as np

from . import kernels
from .bem.assembly import DensitySolution
from .bem.greens import WaveContext
from .bem.potential import eval_potential, eval_potential_normal_derivative
from .geometry import MultipatchSurface
from .randomfield import SampleRejected

ENCLOSURE_MARGIN = 1e-3


class InterfaceDomainError(ValueError):
    """Evaluation point inside or too close to the interface."""


def cgl_nodes(n):
    """``n`` Chebyshev-Gauss-Lobatto nodes on ``[0, 1]`` (increasing)."""
    return 0.5 * (1.0 - np.cos(np.pi * np.arange(n) / (n - 1)))


def _cheb_vander(t, n):
    return np.polynomial.chebyshev.chebvander(2.0 * np.asarray(t) - 1.0, n - 1)


class InterfaceGrid:
    """Interpolation nodes and quadrature data on an artificial interface.

    Parameters
    ----------
    surface : MultipatchSurface
        Closed interface ``T`` with outward normals.
    n_nodes : int
        Interpolation nodes per direction and patch (degree ``n_nodes - 1``).
    quad_order : int
        Tensor Gauss order per patch for integrals over ``T``.
    min_distance : float
        Exterior points must be at least ``min_distance`` times the largest
        patch diameter away from the quadrature points.
    """

    def __init__(self, surface: MultipatchSurface, n_nodes=7, quad_order=8, min_distance=0.25):
        if n_nodes < 2 or quad_order < 1:
            raise ValueError("need n_nodes >= 2 and quad_order >= 1")
        self.surface = surface
        self.n_nodes = n_nodes
        self.quad_order = quad_order
        self.min_distance = min_distance
        t = cgl_nodes(n_nodes)
        self.t = t
        U, V = np.meshgrid(t, t, indexing="ij")
        pts, nrm = [], []
        for pt in surface.patches:
            X, N, _ = pt.evaluate_frame(U, V)
            pts.append(X.reshape(-1, 3))
            nrm.append(N.reshape(-1, 3))
        self.nodes = np.concatenate(pts)
        self.normals = np.concatenate(nrm)
        self.vander_inv = np.linalg.inv(_cheb_vander(t, n_nodes))
        g, w = np.polynomial.legendre.leggauss(quad_order)
        g = 0.5 * (g + 1.0)
        w = 0.5 * w
        # interpolation matrix from nodal values to Gauss points (1D)
        self.P = _cheb_vander(g, n_nodes) @ self.vander_inv
        G1, G2 = np.meshgrid(g, g, indexing="ij")
        qp, qn, qw = [], [], []
        for pt in surface.patches:
            X, N, meas = pt.evaluate_frame(G1, G2)
            qp.append(X.reshape(-1, 3))
            qn.append(N.reshape(-1, 3))
            qw.append((np.outer(w, w) * meas).ravel())
        self.qpoints = np.stack(qp)  # (patches, q*q, 3)
        self.qnormals = np.stack(qn)
        self.qweights = np.stack(qw)
        self.PP = np.kron(self.P, self.P)  # (q*q, n*n)
        lo, hi = surface.bounding_box()
        self.box = (lo, hi)
        # largest patch diameter (control-point box diagonal bounds it)
        self.diameter = max(
            float(np.linalg.norm(np.ptp(pt.control.reshape(-1, 3), axis=0))) for pt in surface.patches
        )

    @property
    def n_patches(self):
        return len(self.surface)

    @property
    def size(self):
        """Number of interface nodes ``N_T``."""
        return len(self.nodes)

    def check_enclosure(self, surface: MultipatchSurface, margin=ENCLOSURE_MARGIN):
        """Raise :class:`SampleRejected` unless all control points of
        ``surface`` lie strictly inside the interface box with ``margin``."""
        cp = np.concatenate([p.control.reshape(-1, 3) for p in surface.patches])
        lo, hi = self.box
        if np.any(cp.min(0) <= lo + margin) or np.any(cp.max(0) >= hi - margin):
            raise SampleRejected("deformed surface is not enclosed by the interface")

    def check_exterior(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo, hi = self.box
        inside = np.all((x >= lo) & (x <= hi), axis=1)
        d = np.sqrt(((x[:, None, None, :] - self.qpoints[None]) ** 2).sum(-1)).reshape(len(x), -1).min(1)
        bad = inside | (d < self.min_distance * self.diameter)
        if np.any(bad):
            raise InterfaceDomainError(
                f"{int(bad.sum())} point(s) inside or too close to the interface"
            )
        return x

    def interpolation_coefficients(self, values):
        """Chebyshev coefficients ``(patches, n, n, ...)`` of nodal values."""
        n = self.n_nodes
        v = np.asarray(values).reshape((self.n_patches, n, n) + np.shape(values)[1:])
        return np.einsum("ai,pij...,bj->pab...", self.vander_inv, v, self.vander_inv)

    def interpolate(self, coefficients, ip, u, v):
        """Evaluate a patch interpolant at parameters ``(u, v)``."""
        n = self.n_nodes
        Bu = _cheb_vander(np.ravel(u), n)
        Bv = _cheb_vander(np.ravel(v), n)
        return np.einsum("ka,ab...,kb->k...", Bu, coefficients[ip], Bv)

    def weights(self, x, kappa):
        """Effective nodal weights ``(a, b)`` of shape ``(len(x), N_T)`` with
        ``u_s(x) = a . U - b . D``."""
        x = self.check_exterior(x)
        X = self.qpoints.reshape(-1, 3)
        Nq = self.qnormals.reshape(-1, 3)
        dl = kernels.potential_matrix(x, None, X, Nq, kappa, 2)
        sl = kernels.potential_matrix(x, None, X, None, kappa, 0)
        P = self.n_patches
        w = self.qweights.reshape(1, P, -1)
        dl = (dl.reshape(len(x), P, -1) * w) @ self.PP
        sl = (sl.reshape(len(x), P, -1) * w) @ self.PP
        return dl.reshape(len(x), -1), sl.reshape(len(x), -1)


@dataclasses.dataclass
class InterfaceCauchyData:
    """Nodal traces ``u`` (u_s) and ``du`` (du_s/dn) on the interface."""

    u: np.ndarray  # (N_T,) complex
    du: np.ndarray  # (N_T,) complex
    n_nodes: int = 7

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=complex)
        self.du = np.asarray(self.du, dtype=complex)
        if self.u.shape != self.du.shape or self.u.ndim != 1:
            raise ValueError("trace arrays must be 1D and of equal length")

    @property
    def size(self):
        return len(self.u)

    @property
    def vector(self):
        """Stacked trace vector ``[du; u]``."""
        return np.concatenate([self.du, self.u])

    @classmethod
    def from_vector(cls, v, n_nodes=7):
        v = np.asarray(v)
        n = len(v) // 2
        return cls(v[n:], v[:n], n_nodes)

    @classmethod
    def zeros(cls, n, n_nodes=7):
        return cls(np.zeros(n, complex), np.zeros(n, complex), n_nodes)

    def coefficients(self, grid: InterfaceGrid):
        """Chebyshev coefficients ``(patches, n, n)`` of both traces."""
        return grid.interpolation_coefficients(self.u), grid.interpolation_coefficients(self.du)

    def __add__(self, other):
        return InterfaceCauchyData(self.u + other.u, self.du + other.du, self.n_nodes)

    def __sub__(self, other):
        return InterfaceCauchyData(self.u - other.u, self.du - other.du, self.n_nodes)

    def __mul__(self, c):
        return InterfaceCauchyData(c * self.u, c * self.du, self.n_nodes)

    __rmul__ = __mul__


def sample_cauchy(density: DensitySolution, surface, ctx, grid: InterfaceGrid, check=True) -> InterfaceCauchyData:
    """Cauchy data of the potential generated by ``density`` at the interface nodes."""
    if check and surface is not None:
        grid.check_enclosure(surface)
    u = eval_potential(density, grid.nodes, return_flags=True)[0]
    du = eval_potential_normal_derivative(density, grid.nodes, grid.normals, return_flags=True)[0]
    return InterfaceCauchyData(u, du, grid.n_nodes)


def eval_from_interface(data: InterfaceCauchyData, grid: InterfaceGrid, ctx: WaveContext, x):
    """Exterior field from interface Cauchy data (Green's representation)."""
    a, b = grid.weights(x, ctx.kappa)
    return a @ data.u - b @ data.du


class SecondMomentData:
    """Second moment of the stacked trace vector ``v = [du; u]``.

    The four blocks are views into one Hermitian ``2N x 2N`` matrix:
    ``Cor[du] = E[D D^H]``, ``Cor[du, u] = E[D U^H]``, ``Cor[u, du] = E[U D^H]``
    and ``Cor[u] = E[U U^H]``.
    """

    def __init__(self, n, matrix=None):
        self.n = n
        self.matrix = np.zeros((2 * n, 2 * n), complex) if matrix is None else np.asarray(matrix, complex)
        if self.matrix.shape != (2 * n, 2 * n):
            raise ValueError("second-moment matrix has the wrong shape")

    @property
    def cor_du(self):
        return self.matrix[: self.n, : self.n]

    @property
    def cor_du_u(self):
        return self.matrix[: self.n, self.n :]

    @property
    def cor_u_du(self):
        return self.matrix[self.n :, : self.n]

    @property
    def cor_u(self):
        return self.matrix[self.n :, self.n :]

    def add_outer(self, v, weight=1.0):
        v = np.asarray(v, complex)
        if v.shape != (2 * self.n,):
            raise ValueError(f"trace vector of length {len(v)} does not match {2 * self.n}")
        self.matrix += weight * np.outer(v, v.conj())
        return self

    def add(self, other: "SecondMomentData", weight=1.0):
        if other.n != self.n:
            raise ValueError("second-moment dimensions differ")
        self.matrix += weight * other.matrix
        return self

    def copy(self):
        return SecondMomentData(self.n, self.matrix.copy())


def accumulate_second_moment(data: InterfaceCauchyData, acc: SecondMomentData, weight=1.0) -> SecondMomentData:
    """``acc += weight * v v^H`` for the stacked trace vector of ``data``."""
    if data.size != acc.n:
        raise ValueError(f"Cauchy data of size {data.size} does not match accumulator size {acc.n}")
    return acc.add_outer(data.vector, weight)


def correlation_at(second: SecondMomentData, grid: InterfaceGrid, ctx: WaveContext, x, xp):
    """``E[u_s(x) conj(u_s(x'))]`` from the four correlation blocks.

    ``x`` and ``xp`` may be single points or equal-length point arrays.
    """
    single = np.ndim(x) == 1
    a, b = grid.weights(x, ctx.kappa)
    ap, bp = grid.weights(xp, ctx.kappa)
    # u_s = w . v with v = [D; U] and w = [-b, a]
    w = np.concatenate([-b, a], axis=1)
    wp = np.concatenate([-bp, ap], axis=1)
    out = np.einsum("ti,ij,tj->t", w, second.matrix, wp.conj())
    return out[0] if single else out


def variance_at(second: SecondMomentData, mean_data: InterfaceCauchyData, grid, ctx, x, return_imag=False):
    """``V[u_s](x) = Re Cor[u_s](x, x) - |E[u_s](x)|^2``."""
    cor = correlation_at(second, grid, ctx, x, x)
    mean = eval_from_interface(mean_data, grid, ctx, x)
    var = np.real(cor) - np.abs(mean) ** 2
    if return_imag:
        return var, np.abs(np.imag(cor))
    return var


def default_interface(surface: MultipatchSurface, margin=0.5, splits=(1, 1, 1)):
    """Axis-aligned cuboid interface around ``surface`` with the given margin."""
    from .geometry import cuboid_shell

    lo, hi = surface.bounding_box()
    return cuboid_shell(lo - margin, hi + margin, splits)
