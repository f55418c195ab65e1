"""Surface Karhunen-Loeve expansions of random deformation fields.

The covariance of the vector-valued deformation is discretized by Galerkin
projection onto a spline space on the reference surface.  A truncated pivoted
Cholesky factorization of the covariance matrix built from the patchwise shape
functions gives ``C ~ L L^T`` after mapping to the continuous space, and the
generalized eigenproblem ``C chi = lambda M chi`` is solved through the small
matrix ``L^T M^{-1} L``.
"""

from __future__ import annotations

import dataclasses
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from . import bspline, kernels
from .geometry import GeometryError, KnotVector, MultipatchSurface, vertex_ids

NEG_PIVOT_TOL = 1e-12


class KernelNotPositiveError(ValueError):
    pass


class MassAssemblyError(ValueError):
    pass


class SampleRejected(RuntimeError):
    """A parameter sample produced a non-admissible surface."""

    def __init__(self, message, y=None, level=None):
        super().__init__(message)
        self.y = None if y is None else np.asarray(y)
        self.level = level

    def __reduce__(self):
        return (type(self), (str(self), self.y, self.level))


# -- kernels -----------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class MatrixKernel:
    """Matrix-valued covariance kernel ``(x, x') -> 3x3``.

    ``evaluate(X, Y)`` maps point arrays ``(n, 3)``, ``(m, 3)`` to ``(n, m, 3, 3)``.
    If ``scalar`` is set the kernel is ``scalar(X, Y) * I_3`` and the
    covariance matrix is assembled component-wise.
    """

    name: str
    evaluate: Callable
    params: dict = dataclasses.field(default_factory=dict)
    scalar: Callable | None = None

    def __call__(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return self.evaluate(x, y)


def _sqdist(X, Y):
    d = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def gaussian_kernel(amplitude, length) -> MatrixKernel:
    """``k(x, x') = amplitude * exp(-|x - x'|^2 / length) * I_3``."""
    if not (amplitude > 0 and length > 0):
        raise ValueError("amplitude and length must be positive")

    def scalar(X, Y):
        return amplitude * np.exp(-_sqdist(X, Y) / length)

    def evaluate(X, Y):
        return scalar(X, Y)[..., None, None] * np.eye(3)

    return MatrixKernel("gaussian", evaluate, {"amplitude": amplitude, "length": length}, scalar)


def rank_one_kernel(g: Callable) -> MatrixKernel:
    """``k(x, x') = g(x) g(x')^T`` for a vector field ``g``."""

    def evaluate(X, Y):
        gx, gy = g(X), g(Y)
        return gx[:, None, :, None] * gy[None, :, None, :]

    return MatrixKernel("rank-one", evaluate)


# -- spline space on the reference surface -------------------------------------


class SplineSpace:
    """Scalar spline space of degree ``p`` over the level-``l`` mesh of a surface.

    On every patch the basis is the NURBS basis sharing the geometry's
    weights, on knot vectors that contain both the geometry knots (after
    degree elevation) and the uniform level-``l`` knots.  The geometry is then
    exactly representable, so deformations act on control points.  With
    ``continuous=True`` coefficients of functions that coincide on glued edges
    are identified; the local-to-global map is the sparse 0/1 matrix ``T``
    of shape ``(n_global, n_local)``.
    """

    def __init__(self, surface: MultipatchSurface, degree: int, level: int, continuous=True):
        self.surface = surface
        self.degree = degree
        self.level = level
        self.continuous = continuous
        p = degree
        uni = bspline.open_uniform(p, 2**level)
        self.knots, self.ref_patches, self.weights = [], [], []
        for pt in surface.patches:
            if p >= max(pt.degrees):
                ku = KnotVector(p, bspline.merge_knots(p, (pt.ku.knots, pt.ku.degree), (uni, p)))
                kv = KnotVector(p, bspline.merge_knots(p, (pt.kv.knots, pt.kv.degree), (uni, p)))
                ref = pt.reparametrized(ku, kv)
                self.ref_patches.append(ref)
                self.weights.append(ref.weights)
            else:
                ku = kv = KnotVector(p, uni)
                self.ref_patches.append(None)
                self.weights.append(np.ones((ku.n, kv.n)))
            self.knots.append((ku, kv))
        self.local_shape = [(ku.n, kv.n) for ku, kv in self.knots]
        sizes = [a * b for a, b in self.local_shape]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.n_local = int(self.offsets[-1])
        self._build_global_map()

    @property
    def matched(self):
        return all(r is not None for r in self.ref_patches)

    def _build_global_map(self):
        if not self.continuous:
            self.global_index = np.arange(self.n_local)
        else:
            anchors = []
            for pt, (ku, kv) in zip(self.surface.patches, self.knots):
                gu = bspline.greville(ku.knots, ku.degree)
                gv = bspline.greville(kv.knots, kv.degree)
                anchors.append(pt.evaluate(gu[:, None], gv[None, :]).reshape(-1, 3))
            anchors = np.concatenate(anchors)
            lo, hi = self.surface.bounding_box()
            tol = 1e-9 * max(1.0, float(np.linalg.norm(hi - lo)))
            self.global_index = vertex_ids(anchors, tol)
        self.n = int(self.global_index.max()) + 1
        self.T = scipy.sparse.csr_matrix(
            (np.ones(self.n_local), (self.global_index, np.arange(self.n_local))),
            shape=(self.n, self.n_local),
        )

    @cached_property
    def T_vector(self):
        """Local-to-global map for component-major vector coefficients."""
        return scipy.sparse.block_diag([self.T] * 3, format="csr")

    def basis(self, ip, u, v):
        """Non-zero basis values ``(N, nb)`` and local dof ids ``(N, nb)`` on patch ``ip``."""
        ku, kv = self.knots[ip]
        p = self.degree
        u = np.ravel(np.asarray(u, dtype=float))
        v = np.ravel(np.asarray(v, dtype=float))
        su = bspline.find_span(ku.knots, p, u)
        sv = bspline.find_span(kv.knots, p, v)
        bu = kernels.basis_values(ku.knots, p, su, u)[:, 0]
        bv = kernels.basis_values(kv.knots, p, sv, v)[:, 0]
        iu = su[:, None] - p + np.arange(p + 1)
        iv = sv[:, None] - p + np.arange(p + 1)
        w = self.weights[ip][iu[:, :, None], iv[:, None, :]]
        vals = bu[:, :, None] * bv[:, None, :] * w
        vals /= vals.sum(axis=(1, 2), keepdims=True)
        idx = self.offsets[ip] + iu[:, :, None] * kv.n + iv[:, None, :]
        return vals.reshape(len(u), -1), idx.reshape(len(u), -1)

    def elements(self):
        for ip, (ku, kv) in enumerate(self.knots):
            bu, bv = ku.breaks, kv.breaks
            for i in range(len(bu) - 1):
                for j in range(len(bv) - 1):
                    yield ip, (bu[i], bu[i + 1]), (bv[j], bv[j + 1])

    def quadrature(self, q=None):
        """Surface quadrature over all elements (cached per order).

        Returns points ``(P, 3)``, weights times measure ``(P,)`` and the sparse
        matrix ``Phi`` of local basis values ``(P, n_local)``.
        """
        q = q or self.degree + 2
        return self._quad(q)

    @cached_property
    def _quad_store(self):
        return {}

    def _quad(self, q):
        if q in self._quad_store:
            return self._quad_store[q]
        x, w = np.polynomial.legendre.leggauss(q)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        pts, wts, rows, cols, vals = [], [], [], [], []
        offset = 0
        for ip, (a, b), (c, d) in self.elements():
            uu, vv = np.meshgrid(a + (b - a) * x, c + (d - c) * x, indexing="ij")
            X, _, meas = self.surface.patches[ip].evaluate_frame(uu, vv)
            pts.append(X.reshape(-1, 3))
            wts.append(((b - a) * (d - c) * np.outer(w, w) * meas).ravel())
            bv, idx = self.basis(ip, uu, vv)
            rows.append(np.repeat(np.arange(offset, offset + bv.shape[0]), bv.shape[1]))
            cols.append(idx.ravel())
            vals.append(bv.ravel())
            offset += bv.shape[0]
        Phi = scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(offset, self.n_local),
        )
        out = (np.concatenate(pts), np.concatenate(wts), Phi)
        self._quad_store[q] = out
        return out

    def evaluate_function(self, coef_local, ip, u, v):
        """Evaluate a local coefficient array ``(n_local, ...)`` on patch ``ip``."""
        vals, idx = self.basis(ip, u, v)
        return np.einsum("nb,nb...->n...", vals, np.asarray(coef_local)[idx])


def assemble_mass(space: SplineSpace, q=None, local=False):
    """Scalar Galerkin mass matrix (sparse); global unless ``local``."""
    q = q or space.degree + 1
    q = max(q, space.degree + 1)
    _, wts, Phi = space.quadrature(q)
    M_loc = (Phi.T @ scipy.sparse.diags(wts) @ Phi).tocsr()
    M = M_loc if local else (space.T @ M_loc @ space.T.T).tocsr()
    M = 0.5 * (M + M.T)
    if M.shape[0] <= 4000:
        try:
            np.linalg.cholesky(M.toarray())
        except np.linalg.LinAlgError as exc:
            raise MassAssemblyError("mass matrix is not positive definite") from exc
    elif np.any(M.diagonal() <= 0):
        raise MassAssemblyError("mass matrix has a non-positive diagonal")
    return M


# -- pivoted Cholesky -----------------------------------------------------------


@dataclasses.dataclass
class LowRankFactor:
    """``C ~ L L^T`` with the achieved relative trace error."""

    L: np.ndarray
    tol: float
    trace_error: float
    initial_trace: float
    pivots: np.ndarray
    history: np.ndarray  # residual trace after each step
    L_local: np.ndarray | None = None

    @property
    def rank(self):
        return self.L.shape[1]


def pivoted_cholesky_generic(diag, column, tol, max_rank=None) -> LowRankFactor:
    """Greedy diagonal pivoting with on-demand columns.

    ``column(i)`` returns column ``i`` of the symmetric matrix.  Stops once
    the residual diagonal sum is at most ``tol`` times the initial trace.
    """
    d = np.array(diag, dtype=float)
    n = len(d)
    tr0 = float(d.sum())
    max_rank = n if max_rank is None else min(max_rank, n)
    if np.any(d < -NEG_PIVOT_TOL * max(tr0, 1e-300)):
        raise KernelNotPositiveError("negative diagonal entry")
    d = np.maximum(d, 0.0)
    cols, pivots, history = [], [], []
    L = np.zeros((n, 0))
    while True:
        err = float(d.sum())
        if err <= tol * tr0 or len(pivots) >= max_rank or tr0 == 0.0:
            break
        i = int(np.argmax(d))
        if d[i] <= 0.0:
            break
        c = np.array(column(i), dtype=float)
        if cols:
            c -= np.column_stack(cols) @ np.column_stack(cols)[i]
        piv = c[i]
        if piv < -NEG_PIVOT_TOL * tr0:
            raise KernelNotPositiveError(f"negative pivot {piv:.3e}")
        if piv <= 0.0:
            break
        li = c / np.sqrt(piv)
        cols.append(li)
        pivots.append(i)
        d = d - li * li
        if np.any(d < -NEG_PIVOT_TOL * tr0):
            raise KernelNotPositiveError("residual diagonal became negative")
        d = np.maximum(d, 0.0)
        d[i] = 0.0
        history.append(float(d.sum()))
    if cols:
        L = np.column_stack(cols)
    return LowRankFactor(L, tol, float(d.sum()) / tr0 if tr0 else 0.0, tr0, np.array(pivots, dtype=int), np.array(history))


def pivoted_cholesky_dense(A, tol=0.0, max_rank=None) -> LowRankFactor:
    A = np.asarray(A, dtype=float)
    return pivoted_cholesky_generic(np.diag(A).copy(), lambda i: A[:, i], tol, max_rank)


class CovarianceColumns:
    """Columns of the shape-function covariance matrix, computed on demand.

    Vector dofs are ordered component-major: ``c * n_local + i``.
    """

    def __init__(self, kernel: MatrixKernel, space: SplineSpace, q=None):
        self.kernel = kernel
        self.space = space
        self.X, self.W, self.Phi = space.quadrature(q)
        self.PhiT = self.Phi.T.tocsr()
        self.n = space.n_local
        self.calls = 0

    def _support(self, i):
        row = self.PhiT.getrow(i)
        return row.indices, row.data * self.W[row.indices]

    def diagonal(self):
        out = np.empty(3 * self.n)
        for i in range(self.n):
            idx, f = self._support(i)
            X = self.X[idx]
            if self.kernel.scalar is not None:
                val = f @ self.kernel.scalar(X, X) @ f
                out[[i, self.n + i, 2 * self.n + i]] = val
            else:
                K = self.kernel(X, X)
                for c in range(3):
                    out[c * self.n + i] = f @ K[:, :, c, c] @ f
        return out

    def column(self, k):
        self.calls += 1
        c, i = divmod(k, self.n)
        idx, f = self._support(i)
        out = np.zeros(3 * self.n)
        if self.kernel.scalar is not None:
            g = f @ self.kernel.scalar(self.X[idx], self.X)
            out[c * self.n : (c + 1) * self.n] = self.PhiT @ (g * self.W)
        else:
            K = self.kernel(self.X[idx], self.X)  # (s, P, 3, 3)
            g = np.einsum("s,spd->pd", f, K[:, :, c, :])
            for d in range(3):
                out[d * self.n : (d + 1) * self.n] = self.PhiT @ (g[:, d] * self.W)
        return out

    def dense(self):
        """Full local covariance matrix (for small problems and tests)."""
        return np.column_stack([self.column(k) for k in range(3 * self.n)])


def pivoted_cholesky(kernel: MatrixKernel, space: SplineSpace, tol, max_rank=None, q=None) -> LowRankFactor:
    """Truncated pivoted Cholesky of the shape-function covariance, mapped by ``T``."""
    if not 0.0 < tol < 1.0:
        raise ValueError("tol must lie in (0, 1)")
    cov = CovarianceColumns(kernel, space, q)
    fac = pivoted_cholesky_generic(cov.diagonal(), cov.column, tol, max_rank)
    fac.L_local = fac.L
    fac.L = np.asarray(space.T_vector @ fac.L)
    return fac


# -- eigenproblem and truncation ---------------------------------------------------


def _mass_solver(M, nrows):
    M = scipy.sparse.csc_matrix(M)
    if nrows == 3 * M.shape[0]:
        M = scipy.sparse.block_diag([M] * 3, format="csc")
    if nrows != M.shape[0]:
        raise ValueError("factor and mass matrix dimensions disagree")
    return M, scipy.sparse.linalg.splu(M)


def reduced_eig(L, M):
    """Eigenpairs of ``L L^T chi = lambda M chi`` through ``L^T M^{-1} L``.

    ``L`` is a :class:`LowRankFactor` or an array; ``M`` is the scalar or
    vector mass matrix.  Returns eigenvalues (descending, non-negative part)
    and M-orthonormal modes as columns.
    """
    Lm = L.L if isinstance(L, LowRankFactor) else np.asarray(L, dtype=float)
    if Lm.shape[1] == 0:
        return np.zeros(0), np.zeros((Lm.shape[0], 0))
    Mfull, lu = _mass_solver(M, Lm.shape[0])
    MinvL = lu.solve(Lm)
    S = Lm.T @ MinvL
    S = 0.5 * (S + S.T)
    lam, psi = scipy.linalg.eigh(S)
    order = np.argsort(lam)[::-1]
    lam, psi = lam[order], psi[:, order]
    keep = lam > max(lam[0], 0.0) * 1e-13 if lam[0] > 0 else np.zeros(len(lam), bool)
    lam, psi = lam[keep], psi[:, keep]
    chi = MinvL @ psi / np.sqrt(lam)
    return lam, chi


@dataclasses.dataclass
class KLExpansion:
    """Mean plus truncated eigenpairs of the surface deformation field."""

    space: SplineSpace
    eigenvalues: np.ndarray
    modes: np.ndarray  # (3 n_global, M_t), component-major
    mean: np.ndarray | None = None

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(3 * self.space.n)

    @property
    def rank(self):
        return len(self.eigenvalues)

    def coefficients(self, y):
        """Global displacement coefficients ``mean + sum sqrt(lam_k) chi_k y_k``."""
        y = np.asarray(y, dtype=float)
        if y.shape != (self.rank,):
            raise ValueError(f"parameter dimension {y.shape} != ({self.rank},)")
        return self.mean + self.modes @ (np.sqrt(self.eigenvalues) * y)

    def local_displacement(self, y):
        """Per-local-dof displacement vectors ``(n_local, 3)``."""
        g = self.coefficients(y).reshape(3, self.space.n)
        return np.asarray(self.space.T.T @ g.T)

    def displacement_at(self, y, ip, u, v):
        return self.space.evaluate_function(self.local_displacement(y), ip, u, v)


def truncate(lam, chi, trace_frac, max_modes=None, space=None, mean=None):
    """Keep the smallest leading set carrying ``trace_frac`` of the total trace."""
    if not 0.0 < trace_frac <= 1.0:
        raise ValueError("trace_frac must lie in (0, 1]")
    lam = np.asarray(lam, dtype=float)
    if len(lam) == 0:
        m = 0
    elif trace_frac >= 1.0:
        m = len(lam)
    else:
        cs = np.cumsum(lam)
        m = int(np.searchsorted(cs, trace_frac * cs[-1] * (1 - 1e-15)) + 1)
        m = min(m, len(lam))
    if max_modes is not None:
        m = min(m, max_modes)
    if space is None:
        return lam[:m], chi[:, :m]
    return KLExpansion(space, lam[:m].copy(), chi[:, :m].copy(), mean)


def compute_kl(surface, kernel, degree=2, level=0, tol=1e-8, trace_frac=0.99, max_modes=None, q=None):
    """Full chain: space, mass, pivoted Cholesky, reduced eigenproblem, truncation."""
    space = SplineSpace(surface, degree, level, continuous=True)
    M = assemble_mass(space, q)
    fac = pivoted_cholesky(kernel, space, tol, q=q)
    lam, chi = reduced_eig(fac, M)
    kl = truncate(lam, chi, trace_frac, max_modes, space=space)
    return kl, fac, M


# -- sampling ------------------------------------------------------------------------


def check_diffeomorphism(reference: MultipatchSurface, deformed: MultipatchSurface, n=5):
    """True if the deformed measure stays positive with unchanged orientation
    at an ``n x n`` grid on every element of the deformed patches."""
    t = np.linspace(0.0, 1.0, n)
    for pr, pd in zip(reference.patches, deformed.patches):
        bu, bv = pd.ku.breaks, pd.kv.breaks
        uu = np.concatenate([a + (b - a) * t for a, b in zip(bu[:-1], bu[1:])])
        vv = np.concatenate([a + (b - a) * t for a, b in zip(bv[:-1], bv[1:])])
        U, V = np.meshgrid(uu, vv, indexing="ij")
        _, xu, xv = pd.evaluate(U, V, nder=1)
        nref, _ = pr.frame(U, V)
        cr = np.cross(xu, xv) * pd.orientation
        jac = np.einsum("...k,...k->...", cr, nref)
        if not np.all(jac > 1e-14):
            return False
    return True


def deform_surface(kl: KLExpansion, y, surface: MultipatchSurface | None = None, validate=True) -> MultipatchSurface:
    """Reference surface moved by the KL displacement at parameter ``y``."""
    space = kl.space
    if surface is not None and surface is not space.surface:
        raise ValueError("surface differs from the KL reference surface")
    if not space.matched:
        raise GeometryError("displacement space cannot represent the geometry")
    disp = kl.local_displacement(y)
    patches = []
    for ip, ref in enumerate(space.ref_patches):
        a, b = space.offsets[ip], space.offsets[ip + 1]
        d = disp[a:b].reshape(ref.control.shape)
        patches.append(ref.with_control(ref.control + d))
    out = MultipatchSurface(patches, glue=space.surface.glue, closed=space.surface.closed, validate=False)
    if validate:
        try:
            from .geometry import validate_multipatch

            validate_multipatch(out)
        except GeometryError as exc:
            raise SampleRejected(f"deformed surface invalid: {exc}", y) from exc
        if not check_diffeomorphism(space.surface, out):
            raise SampleRejected("deformation is not a diffeomorphism (measure sign change)", y)
    return out
