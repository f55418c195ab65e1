"""Patchwise-discontinuous spline space for the boundary density.

Integration cells are the intersections of geometry elements and density
elements, so both the geometry map and the density are polynomial (or
rational) on every cell.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .. import bspline, kernels
from ..geometry import MultipatchSurface, vertex_ids
from . import duffy


class BoundarySpace:
    """Degree-``p`` B-splines on ``2**level`` uniform intervals per patch direction."""

    def __init__(self, surface: MultipatchSurface, degree: int, level: int):
        if degree < 0 or level < 0:
            raise ValueError("degree and level must be non-negative")
        self.surface = surface
        self.degree = degree
        self.level = level
        self.knots = bspline.open_uniform(degree, 2**level)
        self.n_per_dir = 2**level + degree
        self.n_per_patch = self.n_per_dir**2
        self.ndofs = self.n_per_patch * len(surface)
        self._build_cells()

    @property
    def nb(self):
        return (self.degree + 1) ** 2

    def _build_cells(self):
        p = self.degree
        dens_breaks = bspline.breakpoints(self.knots)
        patch, lo, hi, span, dofs = [], [], [], [], []
        for ip, pt in enumerate(self.surface.patches):
            bu = np.union1d(pt.ku.breaks, dens_breaks)
            bv = np.union1d(pt.kv.breaks, dens_breaks)
            for i in range(len(bu) - 1):
                for j in range(len(bv) - 1):
                    mid = np.array([0.5 * (bu[i] + bu[i + 1]), 0.5 * (bv[j] + bv[j + 1])])
                    su, sv = (int(s) for s in bspline.find_span(self.knots, p, mid))
                    patch.append(ip)
                    lo.append((bu[i], bv[j]))
                    hi.append((bu[i + 1], bv[j + 1]))
                    span.append((su, sv))
                    a = np.arange(p + 1)
                    loc = (su - p + a)[:, None] * self.n_per_dir + (sv - p + a)[None, :]
                    dofs.append(ip * self.n_per_patch + loc.ravel())
        self.cell_patch = np.array(patch)
        self.cell_lo = np.array(lo)
        self.cell_hi = np.array(hi)
        self.cell_span = np.array(span)
        self.cell_dofs = np.array(dofs)

    @property
    def n_cells(self):
        return len(self.cell_patch)

    def evaluate(self, cells, ab):
        """Geometry and basis data at local points of the given cells.

        ``cells`` has shape ``(B,)`` and ``ab`` shape ``(B, N, 2)`` (or
        ``(N, 2)`` shared by all cells).  Returns points ``(B, N, 3)``, unit
        normals ``(B, N, 3)``, measure including the cell Jacobian ``(B, N)``
        and basis values ``(B, N, nb)``.
        """
        cells = np.asarray(cells)
        ab = np.broadcast_to(ab, (len(cells),) + np.shape(ab)[-2:])
        lo = self.cell_lo[cells][:, None, :]
        ext = (self.cell_hi - self.cell_lo)[cells][:, None, :]
        uv = lo + ext * ab
        B, N = uv.shape[:2]
        X = np.empty((B, N, 3))
        NRM = np.empty((B, N, 3))
        MEAS = np.empty((B, N))
        for ip in np.unique(self.cell_patch[cells]):
            m = self.cell_patch[cells] == ip
            pt = self.surface.patches[ip]
            X[m], NRM[m], MEAS[m] = pt.evaluate_frame(uv[m][..., 0], uv[m][..., 1])
        MEAS *= np.prod(ext, axis=-1)
        p = self.degree
        su = np.broadcast_to(self.cell_span[cells, 0][:, None], (B, N)).ravel()
        sv = np.broadcast_to(self.cell_span[cells, 1][:, None], (B, N)).ravel()
        bu = kernels.basis_values(self.knots, p, su, uv[..., 0])[:, 0]
        bv = kernels.basis_values(self.knots, p, sv, uv[..., 1])[:, 0]
        basis = (bu[:, :, None] * bv[:, None, :]).reshape(B, N, (p + 1) ** 2)
        return X, NRM, MEAS, basis

    def tensor_data(self, q):
        """Per-cell tensor Gauss data of order ``q`` (cached)."""
        return self._tensor_cache(q)

    @cached_property
    def _tensor_store(self):
        return {}

    def _tensor_cache(self, q):
        if q not in self._tensor_store:
            pts, wts = duffy.tensor_rule(q)
            X, N, meas, basis = self.evaluate(np.arange(self.n_cells), pts)
            wb = basis * (meas * wts)[..., None]
            self._tensor_store[q] = (X, N, meas * wts, basis, wb)
        return self._tensor_store[q]

    @cached_property
    def cell_vertices(self):
        """Global vertex ids of the four cell corners, counter-clockwise."""
        X, _, _, _ = self.evaluate(np.arange(self.n_cells), duffy.CORNERS)
        lo, hi = self.surface.bounding_box()
        tol = 1e-9 * max(1.0, float(np.linalg.norm(hi - lo)))
        return vertex_ids(X.reshape(-1, 3), tol).reshape(-1, 4)

    @cached_property
    def cell_geometry(self):
        """Sample points (3x3 per cell) and edge lengths for distance estimates."""
        g = np.linspace(0.0, 1.0, 3)
        ab = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
        X, _, _, _ = self.evaluate(np.arange(self.n_cells), ab)
        corners = X[:, [0, 6, 8, 2]]
        side = np.linalg.norm(corners - np.roll(corners, 1, axis=1), axis=-1).max(axis=1)
        return X, side

    def mass_matrix(self, q=None):
        """Galerkin mass matrix (dense real)."""
        q = q or self.degree + 3
        _, _, _, basis, wb = self.tensor_data(q)
        blocks = np.einsum("cqi,cqj->cij", wb, basis)
        M = np.zeros((self.ndofs, self.ndofs))
        scatter_add(M, self.cell_dofs, self.cell_dofs, blocks)
        return M

    def coefficients_at(self, coef, q):
        """Density values at the order-``q`` tensor points of every cell."""
        _, _, _, basis, _ = self.tensor_data(q)
        return np.einsum("cqi,ci->cq", basis, np.asarray(coef)[self.cell_dofs])


def scatter_add(A, rows, cols, blocks):
    """Deterministic ``A[rows_b, cols_b] += blocks_b`` over a batch of blocks."""
    n, m = A.shape
    idx = (rows[:, :, None] * m + cols[:, None, :]).ravel()
    vals = np.asarray(blocks).ravel()
    if np.iscomplexobj(A):
        A.ravel()[:] += np.bincount(idx, vals.real, n * m) + 1j * np.bincount(idx, vals.imag, n * m)
    else:
        A.ravel()[:] += np.bincount(idx, vals, n * m)
