"""Galerkin assembly and solution of the combined-field integral equation.

The unknown is the Neumann trace ``q = du/dn`` of the total field on a
sound-soft obstacle.  With ``u_s(x) = -int_S Phi(x, z) q(z) dsigma_z`` the
boundary condition gives

    (1/2 + K' - i eta V) q = du_inc/dn - i eta u_inc,

where ``K'`` has kernel ``dPhi(x, z)/dn_x``.  Element pairs sharing a cell,
an edge or a vertex use the Duffy rules of :mod:`.duffy`; separated pairs
use tensor Gauss rules whose order follows the distance-to-size ratio.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np
import scipy.linalg

from .. import kernels
from ..geometry import MultipatchSurface
from . import duffy
from .greens import WaveContext, incident_trace
from .space import BoundarySpace, scatter_add

MAX_DOFS = 12000


class QuadratureFailure(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


class TooManyDofsError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class QuadConfig:
    """Quadrature settings for the element-pair integrals.

    ``singular_order`` defaults to ``p + 4``.  Separated pairs use the
    smallest Gauss order ``q`` with ``rho**(-2q) <= far_tol`` where ``rho``
    is the Bernstein-ellipse parameter for distance/size ratio ``d/L``,
    clamped to ``[far_min, far_max]``.
    """

    singular_order: int | None = None
    far_tol: float = 1e-11
    far_min: int = 3
    far_max: int = 20
    far_order_factor: int = 1
    rhs_order: int | None = None
    batch_points: int = 400_000

    def sing(self, degree):
        return self.singular_order or degree + 4


def far_order(dist, size, tol=1e-11, qmin=3, qmax=20):
    """Gauss order for an analytic integrand with a singularity at ``dist``."""
    ratio = np.maximum(np.asarray(dist, dtype=float), 0.25 * size) / size
    a = 1.0 + 2.0 * ratio
    rho = a + np.sqrt(a * a - 1.0)
    q = np.ceil(np.log(1.0 / tol) / (2.0 * np.log(rho)))
    return np.clip(q, qmin, qmax).astype(int)


@dataclasses.dataclass
class BemSystem:
    matrix: np.ndarray
    V: np.ndarray
    K: np.ndarray
    M: np.ndarray
    space: BoundarySpace
    ctx: WaveContext
    quad: QuadConfig
    timings: dict

    @property
    def ndofs(self):
        return self.matrix.shape[0]


@dataclasses.dataclass
class DensitySolution:
    coefficients: np.ndarray
    space: BoundarySpace
    ctx: WaveContext
    residual: float
    level: int
    y: np.ndarray | None = None


def classify_pairs(space: BoundarySpace):
    """Unordered cell pairs grouped into identical, edge, vertex and separated.

    Returns a dict with ``identical`` (C,), ``edge`` and ``vertex`` arrays
    of ``(i, j, ki, kj, li, lj)`` rows (cell ids, origin corner and first
    corner for each cell's local frame) and ``far`` (P, 2) pairs.
    """
    verts = space.cell_vertices
    C = space.n_cells
    by_vertex = {}
    for c in range(C):
        for v in verts[c]:
            by_vertex.setdefault(int(v), []).append(c)
    near = set()
    for cells in by_vertex.values():
        for a in cells:
            for b in cells:
                if a < b:
                    near.add((a, b))
    edge, vertex = [], []
    for i, j in sorted(near):
        shared = sorted(set(verts[i].tolist()) & set(verts[j].tolist()))
        if len(shared) >= 3:
            raise QuadratureFailure(f"cells {i} and {j} share {len(shared)} vertices")
        A = shared[0]
        ki = int(np.flatnonzero(verts[i] == A)[0])
        kj = int(np.flatnonzero(verts[j] == A)[0])
        if len(shared) == 2:
            B = shared[1]
            li = int(np.flatnonzero(verts[i] == B)[0])
            lj = int(np.flatnonzero(verts[j] == B)[0])
            if (li - ki) % 4 not in (1, 3) or (lj - kj) % 4 not in (1, 3):
                raise QuadratureFailure(f"cells {i} and {j} share a diagonal")
            edge.append((i, j, ki, kj, li, lj))
        else:
            vertex.append((i, j, ki, kj, (ki + 1) % 4, (kj + 1) % 4))
    iu, ju = np.triu_indices(C, k=1)
    is_near = np.zeros((C, C), dtype=bool)
    for i, j in near:
        is_near[i, j] = True
    keep = ~is_near[iu, ju]
    return {
        "identical": np.arange(C),
        "edge": np.array(edge, dtype=int).reshape(-1, 6),
        "vertex": np.array(vertex, dtype=int).reshape(-1, 6),
        "far": np.stack([iu[keep], ju[keep]], axis=1),
    }


def _pair_distances(space, pairs, chunk=20000):
    pts, side = space.cell_geometry
    d = np.empty(len(pairs))
    for s in range(0, len(pairs), chunk):
        pr = pairs[s : s + chunk]
        diff = pts[pr[:, 0]][:, :, None, :] - pts[pr[:, 1]][:, None, :, :]
        d[s : s + chunk] = np.sqrt(np.einsum("pabk,pabk->pab", diff, diff).min(axis=(1, 2)))
    size = np.maximum(side[pairs[:, 0]], side[pairs[:, 1]])
    return d, size


class _Accumulator:
    """Collects (rows, cols, block) triples and scatters them in one pass."""

    def __init__(self, n):
        self.n = n
        self.rows, self.cols, self.V, self.K = [], [], [], []

    def add(self, rows, cols, V, K):
        self.rows.append(rows)
        self.cols.append(cols)
        self.V.append(V)
        self.K.append(K)

    def finish(self):
        V = np.zeros((self.n, self.n), dtype=complex)
        K = np.zeros((self.n, self.n), dtype=complex)
        if self.rows:
            rows = np.concatenate(self.rows)
            cols = np.concatenate(self.cols)
            scatter_add(V, rows, cols, np.concatenate(self.V))
            scatter_add(K, rows, cols, np.concatenate(self.K))
        return V, K


def _singular_blocks(space, kind, pairs, q, kappa, batch_points):
    if kind == "identical":
        S, T, W = duffy.identical_rule(q)
    elif kind == "edge":
        S, T, W = duffy.edge_rule(q)
    else:
        S, T, W = duffy.vertex_rule(q)
    out = []
    bsz = max(1, batch_points // len(W))
    for s in range(0, len(pairs), bsz):
        chunk = pairs[s : s + bsz]
        if kind == "identical":
            ci = cj = chunk
            si = np.broadcast_to(S, (len(chunk),) + S.shape)
            tj = np.broadcast_to(T, (len(chunk),) + T.shape)
        else:
            ci, cj = chunk[:, 0], chunk[:, 1]
            si = np.stack([duffy.apply_frame(duffy.corner_frame(a, b), S) for a, b in chunk[:, [2, 4]]])
            tj = np.stack([duffy.apply_frame(duffy.corner_frame(a, b), T) for a, b in chunk[:, [3, 5]]])
        X, NX, MX, BX = space.evaluate(ci, si)
        Z, NZ, MZ, BZ = space.evaluate(cj, tj)
        out.append(kernels.paired_blocks(X, NX, BX, Z, NZ, BZ, W * MX * MZ, kappa))
    if not out:
        return (np.zeros((0, space.nb, space.nb), dtype=complex),) * 3
    return tuple(np.concatenate([o[k] for o in out]) for k in range(3))


def assemble_cfie(
    surface: MultipatchSurface | None,
    space: BoundarySpace,
    ctx: WaveContext,
    quadcfg: QuadConfig | None = None,
) -> BemSystem:
    """Dense CFIE Galerkin matrix ``1/2 M + K' - i eta V`` on ``space``."""
    quad = quadcfg or QuadConfig()
    if surface is not None and surface is not space.surface:
        raise ValueError("space was built on a different surface")
    n = space.ndofs
    if n > MAX_DOFS:
        raise TooManyDofsError(f"{n} dofs exceed the dense limit of {MAX_DOFS}")
    timings = {}
    t0 = time.perf_counter()
    pairs = classify_pairs(space)
    kappa = ctx.kappa
    dofs = space.cell_dofs
    acc = _Accumulator(n)
    qs = quad.sing(space.degree)

    V, KX, _ = _singular_blocks(space, "identical", pairs["identical"], qs, kappa, quad.batch_points)
    acc.add(dofs, dofs, V, KX)
    for kind in ("edge", "vertex"):
        pr = pairs[kind]
        V, KX, KZ = _singular_blocks(space, kind, pr, qs, kappa, quad.batch_points)
        i, j = dofs[pr[:, 0]], dofs[pr[:, 1]]
        acc.add(i, j, V, KX)
        acc.add(j, i, V.transpose(0, 2, 1), KZ.transpose(0, 2, 1))
    timings["singular"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    far = pairs["far"]
    if len(far):
        dist, size = _pair_distances(space, far)
        orders = far_order(dist, size, quad.far_tol, quad.far_min, quad.far_max) * quad.far_order_factor
        for q in np.unique(orders):
            sel = far[orders == q]
            X, NX, _, _, WB = space.tensor_data(int(q))
            bsz = max(1, quad.batch_points // (q**4))
            for s in range(0, len(sel), bsz):
                pr = sel[s : s + bsz]
                a, b = pr[:, 0], pr[:, 1]
                V, KX, KZ = kernels.tensor_pair_blocks(X[a], NX[a], WB[a], X[b], NX[b], WB[b], kappa)
                acc.add(dofs[a], dofs[b], V, KX)
                acc.add(dofs[b], dofs[a], V.transpose(0, 2, 1), KZ.transpose(0, 2, 1))
    timings["far"] = time.perf_counter() - t1

    Vm, Km = acc.finish()
    M = space.mass_matrix()
    A = 0.5 * M + Km - 1j * ctx.eta * Vm
    if not np.all(np.isfinite(A)):
        bad = np.argwhere(~np.isfinite(A))[0]
        raise QuadratureFailure(f"non-finite matrix entry at dofs {tuple(bad)}")
    timings["assembly"] = time.perf_counter() - t0
    return BemSystem(A, Vm, Km, M, space, ctx, quad, timings)


def cfie_rhs(space: BoundarySpace, ctx: WaveContext, q=None):
    q = q or max(space.degree + 6, 8)
    X, N, W, basis, wb = space.tensor_data(q)
    u, du = incident_trace(ctx, X, N)
    f = du - 1j * ctx.eta * u
    blocks = np.einsum("cqi,cq->ci", wb, f)
    rhs = np.zeros(space.ndofs, dtype=complex)
    np.add.at(rhs, space.cell_dofs.ravel(), blocks.ravel())
    return rhs


def solve_density(system: BemSystem, ctx=None, surface=None, space=None, y=None, rtol=1e-10):
    """Dense LU solve of the CFIE for the Neumann trace coefficients."""
    ctx = ctx or system.ctx
    space = space or system.space
    rhs = cfie_rhs(space, ctx)
    norm = np.linalg.norm(rhs)
    if norm == 0.0:
        coef = np.zeros_like(rhs)
        return DensitySolution(coef, space, ctx, 0.0, space.level, y)
    try:
        lu = scipy.linalg.lu_factor(system.matrix, check_finite=False)
    except (ValueError, scipy.linalg.LinAlgError) as exc:  # pragma: no cover
        raise SolverError(str(exc)) from exc
    if np.any(np.abs(np.diag(lu[0])) == 0.0):
        raise SolverError("singular CFIE matrix")
    coef = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
    res = float(np.linalg.norm(system.matrix @ coef - rhs) / norm)
    if not res <= rtol:
        raise SolverError(f"relative residual {res:.2e} exceeds {rtol:.0e}")
    return DensitySolution(coef, space, ctx, res, space.level, y)


def solve(surface, ctx, degree=2, level=0, quadcfg=None, y=None):
    """Convenience wrapper: build the space, assemble and solve."""
    space = BoundarySpace(surface, degree, level)
    system = assemble_cfie(surface, space, ctx, quadcfg)
    return solve_density(system, ctx, surface, space, y=y)

