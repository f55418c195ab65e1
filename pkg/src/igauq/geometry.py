"""NURBS patches, multipatch surfaces and their element meshes.

A :class:`MultipatchSurface` is the common representation of the reference
scatterer, of every deformed sample of it, and of the artificial interface.
Everything here is immutable after construction.
"""

from __future__ import annotations

import dataclasses
import hashlib
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import bspline, kernels

GLUE_TOL = 1e-12
MEASURE_TOL = 1e-14

# edge e of the unit square, traversed with increasing parameter:
# 0: v=0, 1: u=1, 2: v=1, 3: u=0
_EDGE_MAPS = (
    lambda t: (t, np.zeros_like(t)),
    lambda t: (np.ones_like(t), t),
    lambda t: (t, np.ones_like(t)),
    lambda t: (np.zeros_like(t), t),
)


class GeometryError(ValueError):
    pass


class DegenerateParametrizationError(GeometryError):
    pass


@dataclasses.dataclass(frozen=True, eq=False)
class KnotVector:
    """Locally quasi-uniform open knot vector."""

    degree: int
    knots: np.ndarray
    theta: float = np.inf

    def __post_init__(self):
        kv = np.asarray(self.knots, dtype=float)
        kv.setflags(write=False)
        object.__setattr__(self, "knots", kv)
        p = self.degree
        if p < 0:
            raise GeometryError("degree must be non-negative")
        k = len(kv) - p - 1
        if k <= p:
            raise GeometryError(f"need more than {p} basis functions, got {k}")
        if np.any(np.diff(kv) < 0):
            raise GeometryError("knots must be non-decreasing")
        if not (np.all(kv[: p + 1] == 0.0) and np.all(kv[-p - 1 :] == 1.0)):
            raise GeometryError("knot vector must be p-open on [0, 1]")
        h = np.diff(bspline.breakpoints(kv))
        if len(h) > 1:
            ratio = h[:-1] / h[1:]
            theta = float(max(ratio.max(), (1.0 / ratio).max()))
        else:
            theta = 1.0
        if np.isfinite(self.theta) and theta > self.theta:
            raise GeometryError(f"mesh ratio {theta} exceeds theta={self.theta}")
        object.__setattr__(self, "theta", theta if not np.isfinite(self.theta) else self.theta)

    @classmethod
    def uniform(cls, degree, n_intervals):
        return cls(degree, bspline.open_uniform(degree, n_intervals))

    @property
    def n(self):
        """Number of basis functions (``k``)."""
        return len(self.knots) - self.degree - 1

    @property
    def breaks(self):
        return bspline.breakpoints(self.knots)

    def refined(self):
        """Knot vector with every element split at its midpoint."""
        b = self.breaks
        mids = 0.5 * (b[:-1] + b[1:])
        return KnotVector(self.degree, np.sort(np.concatenate([self.knots, mids])))

    def matrix(self, x, nder=0):
        return bspline.basis_matrix(self.knots, self.degree, x, nder)

    def __eq__(self, other):
        return (
            isinstance(other, KnotVector)
            and self.degree == other.degree
            and self.knots.shape == other.knots.shape
            and bool(np.all(self.knots == other.knots))
        )

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))


def eval_bspline(knots: KnotVector, j: int, x: float) -> float:
    """Value of the ``j``-th B-spline of ``knots`` at ``x``."""
    if not 0 <= j < knots.n:
        raise IndexError(f"basis index {j} out of range [0, {knots.n})")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    span = bspline.find_span(knots.knots, knots.degree, np.array([x]))
    local = j - (int(span[0]) - knots.degree)
    if not 0 <= local <= knots.degree:
        return 0.0
    vals = bspline.basis_funs(knots.knots, knots.degree, span, np.array([x]))
    return float(vals[0, 0, local])


@dataclasses.dataclass(frozen=True, eq=False)
class NurbsPatch:
    """Tensor-product NURBS map from the unit square into R^3.

    ``control`` has shape ``(k1, k2, 3)`` and ``weights`` shape ``(k1, k2)``.
    ``orientation`` is +1 if ``s_u x s_v`` points out of the enclosed volume.
    """

    ku: KnotVector
    kv: KnotVector
    control: np.ndarray
    weights: np.ndarray | None = None
    orientation: int = 1

    def __post_init__(self):
        c = np.array(self.control, dtype=float)
        if c.shape != (self.ku.n, self.kv.n, 3):
            raise GeometryError(
                f"control net shape {c.shape} does not match ({self.ku.n}, {self.kv.n}, 3)"
            )
        w = np.ones(c.shape[:2]) if self.weights is None else np.array(self.weights, dtype=float)
        if w.shape != c.shape[:2]:
            raise GeometryError("weights shape does not match control net")
        if np.any(w <= 0):
            raise GeometryError("weights must be strictly positive")
        if self.orientation not in (1, -1):
            raise GeometryError("orientation must be +1 or -1")
        c.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "control", c)
        object.__setattr__(self, "weights", w)

    @property
    def degrees(self):
        return self.ku.degree, self.kv.degree

    @cached_property
    def rational(self):
        return not np.all(self.weights == 1.0)

    def with_control(self, control):
        return dataclasses.replace(self, control=control)

    @cached_property
    def homogeneous(self):
        h = np.concatenate([self.control * self.weights[..., None], self.weights[..., None]], axis=-1)
        return np.ascontiguousarray(h)

    def evaluate(self, u, v, nder=0):
        """Points (and first derivatives if ``nder``) at parameter arrays.

        Returns ``x`` of shape ``u.shape + (3,)``, or ``(x, x_u, x_v)``.
        """
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        shape = u.shape + (3,)
        x, xu, xv = kernels.nurbs_eval(
            self.ku.knots, self.kv.knots, self.ku.degree, self.kv.degree, self.homogeneous, u, v
        )
        if not nder:
            return x.reshape(shape)
        return x.reshape(shape), xu.reshape(shape), xv.reshape(shape)

    def evaluate_frame(self, u, v):
        """Points, outward unit normals and surface measure ``|s_u x s_v|``."""
        x, xu, xv = self.evaluate(u, v, nder=1)
        cr = np.cross(xu, xv)
        meas = np.linalg.norm(cr, axis=-1)
        if np.any(meas < MEASURE_TOL):
            raise DegenerateParametrizationError("surface measure below 1e-14")
        return x, self.orientation * cr / meas[..., None], meas

    def frame(self, u, v):
        """Outward unit normals and surface measure ``|s_u x s_v|``."""
        _, n, meas = self.evaluate_frame(u, v)
        return n, meas

    def edge_points(self, edge, t):
        u, v = _EDGE_MAPS[edge](np.asarray(t, dtype=float))
        return self.evaluate(u, v)

    def greville_points(self):
        gu = bspline.greville(self.ku.knots, self.ku.degree)
        gv = bspline.greville(self.kv.knots, self.kv.degree)
        return self.evaluate(gu[:, None], gv[None, :])

    def reparametrized(self, ku: KnotVector, kv: KnotVector):
        """Same map expressed over a larger spline space (degree/knot matching).

        The target space must contain the current one; the new control net is
        found by collocation at the Greville points in homogeneous
        coordinates, which is exact for nested spaces.
        """
        gu = bspline.greville(ku.knots, ku.degree)
        gv = bspline.greville(kv.knots, kv.degree)
        # homogeneous values at collocation points
        pu, pv = self.degrees
        Bu_old = self.ku.matrix(gu)
        Bv_old = self.kv.matrix(gv)
        hom = np.concatenate([self.control * self.weights[..., None], self.weights[..., None]], axis=-1)
        vals = np.einsum("ia,jb,abk->ijk", Bu_old, Bv_old, hom)
        Bu = ku.matrix(gu)
        Bv = kv.matrix(gv)
        coef = np.einsum("ia,jb,abk->ijk", np.linalg.inv(Bu), np.linalg.inv(Bv), vals)
        w = coef[..., 3]
        return NurbsPatch(ku, kv, coef[..., :3] / w[..., None], w, self.orientation)

    def scaled(self, factor):
        return self.with_control(self.control * factor)


def eval_patch(patch: NurbsPatch, uv) -> np.ndarray:
    uv = np.asarray(uv, dtype=float)
    if np.any(uv < 0) or np.any(uv > 1):
        raise ValueError("parameter outside the unit square")
    return patch.evaluate(uv[..., 0], uv[..., 1])


def surface_frame(patch: NurbsPatch, uv):
    uv = np.asarray(uv, dtype=float)
    return patch.frame(uv[..., 0], uv[..., 1])


@dataclasses.dataclass(frozen=True)
class Glue:
    patch: int
    edge: int
    other_patch: int
    other_edge: int
    orientation: int  # +1 same direction, -1 reversed


class MultipatchSurface:
    """Union of NURBS patches glued along common edges."""

    def __init__(self, patches: Sequence[NurbsPatch], glue=None, closed=True, validate=True):
        self.patches = tuple(patches)
        self.closed = closed
        self.glue = tuple(glue) if glue is not None else _detect_glue(self.patches)
        if validate:
            validate_multipatch(self)

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def with_controls(self, controls):
        patches = [p.with_control(c) for p, c in zip(self.patches, controls)]
        return MultipatchSurface(patches, glue=self.glue, closed=self.closed, validate=False)

    def control_points(self):
        return np.concatenate([p.control.reshape(-1, 3) for p in self.patches])

    def bounding_box(self):
        cp = self.control_points()
        return cp.min(axis=0), cp.max(axis=0)

    def area(self, order=8):
        x, w = np.polynomial.legendre.leggauss(order)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        total = 0.0
        for p in self.patches:
            for (a, b), (c, d) in _elements(p):
                uu = a + (b - a) * x
                vv = c + (d - c) * x
                _, meas = p.frame(uu[:, None], vv[None, :])
                total += (b - a) * (d - c) * np.einsum("i,j,ij->", w, w, meas)
        return total

    def signed_volume(self, order=8):
        """(1/3) * integral of <x, n>; positive for outward normals."""
        x, w = np.polynomial.legendre.leggauss(order)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        total = 0.0
        for p in self.patches:
            for (a, b), (c, d) in _elements(p):
                uu = a + (b - a) * x
                vv = c + (d - c) * x
                pts = p.evaluate(uu[:, None], vv[None, :])
                n, meas = p.frame(uu[:, None], vv[None, :])
                f = np.einsum("ijk,ijk->ij", pts, n) * meas
                total += (b - a) * (d - c) * np.einsum("i,j,ij->", w, w, f)
        return total / 3.0

    def geometry_hash(self):
        h = hashlib.sha256()
        for p in self.patches:
            for arr in (p.ku.knots, p.kv.knots, p.control, p.weights):
                h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            h.update(bytes([p.ku.degree, p.kv.degree, p.orientation & 0xFF]))
        return h.hexdigest()


def _elements(patch):
    bu, bv = patch.ku.breaks, patch.kv.breaks
    for i in range(len(bu) - 1):
        for j in range(len(bv) - 1):
            yield (bu[i], bu[i + 1]), (bv[j], bv[j + 1])


def _detect_glue(patches, tol=1e-8):
    t = np.linspace(0.0, 1.0, 5)
    edges = []
    for i, p in enumerate(patches):
        for e in range(4):
            edges.append((i, e, p.edge_points(e, t)))
    glue = []
    used = set()
    for a in range(len(edges)):
        if a in used:
            continue
        ia, ea, xa = edges[a]
        for b in range(a + 1, len(edges)):
            if b in used:
                continue
            ib, eb, xb = edges[b]
            if ib == ia:
                continue
            if np.abs(xa - xb).max() < tol:
                glue.append(Glue(ia, ea, ib, eb, 1))
            elif np.abs(xa - xb[::-1]).max() < tol:
                glue.append(Glue(ia, ea, ib, eb, -1))
            else:
                continue
            used.update((a, b))
            break
    return glue


def validate_multipatch(surface: MultipatchSurface, n_check=33, grid=5):
    """Check the glue table, positive measure and outward orientation."""
    t = np.linspace(0.0, 1.0, n_check)
    seen = set()
    for g in surface.glue:
        for key in ((g.patch, g.edge), (g.other_patch, g.other_edge)):
            if key in seen:
                raise GeometryError(f"edge {key} glued more than once")
            seen.add(key)
        xa = surface.patches[g.patch].edge_points(g.edge, t)
        xb = surface.patches[g.other_patch].edge_points(g.other_edge, t)
        if g.orientation < 0:
            xb = xb[::-1]
        err = np.abs(xa - xb).max()
        if err > GLUE_TOL:
            raise GeometryError(f"glued edges {g} differ by {err:.3e}")
    s = np.linspace(0.0, 1.0, grid)
    for i, p in enumerate(surface.patches):
        p.frame(s[:, None], s[None, :])
    if surface.closed:
        if len(seen) != 4 * len(surface.patches):
            raise GeometryError(f"closed surface has {4 * len(surface) - len(seen)} unglued edges")
        if surface.signed_volume() <= 0:
            raise GeometryError("normals point into the enclosed volume")
    return True


# -- element meshes ----------------------------------------------------------


@dataclasses.dataclass(frozen=True, eq=False)
class ElementMesh:
    """Per-patch tensor grid of elements at refinement level ``level``."""

    level: int
    breaks: tuple  # per patch: (breaks_u, breaks_v)

    @classmethod
    def uniform(cls, n_patches, level):
        b = np.linspace(0.0, 1.0, 2**level + 1)
        return cls(level, tuple((b, b) for _ in range(n_patches)))

    @property
    def n_elements(self):
        return sum((len(bu) - 1) * (len(bv) - 1) for bu, bv in self.breaks)

    @property
    def h(self):
        """Maximal parametric element diameter."""
        return max(
            float(np.hypot(np.diff(bu).max(), np.diff(bv).max())) for bu, bv in self.breaks
        )

    def knot_vectors(self, degree):
        return [
            (
                KnotVector(degree, np.concatenate([np.zeros(degree), bu, np.ones(degree)])),
                KnotVector(degree, np.concatenate([np.zeros(degree), bv, np.ones(degree)])),
            )
            for bu, bv in self.breaks
        ]

    def space_dimension(self, degree):
        """Dimension of the patchwise (discontinuous across patches) space."""
        return sum(
            (len(bu) - 1 + degree) * (len(bv) - 1 + degree) for bu, bv in self.breaks
        )


def refine(mesh: ElementMesh) -> ElementMesh:
    """Split every element into four at its edge midpoints."""

    def split(b):
        return np.sort(np.concatenate([b, 0.5 * (b[:-1] + b[1:])]))

    return ElementMesh(mesh.level + 1, tuple((split(bu), split(bv)) for bu, bv in mesh.breaks))


# -- built-in geometries -----------------------------------------------------

# (origin corner, u direction, v direction) chosen so that u x v is outward
_BOX_FACES = (
    ((0, 0, 0), (0, 1, 0), (1, 0, 0)),  # z = lo
    ((0, 0, 1), (1, 0, 0), (0, 1, 0)),  # z = hi
    ((0, 0, 0), (1, 0, 0), (0, 0, 1)),  # y = lo
    ((0, 1, 0), (0, 0, 1), (1, 0, 0)),  # y = hi
    ((0, 0, 0), (0, 0, 1), (0, 1, 0)),  # x = lo
    ((1, 0, 0), (0, 1, 0), (0, 0, 1)),  # x = hi
)


def _bilinear(p00, p10, p01, p11):
    kv = KnotVector(1, [0.0, 0.0, 1.0, 1.0])
    ctrl = np.array([[p00, p01], [p10, p11]], dtype=float)
    return NurbsPatch(kv, kv, ctrl)


def cuboid_shell(lower, upper, splits=(1, 1, 1)) -> MultipatchSurface:
    """Boundary of the box ``[lower, upper]`` as bilinear patches.

    ``splits[i]`` subdivides the box uniformly along axis ``i`` so faces are
    made of several patches.
    """
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if np.any(hi <= lo):
        raise GeometryError("upper corner must exceed lower corner")
    splits = np.asarray(splits, dtype=int)
    ext = hi - lo
    patches = []
    for origin, du, dv in _BOX_FACES:
        origin = np.asarray(origin, dtype=float)
        du = np.asarray(du, dtype=float)
        dv = np.asarray(dv, dtype=float)
        nu = int(splits[np.argmax(du)])
        nv = int(splits[np.argmax(dv)])
        for i in range(nu):
            for j in range(nv):
                def corner(a, b):
                    unit = origin + du * a + dv * b
                    return lo + ext * unit

                a0, a1 = i / nu, (i + 1) / nu
                b0, b1 = j / nv, (j + 1) / nv
                patches.append(
                    _bilinear(corner(a0, b0), corner(a1, b0), corner(a0, b1), corner(a1, b1))
                )
    return MultipatchSurface(patches)


def cube() -> MultipatchSurface:
    return cuboid_shell([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])


SPHERE_SPANS = 8


def _cube_sphere_face(origin, du, dv, u, v):
    # equiangular gnomonic projection of a cube face onto the unit sphere
    origin = 2.0 * np.asarray(origin, dtype=float) - 1.0
    du = np.asarray(du, dtype=float)
    dv = np.asarray(dv, dtype=float)
    a = np.tan(0.25 * np.pi * (2.0 * u - 1.0))
    b = np.tan(0.25 * np.pi * (2.0 * v - 1.0))
    centre = origin + du + dv
    p = centre + a[..., None] * du + b[..., None] * dv
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


def sphere(radius=1.0, spans=SPHERE_SPANS) -> MultipatchSurface:
    """Six biquadratic patches fitted to the equiangular cube-sphere.

    Each face is the degree-2 spline interpolant (at Greville points) of the
    exact projected face map over ``spans`` x ``spans`` uniform elements.  The
    radial representation error is about 1.8e-4 for 8 spans and 2.4e-5 for 16
    (see ``SPHERE_RADIAL_TOL``).  Edge curves depend only on edge data, so
    neighbouring faces share their edges to round-off.
    """
    kv = KnotVector.uniform(2, spans)
    g = bspline.greville(kv.knots, 2)
    Binv = np.linalg.inv(kv.matrix(g))
    patches = []
    for origin, du, dv in _BOX_FACES:
        vals = _cube_sphere_face(origin, du, dv, g[:, None], g[None, :])
        ctrl = np.einsum("ia,jb,abk->ijk", Binv, Binv, vals) * radius
        patches.append(NurbsPatch(kv, kv, ctrl))
    return MultipatchSurface(patches)


SPHERE_RADIAL_TOL = {8: 2.0e-4, 16: 2.5e-5, 32: 3.5e-6}


def builtin_geometry(name: str, **kwargs) -> MultipatchSurface:
    if name == "cube":
        return cube()
    if name == "sphere":
        return sphere(**kwargs)
    if name == "cuboid_shell":
        return cuboid_shell(**kwargs)
    raise GeometryError(f"unknown geometry {name!r}")


# -- patch files and mesh export ---------------------------------------------


def write_patch_file(surface: MultipatchSurface, path):
    """Plain-text multipatch format (see README)."""
    p0 = surface.patches[0]
    lines = [f"patches {len(surface)} degree {p0.degrees[0]} {p0.degrees[1]}"]
    for p in surface.patches:
        if p.degrees != p0.degrees:
            raise GeometryError("patch file requires a common degree")
        lines.append(f"orientation {p.orientation:+d}")
        for kv in (p.ku, p.kv):
            lines.append(" ".join([str(len(kv.knots))] + [repr(float(k)) for k in kv.knots]))
        for row in np.column_stack([p.control.reshape(-1, 3), p.weights.ravel()]):
            lines.append(" ".join(repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_patch_file(path, closed=True) -> MultipatchSurface:
    with open(path) as fh:
        rows = [ln.split("#", 1)[0].split() for ln in fh]
    rows = [r for r in rows if r]
    head = rows.pop(0)
    if len(head) != 5 or head[0] != "patches" or head[2] != "degree":
        raise GeometryError("bad header, expected 'patches M degree p1 p2'")
    m, p1, p2 = int(head[1]), int(head[3]), int(head[4])
    patches = []
    for _ in range(m):
        orient = 1
        if rows[0][0] == "orientation":
            orient = int(rows.pop(0)[1])
        kvs = []
        for deg in (p1, p2):
            r = rows.pop(0)
            n = int(r[0])
            knots = [float(v) for v in r[1:]]
            if len(knots) != n:
                raise GeometryError("knot vector length mismatch")
            kvs.append(KnotVector(deg, knots))
        k1, k2 = kvs[0].n, kvs[1].n
        data = np.array([[float(v) for v in rows.pop(0)] for _ in range(k1 * k2)])
        if data.shape[1] != 4:
            raise GeometryError("control lines must read 'x y z w'")
        patches.append(
            NurbsPatch(kvs[0], kvs[1], data[:, :3].reshape(k1, k2, 3), data[:, 3].reshape(k1, k2), orient)
        )
    return MultipatchSurface(patches, closed=closed)


def write_vtk(surface: MultipatchSurface, path, n_per_element=4, fields=None, title="igauq surface"):
    """Legacy ASCII VTK polydata with quads sampled per element.

    ``fields`` maps names to callables ``(patch_index, u, v) -> values``
    (real scalars) evaluated at the sampled points.
    """
    pts, quads, data = [], [], {k: [] for k in (fields or {})}
    offset = 0
    for ip, p in enumerate(surface.patches):
        s = []
        for bu in (p.ku.breaks, p.kv.breaks):
            t = np.concatenate(
                [np.linspace(a, b, n_per_element + 1)[:-1] for a, b in zip(bu[:-1], bu[1:])] + [[1.0]]
            )
            s.append(t)
        uu, vv = np.meshgrid(s[0], s[1], indexing="ij")
        x = p.evaluate(uu, vv)
        nu, nv = uu.shape
        pts.append(x.reshape(-1, 3))
        for name, fn in (fields or {}).items():
            data[name].append(np.asarray(fn(ip, uu, vv), dtype=float).ravel())
        idx = offset + np.arange(nu * nv).reshape(nu, nv)
        for i in range(nu - 1):
            for j in range(nv - 1):
                quads.append((idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]))
        offset += nu * nv
    pts = np.concatenate(pts)
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET POLYDATA", f"POINTS {len(pts)} double"]
    out += [f"{a:.12g} {b:.12g} {c:.12g}" for a, b, c in pts]
    out.append(f"POLYGONS {len(quads)} {5 * len(quads)}")
    out += [f"4 {a} {b} {c} {d}" for a, b, c, d in quads]
    if fields:
        out.append(f"POINT_DATA {len(pts)}")
        for name, vals in data.items():
            vals = np.concatenate(vals)
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [f"{v:.12g}" for v in vals]
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def vertex_ids(points, tol=1e-8):
    """Union-find labelling of coincident points."""
    points = np.asarray(points, dtype=float)
    parent = np.arange(len(points))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in cKDTree(points).query_pairs(tol):
        ri, rj = root(i), root(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([root(i) for i in range(len(points))])
    _, labels = np.unique(roots, return_inverse=True)
    return labels
