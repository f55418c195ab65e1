"""Low-level B-spline basis evaluation on open knot vectors.

All routines are vectorized over evaluation points.  Knot vectors are plain
1D float arrays; the :class:`~igauq.geometry.KnotVector` wrapper adds
validation on top of these.
"""

from __future__ import annotations

import numpy as np


def n_basis(knots, degree):
    return len(knots) - degree - 1


def find_span(knots, degree, x):
    """Knot span index of each ``x`` with the right-closed convention at 1.

    Returns ``i`` with ``knots[i] <= x < knots[i+1]`` and ``degree <= i < n``;
    the right end of the interval is assigned to the last non-empty span.
    """
    knots = np.asarray(knots, dtype=float)
    n = n_basis(knots, degree)
    x = np.asarray(x, dtype=float)
    span = np.searchsorted(knots, x, side="right") - 1
    return np.clip(span, degree, n - 1)


def basis_funs(knots, degree, span, x, nder=0):
    """Non-zero basis functions and derivatives at ``x``.

    Returns an array of shape ``(len(x), nder + 1, degree + 1)`` holding
    ``d^k/dx^k b_{span-degree+j}(x)`` (the Piegl--Tiller triangular scheme,
    vectorized over points).
    """
    knots = np.asarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    span = np.broadcast_to(np.asarray(span), x.shape)
    p = degree
    npts = x.size
    ndu = np.zeros((npts, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((npts, p + 1))
    right = np.zeros((npts, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    out = np.zeros((npts, nder + 1, p + 1))
    out[:, 0, :] = ndu[:, :, p]
    if nder == 0:
        return out
    for r in range(p + 1):
        s1, s2 = 0, 1
        a = np.zeros((npts, 2, p + 1))
        a[:, 0, 0] = 1.0
        for k in range(1, nder + 1):
            d = np.zeros(npts)
            rk = r - k
            pk = p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                d = d + a[:, s2, k] * ndu[:, r, pk]
            out[:, k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, nder + 1):
        out[:, k, :] *= fac
        fac *= p - k
    return out


def basis_matrix(knots, degree, x, nder=0):
    """Dense ``(len(x), n_basis)`` matrix of basis values (or a derivative)."""
    knots = np.asarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    span = find_span(knots, degree, x)
    vals = basis_funs(knots, degree, span, x, nder)[:, nder, :]
    out = np.zeros((x.size, n_basis(knots, degree)))
    cols = span[:, None] - degree + np.arange(degree + 1)
    np.put_along_axis(out, cols, vals, axis=1)
    return out


def cox_de_boor(knots, degree, j, x):
    """Scalar Cox--de Boor recursion for a single basis function.

    Direct transcription of the recursive definition (indicator base case,
    0/0 treated as 0).  Slow; used where clarity beats speed.
    """
    knots = np.asarray(knots, dtype=float)
    n = n_basis(knots, degree)
    if not 0 <= j < n:
        raise IndexError(f"basis index {j} out of range [0, {n})")

    def rec(i, p):
        if p == 0:
            if knots[i] <= x < knots[i + 1]:
                return 1.0
            # right-closed: the last non-empty span owns x == knots[-1]
            if x == knots[-1] and knots[i] < knots[i + 1] == knots[-1]:
                return 1.0
            return 0.0
        val = 0.0
        den = knots[i + p] - knots[i]
        if den > 0:
            val += (x - knots[i]) / den * rec(i, p - 1)
        den = knots[i + p + 1] - knots[i + 1]
        if den > 0:
            val += (knots[i + p + 1] - x) / den * rec(i + 1, p - 1)
        return val

    return rec(j, degree)


def greville(knots, degree):
    knots = np.asarray(knots, dtype=float)
    n = n_basis(knots, degree)
    if degree == 0:
        return 0.5 * (knots[:n] + knots[1 : n + 1])
    idx = np.arange(n)[:, None] + 1 + np.arange(degree)
    return knots[idx].mean(axis=1)


def open_uniform(degree, n_intervals):
    inner = np.linspace(0.0, 1.0, n_intervals + 1)
    return np.concatenate([np.zeros(degree), inner, np.ones(degree)])


def breakpoints(knots):
    return np.unique(np.asarray(knots, dtype=float))


def merge_knots(degree, *knot_vectors):
    """Smallest open knot vector of ``degree`` whose space contains all inputs.

    Each input may have a lower degree; a knot of multiplicity ``m`` in a
    degree-``q`` vector needs multiplicity ``m + degree - q`` to keep the same
    continuity after elevation.
    """
    mult = {}
    for kv, q in knot_vectors:
        kv = np.asarray(kv, dtype=float)
        if q > degree:
            raise ValueError("cannot lower the degree of a spline space")
        vals, counts = np.unique(kv, return_counts=True)
        for v, c in zip(vals, counts):
            if v in (0.0, 1.0):
                continue
            need = min(c + degree - q, degree + 1)
            mult[v] = max(mult.get(v, 0), need)
    inner = []
    for v in sorted(mult):
        inner.extend([v] * mult[v])
    return np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])
