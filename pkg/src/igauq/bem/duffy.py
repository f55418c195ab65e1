"""Regularized quadrature for singular element pairs on the unit square.

Each rule returns points ``s`` on the first element, ``t`` on the second
(both in local coordinates of ``[0, 1]^2``) and weights ``w`` such that
``sum(w * F(s, t))`` approximates the four-dimensional integral of ``F``
over the pair.  The singular set is mapped to a face of the unit hypercube
by Duffy-type splittings, which cancels a ``1/r`` (identical) or ``1/r^2``
(edge, vertex) singularity of ``F``.

Conventions for the local orientation:

* identical: ``s`` and ``t`` live on the same element;
* edge: the common edge is ``s_2 = t_2 = 0`` and ``s_1 = t_1`` is the same
  physical point;
* vertex: the common vertex is ``s = t = (0, 0)``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _grid(q, dim):
    x, w = gauss01(q)
    pts = np.stack(np.meshgrid(*([x] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    wts = np.prod(np.stack(np.meshgrid(*([w] * dim), indexing="ij"), axis=-1).reshape(-1, dim), axis=1)
    return pts, wts


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)
    return arrays


@lru_cache(maxsize=None)
def identical_rule(q):
    g, gw = _grid(q, 4)
    rho, xi, a1, a2 = g.T
    S, T, W = [], [], []
    for sig1 in (1.0, -1.0):
        for sig2 in (1.0, -1.0):
            for swap in (False, True):
                m1, m2 = (rho * xi, rho) if swap else (rho, rho * xi)
                d1, d2 = sig1 * m1, sig2 * m2
                lo1 = np.maximum(0.0, -d1)
                lo2 = np.maximum(0.0, -d2)
                s = np.stack([lo1 + (1.0 - m1) * a1, lo2 + (1.0 - m2) * a2], axis=1)
                S.append(s)
                T.append(s + np.stack([d1, d2], axis=1))
                W.append(gw * rho * (1.0 - m1) * (1.0 - m2))
    return _freeze(np.concatenate(S), np.concatenate(T), np.concatenate(W))


@lru_cache(maxsize=None)
def edge_rule(q):
    g, gw = _grid(q, 4)
    rho, a, b, c = g.T
    S, T, W = [], [], []
    for sig in (1.0, -1.0):
        for k in range(3):
            coords = [rho * a, rho * b]
            coords.insert(k, rho)
            m, s2, t2 = coords  # |d| = |t1 - s1|, s2, t2
            d = sig * m
            s1 = np.maximum(0.0, -d) + (1.0 - m) * c
            S.append(np.stack([s1, s2], axis=1))
            T.append(np.stack([s1 + d, t2], axis=1))
            W.append(gw * rho**2 * (1.0 - m))
    return _freeze(np.concatenate(S), np.concatenate(T), np.concatenate(W))


@lru_cache(maxsize=None)
def vertex_rule(q):
    g, gw = _grid(q, 4)
    rho = g[:, 0]
    rest = rho[:, None] * g[:, 1:]
    S, T, W = [], [], []
    for k in range(4):
        coords = np.insert(rest, k, rho, axis=1)
        S.append(coords[:, :2])
        T.append(coords[:, 2:])
        W.append(gw * rho**3)
    return _freeze(np.concatenate(S), np.concatenate(T), np.concatenate(W))


@lru_cache(maxsize=None)
def tensor_rule(q):
    """Tensor Gauss rule on one element: points ``(q*q, 2)`` and weights."""
    pts, wts = _grid(q, 2)
    return _freeze(pts, wts)


# corners of the unit square in counter-clockwise order
CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def corner_frame(k_origin, k_first):
    """Affine map sending (0,0) to corner ``k_origin`` and (1,0) to ``k_first``.

    Returns ``(origin, e1, e2)`` with local point ``origin + s1 e1 + s2 e2``.
    ``k_first`` must be adjacent to ``k_origin``.
    """
    if (k_first - k_origin) % 4 not in (1, 3):
        raise ValueError("corners are not adjacent")
    k_other = (2 * k_origin - k_first) % 4
    o = CORNERS[k_origin]
    return o, CORNERS[k_first] - o, CORNERS[k_other] - o


def apply_frame(frame, pts):
    o, e1, e2 = frame
    return o + pts[..., :1] * e1 + pts[..., 1:2] * e2
