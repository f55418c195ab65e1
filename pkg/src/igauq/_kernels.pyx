# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled point kernels (see ``_kernels_py`` for the reference versions)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, M_PI

cnp.import_array()

cdef enum:
    MAXP = 16


cdef inline void _kern(double dx, double dy, double dz, double kappa,
                       double* pr, double* pi, double* dr, double* di) noexcept nogil:
    # phi = e^{ikr}/(4 pi r); dphi = e^{ikr}(ikr - 1)/(4 pi r^3)
    cdef double r = sqrt(dx * dx + dy * dy + dz * dz)
    cdef double c = cos(kappa * r)
    cdef double s = sin(kappa * r)
    cdef double f = 1.0 / (4.0 * M_PI * r)
    cdef double g = f / (r * r)
    pr[0] = c * f
    pi[0] = s * f
    # (c + i s)(i k r - 1) = -c - k r s + i (k r c - s)
    dr[0] = (-c - kappa * r * s) * g
    di[0] = (kappa * r * c - s) * g


def potential_matrix(const double[:, ::1] T, const double[:, ::1] NT, const double[:, ::1] S,
                     const double[:, ::1] NS, double kappa, int kind):
    cdef Py_ssize_t nt = T.shape[0], ns = S.shape[0], a, b
    if kind < 0 or kind > 2:
        raise ValueError("kind must be 0, 1 or 2")
    out_arr = np.empty((nt, ns), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    cdef double dx, dy, dz, pr, pi, dr, di, proj
    with nogil:
        for a in range(nt):
            for b in range(ns):
                dx = T[a, 0] - S[b, 0]
                dy = T[a, 1] - S[b, 1]
                dz = T[a, 2] - S[b, 2]
                _kern(dx, dy, dz, kappa, &pr, &pi, &dr, &di)
                if kind == 0:
                    out[a, b] = pr + 1j * pi
                elif kind == 1:
                    proj = dx * NT[a, 0] + dy * NT[a, 1] + dz * NT[a, 2]
                    out[a, b] = proj * dr + 1j * proj * di
                else:
                    proj = -(dx * NS[b, 0] + dy * NS[b, 1] + dz * NS[b, 2])
                    out[a, b] = proj * dr + 1j * proj * di
    return out_arr


def pair_kernels(const double[:, ::1] X, const double[:, ::1] NX, const double[:, ::1] Z,
                 const double[:, ::1] NZ, double kappa):
    """Phi, dPhi/dn_x and dPhi/dn_z at paired points; shape (3, N)."""
    cdef Py_ssize_t n = X.shape[0], q
    out_arr = np.empty((3, n), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    cdef double dx, dy, dz, pr, pi, dr, di, px, pz
    with nogil:
        for q in range(n):
            dx = X[q, 0] - Z[q, 0]
            dy = X[q, 1] - Z[q, 1]
            dz = X[q, 2] - Z[q, 2]
            _kern(dx, dy, dz, kappa, &pr, &pi, &dr, &di)
            px = dx * NX[q, 0] + dy * NX[q, 1] + dz * NX[q, 2]
            pz = -(dx * NZ[q, 0] + dy * NZ[q, 1] + dz * NZ[q, 2])
            out[0, q] = pr + 1j * pi
            out[1, q] = px * dr + 1j * px * di
            out[2, q] = pz * dr + 1j * pz * di
    return out_arr


def tensor_kernels(const double[:, :, ::1] X, const double[:, :, ::1] NX, const double[:, :, ::1] Z,
                   const double[:, :, ::1] NZ, double kappa):
    """Kernel matrices for batched point sets; shape (3, B, qx, qz)."""
    cdef Py_ssize_t nb = X.shape[0], qx = X.shape[1], qz = Z.shape[1], p, a, c
    out_arr = np.empty((3, nb, qx, qz), dtype=np.complex128)
    cdef double complex[:, :, :, ::1] out = out_arr
    cdef double dx, dy, dz, pr, pi, dr, di, px, pz
    with nogil:
        for p in range(nb):
            for a in range(qx):
                for c in range(qz):
                    dx = X[p, a, 0] - Z[p, c, 0]
                    dy = X[p, a, 1] - Z[p, c, 1]
                    dz = X[p, a, 2] - Z[p, c, 2]
                    _kern(dx, dy, dz, kappa, &pr, &pi, &dr, &di)
                    px = dx * NX[p, a, 0] + dy * NX[p, a, 1] + dz * NX[p, a, 2]
                    pz = -(dx * NZ[p, c, 0] + dy * NZ[p, c, 1] + dz * NZ[p, c, 2])
                    out[0, p, a, c] = pr + 1j * pi
                    out[1, p, a, c] = px * dr + 1j * px * di
                    out[2, p, a, c] = pz * dr + 1j * pz * di
    return out_arr


cdef inline Py_ssize_t _span(const double* U, Py_ssize_t n, int p, double x) noexcept nogil:
    # last i in [p, n-1] with U[i] <= x (right end assigned to span n-1)
    cdef Py_ssize_t lo = p, hi = n, mid
    if x >= U[n]:
        return n - 1
    if x <= U[p]:
        return p
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if U[mid] <= x:
            lo = mid
        else:
            hi = mid
    return lo


cdef inline void _basis_d1(const double* U, int p, Py_ssize_t span, double x,
                           double* N, double* dN) noexcept nogil:
    cdef double left[MAXP + 1]
    cdef double right[MAXP + 1]
    cdef double ndu[MAXP + 1][MAXP + 1]
    cdef double saved, temp, d
    cdef int j, r
    ndu[0][0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - U[span + 1 - j]
        right[j] = U[span + j] - x
        saved = 0.0
        for r in range(j):
            ndu[j][r] = right[r + 1] + left[j - r]
            temp = ndu[r][j - 1] / ndu[j][r]
            ndu[r][j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j][j] = saved
    for r in range(p + 1):
        N[r] = ndu[r][p]
        d = 0.0
        if p > 0:
            if r >= 1:
                d += ndu[r - 1][p - 1] / ndu[p][r - 1]
            if r <= p - 1:
                d -= ndu[r][p - 1] / ndu[p][r]
        dN[r] = p * d


def basis_values(const double[::1] U, int p, const cnp.int64_t[::1] span, const double[::1] x, int nder):
    """Non-zero basis values (and first derivatives) at given spans; (N, nder+1, p+1)."""
    if p > MAXP or nder > 1:
        raise ValueError("degree or derivative order too large for compiled path")
    cdef Py_ssize_t n = x.shape[0], i
    cdef int r
    out_arr = np.empty((n, nder + 1, p + 1))
    cdef double[:, :, ::1] out = out_arr
    cdef double N[MAXP + 1]
    cdef double dN[MAXP + 1]
    with nogil:
        for i in range(n):
            _basis_d1(&U[0], p, span[i], x[i], N, dN)
            for r in range(p + 1):
                out[i, 0, r] = N[r]
                if nder:
                    out[i, 1, r] = dN[r]
    return out_arr


def nurbs_eval(const double[::1] U, const double[::1] V, int pu, int pv, const double[:, :, ::1] hom,
               const double[::1] u, const double[::1] v):
    """Points and parametric tangents of a NURBS patch; three (N, 3) arrays."""
    if pu > MAXP or pv > MAXP:
        raise ValueError("degree too large for compiled path")
    cdef Py_ssize_t n = u.shape[0], i, ku = hom.shape[0], kv = hom.shape[1]
    cdef Py_ssize_t su, sv
    cdef int a, b, k
    X_arr = np.empty((n, 3))
    Xu_arr = np.empty((n, 3))
    Xv_arr = np.empty((n, 3))
    cdef double[:, ::1] X = X_arr
    cdef double[:, ::1] Xu = Xu_arr
    cdef double[:, ::1] Xv = Xv_arr
    cdef double Nu[MAXP + 1]
    cdef double dNu[MAXP + 1]
    cdef double Nv[MAXP + 1]
    cdef double dNv[MAXP + 1]
    cdef double A[4]
    cdef double Au[4]
    cdef double Av[4]
    cdef double h, w
    with nogil:
        for i in range(n):
            su = _span(&U[0], ku, pu, u[i])
            sv = _span(&V[0], kv, pv, v[i])
            _basis_d1(&U[0], pu, su, u[i], Nu, dNu)
            _basis_d1(&V[0], pv, sv, v[i], Nv, dNv)
            for k in range(4):
                A[k] = 0.0
                Au[k] = 0.0
                Av[k] = 0.0
            for a in range(pu + 1):
                for b in range(pv + 1):
                    for k in range(4):
                        h = hom[su - pu + a, sv - pv + b, k]
                        A[k] += Nu[a] * Nv[b] * h
                        Au[k] += dNu[a] * Nv[b] * h
                        Av[k] += Nu[a] * dNv[b] * h
            w = A[3]
            for k in range(3):
                X[i, k] = A[k] / w
                Xu[i, k] = (Au[k] - Au[3] * X[i, k]) / w
                Xv[i, k] = (Av[k] - Av[3] * X[i, k]) / w
    return X_arr, Xu_arr, Xv_arr
