"""Backend selection for the hot point kernels.

The compiled extension is used when it imports and ``IGAUQ_PURE`` is not set
to a true value; otherwise the NumPy implementation is used.  ``BACKEND``
names the active choice.  Block contractions on top of the point kernels are
plain matrix products and live here, shared by both backends.
"""

import os

import numpy as np

from . import _kernels_py

_force_pure = os.environ.get("IGAUQ_PURE", "").strip().lower() in ("1", "true", "yes")

_impl = _kernels_py
BACKEND = "python"
if not _force_pure:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def backends():
    """Available implementations keyed by name (for benchmarks and tests)."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["compiled"] = _kernels
    except ImportError:  # pragma: no cover
        pass
    return out


def potential_matrix(T, NT, S, NS, kappa, kind, impl=None):
    T, S = _c(T), _c(S)
    NT = _c(NT) if NT is not None else np.zeros_like(T)
    NS = _c(NS) if NS is not None else np.zeros_like(S)
    return (impl or _impl).potential_matrix(T, NT, S, NS, float(kappa), int(kind))


def nurbs_eval(U, V, pu, pv, hom, u, v, impl=None):
    return (impl or _impl).nurbs_eval(
        _c(U), _c(V), int(pu), int(pv), _c(hom), _c(np.ravel(u)), _c(np.ravel(v))
    )


def basis_values(U, p, span, x, nder=0, impl=None):
    span = np.ascontiguousarray(np.ravel(span), dtype=np.int64)
    return (impl or _impl).basis_values(_c(U), int(p), span, _c(np.ravel(x)), int(nder))


def _contract(BX, K, BZ):
    # sum_q BX[b,q,i] K[b,q] BZ[b,q,j] with real BX, BZ and complex K
    left = BX.transpose(0, 2, 1)
    re = np.matmul(left * K.real[:, None, :], BZ)
    im = np.matmul(left * K.imag[:, None, :], BZ)
    return re + 1j * im


def paired_blocks(X, NX, BX, Z, NZ, BZ, W, kappa, impl=None):
    """Element-pair blocks ``(V, K_x, K_z)`` from point-paired rules.

    Arrays are batched over pairs: points ``(B, Q, 3)``, basis ``(B, Q, nb)``
    and weights ``(B, Q)`` (quadrature weight times both measures).
    """
    B, Q = np.shape(W)
    k = (impl or _impl).pair_kernels(
        _c(X).reshape(-1, 3), _c(NX).reshape(-1, 3), _c(Z).reshape(-1, 3), _c(NZ).reshape(-1, 3),
        float(kappa),
    ).reshape(3, B, Q) * np.asarray(W)[None]
    return tuple(_contract(BX, k[m], BZ) for m in range(3))


def tensor_pair_blocks(X, NX, WBX, Z, NZ, WBZ, kappa, impl=None):
    """Element-pair blocks from tensor rules on both elements.

    ``WBX`` and ``WBZ`` carry basis values times weight times measure.
    """
    K = (impl or _impl).tensor_kernels(_c(X), _c(NX), _c(Z), _c(NZ), float(kappa))
    left = WBX.transpose(0, 2, 1)
    out = []
    for m in range(3):
        re = np.matmul(np.matmul(left, K[m].real), WBZ)
        im = np.matmul(np.matmul(left, K[m].imag), WBZ)
        out.append(re + 1j * im)
    return tuple(out)
