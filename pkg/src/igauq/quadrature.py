"""Quadrature rules on the parameter box [-1, 1]^M.

All rules are normalized for the uniform probability measure, so weights sum
to one.  Three families are provided: the Halton sequence (quasi-Monte
Carlo), Gauss-Legendre (1D and tensor), and anisotropic Smolyak sparse grids
built from Gauss-Legendre rules with ``2**i - 1`` points.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
from functools import lru_cache

import numpy as np


@dataclasses.dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray  # (N, M)
    weights: np.ndarray  # (N,)
    kind: str

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float, ndmin=2)
        weights = np.array(self.weights, dtype=float)
        if nodes.shape[0] != weights.shape[0]:
            raise ValueError("nodes and weights disagree in length")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self):
        return self.nodes.shape[1]

    def __len__(self):
        return len(self.weights)

    def integrate(self, f):
        """Apply the rule to ``f`` mapping one node (M,) to an array."""
        return sum(w * np.asarray(f(y)) for y, w in zip(self.nodes, self.weights))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"y{k + 1}" for k in range(self.dim)] + ["weight"])
            for y, w in zip(self.nodes, self.weights):
                wr.writerow([repr(float(v)) for v in y] + [repr(float(w))])


def primes(m):
    """First ``m`` primes."""
    out = []
    n = 2
    while len(out) < m:
        if all(n % p for p in out if p * p <= n):
            out.append(n)
        n += 1
    return out


def radical_inverse(index, base):
    """Van der Corput radical inverse of integer array ``index`` in ``base``."""
    index = np.asarray(index, dtype=np.int64).copy()
    out = np.zeros(index.shape)
    f = 1.0 / base
    while np.any(index > 0):
        out += f * (index % base)
        index //= base
        f /= base
    return out


def halton_points(n, m, offset=0):
    """Unmapped Halton points in [0, 1)^m for indices ``offset+1 .. offset+n``."""
    idx = np.arange(offset + 1, offset + n + 1)
    return np.stack([radical_inverse(idx, b) for b in primes(m)], axis=1)


def halton_rule(n, m, offset=0) -> QuadratureRule:
    if n < 1 or m < 1:
        raise ValueError("need n >= 1 and m >= 1")
    pts = 2.0 * halton_points(n, m, offset) - 1.0
    return QuadratureRule(pts, np.full(n, 1.0 / n), "qmc")


def _legendre(n, x):
    """``P_n(x)`` and ``P_n'(x)`` by the three-term recurrence."""
    p0, p1 = np.ones_like(x), x.copy()
    if n == 0:
        return p0, np.zeros_like(x)
    for j in range(2, n + 1):
        p0, p1 = p1, ((2 * j - 1) * x * p1 - (j - 1) * p0) / j
    return p1, n * (x * p1 - p0) / (x * x - 1.0)


@lru_cache(maxsize=None)
def _gauss_legendre(n):
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return np.zeros(1), np.full(1, 2.0)
    k = np.arange(1, n + 1)
    x = np.cos(np.pi * (k - 0.25) / (n + 0.5))
    for _ in range(100):
        p, dp = _legendre(n, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    x = np.sort(x)
    x = 0.5 * (x - x[::-1])  # exact symmetry; the middle node of odd rules is 0
    _, dp = _legendre(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    w = 0.5 * (w + w[::-1])
    return x, w


def gauss_legendre(n):
    """Nodes and probability-normalized weights (sum 1) of the ``n``-point rule."""
    x, w = _gauss_legendre(n)
    return x, w / 2.0


def tensor_rule(orders) -> QuadratureRule:
    rules = [gauss_legendre(n) for n in orders]
    nodes = np.array(list(itertools.product(*[r[0] for r in rules])), dtype=float)
    weights = np.array([np.prod(c) for c in itertools.product(*[r[1] for r in rules])])
    return QuadratureRule(nodes.reshape(len(weights), len(orders)), weights, "tensor")


@dataclasses.dataclass(frozen=True, eq=False)
class AnisotropyWeights:
    gamma: np.ndarray

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        if np.any(g <= 0):
            raise ValueError("anisotropy weights must be positive")
        if np.any(np.diff(g) < 0):
            raise ValueError("anisotropy weights must be nondecreasing")
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)

    @classmethod
    def isotropic(cls, m):
        return cls(np.ones(m))

    @classmethod
    def from_eigenvalues(cls, lam):
        """``gamma_k = max(1, log2(lam_1 / lam_k) / 2)`` for descending ``lam``."""
        lam = np.asarray(lam, dtype=float)
        g = np.maximum(1.0, 0.5 * np.log2(lam[0] / lam))
        return cls(np.maximum.accumulate(g))


def smolyak_indices(q, gamma):
    """Downward-closed index set ``{i >= 1 : sum gamma_k (i_k - 1) <= q - 1}``.

    The root index ``(1, ..., 1)`` (the one-point rule) is always included for
    ``q >= 0``.
    """
    gamma = np.asarray(gamma, dtype=float)
    budget = q - 1.0
    out = []

    def rec(prefix, used):
        k = len(prefix)
        if k == len(gamma):
            out.append(tuple(prefix))
            return
        i = 1
        while True:
            cost = used + gamma[k] * (i - 1)
            if i > 1 and cost > budget + 1e-12:
                break
            rec(prefix + [i], cost)
            i += 1

    rec([], 0.0)
    return out


def sparse_grid(q, weights: AnisotropyWeights | None = None, m=None, keep_zero=True) -> QuadratureRule:
    """Anisotropic Smolyak rule by the combination technique.

    Nodes of every tensor grid in the index set are kept (with zero weight if
    they cancel) when ``keep_zero`` is set, so the node set grows with ``q``.
    """
    if q < 0:
        raise ValueError("sparse-grid level must be non-negative")
    if weights is None:
        if m is None:
            raise ValueError("give anisotropy weights or a dimension")
        weights = AnisotropyWeights.isotropic(m)
    if m is not None and m != len(weights.gamma):
        raise ValueError("dimension does not match anisotropy weights")
    idx = smolyak_indices(q, weights.gamma)
    if not idx:
        raise ValueError("empty index set")
    iset = set(idx)
    M = len(weights.gamma)
    acc = {}
    order = []
    for i in idx:
        c = 0
        for z in itertools.product((0, 1), repeat=M):
            j = tuple(a + b for a, b in zip(i, z))
            if j in iset:
                c += (-1) ** sum(z)
        if c == 0 and not keep_zero:
            continue
        rule = tensor_rule([2**k - 1 for k in i])
        for y, w in zip(rule.nodes, rule.weights):
            key = tuple(np.round(y, 13) + 0.0)
            if key not in acc:
                acc[key] = [y, 0.0]
                order.append(key)
            acc[key][1] += c * w
    nodes = np.array([acc[k][0] for k in order]).reshape(len(order), M)
    wts = np.array([acc[k][1] for k in order])
    return QuadratureRule(nodes, wts, "sparse-grid")
