"""Multilevel quadrature for the mean and the second moment of Cauchy data.

For a level hierarchy ``0..L`` the estimators are

    Q^ML[rho]      = sum_l Q_{L-l}( rho_l - rho_{l-1} ),
    Q^ML[rho (x) mu] = sum_l Q_{L-l}( rho_l (x) mu_l - rho_{l-1} (x) mu_{l-1} ),

with ``rho_{-1} = 0``.  Both terms of a difference are evaluated at the same
parameter nodes.  Evaluation is split into a plan (unique ``(level, y)``
pairs), an execution step that may run in worker processes, and a reduction
in fixed node order, so results do not depend on the worker count.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .quadrature import AnisotropyWeights, QuadratureRule, halton_rule, sparse_grid

log = logging.getLogger(__name__)

MAX_SAMPLES = 2**31


def allocate_samples(L, a, r=6, n_min=1):
    """Sample counts ``N_l = max(2**(a - r*l), n_min)`` for ``l = 0..L``."""
    if L < 0 or r < 1 or n_min < 1:
        raise ValueError("need L >= 0, r >= 1 and n_min >= 1")
    if a >= 31 or n_min > MAX_SAMPLES:
        raise OverflowError("sample count exceeds 2**31")
    out = []
    for lev in range(L + 1):
        e = a - r * lev
        n = 2**e if e >= 0 else 0
        out.append(int(max(n, n_min)))
    return tuple(out)


@dataclasses.dataclass
class LevelHierarchy:
    """Levels ``0..L`` with the rule ``Q_{L-l}`` attached to difference ``l``."""

    L: int
    rules: Sequence[QuadratureRule]

    def __post_init__(self):
        if len(self.rules) != self.L + 1:
            raise ValueError("need one rule per level")
        dims = {r.dim for r in self.rules}
        if len(dims) != 1:
            raise ValueError("rules disagree in parameter dimension")

    @property
    def dim(self):
        return self.rules[0].dim

    @property
    def counts(self):
        return tuple(len(r) for r in self.rules)

    @classmethod
    def qmc(cls, L, M, a, r=6, n_min=1, offset=0, L_max=None, factor=1):
        """Halton rules; ``Q_j`` has ``factor * max(2**(a - r (L_max - j)), n_min)`` points.

        With ``L_max = L`` (default) the counts are :func:`allocate_samples`.
        For a convergence study over ``L <= L_max`` the rules ``Q_j`` stay fixed.
        """
        L_max = L if L_max is None else L_max
        if L > L_max:
            raise ValueError("L exceeds L_max")
        full = allocate_samples(L_max, a, r, n_min)
        # Q_j is the rule with index j = L - l; full[l'] belongs to Q_{L_max - l'}
        counts = [factor * full[L_max - (L - lev)] for lev in range(L + 1)]
        return cls(L, [halton_rule(n, M, offset) for n in counts])

    @classmethod
    def sparse(cls, L, weights: AnisotropyWeights, q0=1.0, step=1.0):
        """Sparse-grid rules ``Q_j = sparse_grid(q0 + j * step)``."""
        return cls(L, [sparse_grid(q0 + (L - lev) * step, weights) for lev in range(L + 1)])

    def describe(self):
        return {
            "L": self.L,
            "dim": self.dim,
            "counts": list(self.counts),
            "kinds": [r.kind for r in self.rules],
        }


def y_key(y):
    return hashlib.sha256(np.ascontiguousarray(y, dtype="<f8").tobytes()).hexdigest()[:32]


def _as_vector(v):
    return np.asarray(getattr(v, "vector", v))


_WORKER_MODEL = None


def _worker_init(model):
    global _WORKER_MODEL
    _WORKER_MODEL = model
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(1)
    except Exception:  # pragma: no cover - optional tuning
        pass


def _worker_call(task):
    lev, y = task
    return _WORKER_MODEL(lev, y)


@dataclasses.dataclass
class EvalStats:
    requests: int = 0
    evaluations: int = 0
    memory_hits: int = 0
    disk_hits: int = 0
    coupled_pairs: int = 0

    def as_dict(self):
        return dataclasses.asdict(self)


class Evaluator:
    """Deterministic evaluation of a model ``(level, y) -> result``.

    Results are memoized by ``(level, y)``.  With ``threads > 1`` missing
    entries are computed in a process pool; results are reassembled in
    request order so the reduction is independent of the worker count.
    """

    def __init__(self, model: Callable, threads=1, cache=None, chunk=None):
        self.model = model
        self.threads = max(1, int(threads))
        self.chunk = chunk
        self.cache = cache if hasattr(model, "cache_key") else None
        self.memo = {}
        self.stats = EvalStats()

    def _run(self, todo):
        if self.threads == 1 or len(todo) == 1:
            for lev, y in todo:
                yield self.model(lev, y)
            return
        with ProcessPoolExecutor(self.threads, initializer=_worker_init, initargs=(self.model,)) as ex:
            chunk = max(1, len(todo) // (4 * self.threads))
            if self.chunk:
                chunk = min(chunk, self.chunk)
            yield from ex.map(_worker_call, todo, chunksize=chunk)

    def _from_disk(self, lev, y):
        if self.cache is None:
            return None
        arrays = self.cache.get(self.model.cache_key(lev, y))
        return None if arrays is None else self.model.from_arrays(arrays)

    def evaluate(self, tasks):
        keys = [(lev, y_key(y)) for lev, y in tasks]
        self.stats.requests += len(tasks)
        missing, seen = [], set()
        for (lev, y), k in zip(tasks, keys):
            if k in self.memo:
                self.stats.memory_hits += 1
            elif k not in seen:
                seen.add(k)
                missing.append((k, (lev, np.array(y, dtype=float))))
            else:
                self.stats.memory_hits += 1
        if missing and self.cache is not None:
            still = []
            for k, (lev, y) in missing:
                res = self._from_disk(lev, y)
                if res is None:
                    still.append((k, (lev, y)))
                else:
                    self.memo[k] = res
                    self.stats.disk_hits += 1
            missing = still
        if missing:
            todo = [t for _, t in missing]
            # results are stored (and checkpointed to disk) as they arrive
            for (k, (lev, y)), res in zip(missing, self._run(todo)):
                self.memo[k] = res
                self.stats.evaluations += 1
                if self.cache is not None:
                    self.cache.put(self.model.cache_key(lev, y), self.model.to_arrays(res))
        return [self.memo[k] for k in keys]


@dataclasses.dataclass
class MLEstimate:
    """Multilevel estimate with per-level-difference contributions."""

    mean: np.ndarray | None
    second: np.ndarray | None
    mean_contributions: list
    second_contributions: list
    hierarchy: LevelHierarchy
    stats: dict

    @property
    def L(self):
        return self.hierarchy.L


def _plan(h: LevelHierarchy):
    tasks = []
    for lev, rule in enumerate(h.rules):
        for y, w in zip(rule.nodes, rule.weights):
            if w == 0.0:
                continue
            tasks.append((lev, y))
            if lev > 0:
                tasks.append((lev - 1, y))
    return tasks


def ml_estimate(h: LevelHierarchy, model, mean=True, second=False, evaluator: Evaluator | None = None) -> MLEstimate:
    """Multilevel mean and/or second moment of ``model(level, y)``.

    ``model`` returns an array or an object with a ``vector`` attribute
    (such as interface Cauchy data); second moments are ``v v^H``.
    """
    ev = evaluator or Evaluator(model)
    results = ev.evaluate(_plan(h))
    it = iter(results)
    mean_c, sec_c = [], []
    for lev, rule in enumerate(h.rules):
        m_acc = None
        s_acc = None
        for y, w in zip(rule.nodes, rule.weights):
            if w == 0.0:
                continue
            fine = _as_vector(next(it))
            coarse = _as_vector(next(it)) if lev > 0 else None
            if lev > 0:
                ev.stats.coupled_pairs += 1
            if mean:
                d = fine if coarse is None else fine - coarse
                m_acc = w * d if m_acc is None else m_acc + w * d
            if second:
                s = np.outer(fine, fine.conj())
                if coarse is not None:
                    s = s - np.outer(coarse, coarse.conj())
                s_acc = w * s if s_acc is None else s_acc + w * s
        mean_c.append(m_acc)
        sec_c.append(s_acc)
    total_m = _resum(mean_c) if mean else None
    total_s = _resum(sec_c) if second else None
    return MLEstimate(total_m, total_s, mean_c, sec_c, h, ev.stats.as_dict())


def _resum(parts):
    parts = [p for p in parts if p is not None]
    if not parts:
        return None
    total = np.zeros_like(parts[0])
    for p in parts:
        total = total + p
    return total


def ml_mean(h: LevelHierarchy, model, evaluator=None) -> MLEstimate:
    return ml_estimate(h, model, mean=True, second=False, evaluator=evaluator)


def ml_second_moment(h: LevelHierarchy, model, evaluator=None) -> MLEstimate:
    return ml_estimate(h, model, mean=True, second=True, evaluator=evaluator)


def single_level(rule: QuadratureRule, model, level=0, second=False, evaluator=None):
    """Plain quadrature of ``model(level, .)`` (reference for collapse checks)."""
    return ml_estimate(LevelHierarchy(0, [rule]), lambda _l, y: model(level, y), second=second, evaluator=evaluator)


def convergence_study(model, M, L_max, a, r=6, n_min=1, offsets=(1,), reference_offset=0, reference_factor=4, evaluator=None):
    """Sup-norm distance of ML means for ``L = 0..L_max`` to a fine reference.

    The reference is the ``L_max`` estimator with ``reference_factor`` times
    as many points per rule.  Rules ``Q_j`` are held fixed across ``L`` for
    each Halton ``offset``.  Returns ``(diffs, reference)`` where ``diffs``
    has shape ``(len(offsets), L_max + 1)``.
    """
    ev = evaluator or Evaluator(model)
    href = LevelHierarchy.qmc(L_max, M, a, r, n_min, reference_offset, factor=reference_factor)
    ref = ml_mean(href, model, ev).mean
    diffs = np.zeros((len(offsets), L_max + 1))
    for i, off in enumerate(offsets):
        for L in range(L_max + 1):
            est = ml_mean(LevelHierarchy.qmc(L, M, a, r, n_min, off, L_max), model, ev).mean
            diffs[i, L] = np.abs(est - ref).max()
    return diffs, ref
