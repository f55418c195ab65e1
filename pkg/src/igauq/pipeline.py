"""Per-sample forward model: parameter -> deformed surface -> density -> Cauchy data."""

from __future__ import annotations

import dataclasses

import numpy as np

from .bem.assembly import QuadConfig, solve
from .bem.greens import WaveContext
from .cache import make_key, settings_hash
from .interface import InterfaceCauchyData, InterfaceGrid, sample_cauchy
from .mlq import y_key
from .randomfield import KLExpansion, SampleRejected, deform_surface


@dataclasses.dataclass
class ForwardModel:
    """Callable ``(level, y) -> InterfaceCauchyData`` for the random scatterer.

    Level ``l`` solves with the density space on ``2**(level_offset + l)``
    intervals per patch direction.
    """

    kl: KLExpansion
    ctx: WaveContext
    grid: InterfaceGrid
    degree: int = 2
    level_offset: int = 0
    quad: QuadConfig | None = None

    def __call__(self, level, y):
        y = np.asarray(y, dtype=float)
        try:
            surface = deform_surface(self.kl, y)
            self.grid.check_enclosure(surface)
        except SampleRejected as exc:
            exc.y, exc.level = y, level
            raise
        dens = solve(surface, self.ctx, self.degree, self.level_offset + level, self.quad, y=y)
        return sample_cauchy(dens, None, self.ctx, self.grid, check=False)

    @property
    def settings(self):
        return {
            "kappa": self.ctx.kappa,
            "direction": [float(v) for v in self.ctx.direction],
            "eta": self.ctx.eta,
            "degree": self.degree,
            "level_offset": self.level_offset,
            "quad": dataclasses.asdict(self.quad or QuadConfig()),
            "interface": self.grid.surface.geometry_hash(),
            "nodes": self.grid.n_nodes,
            "kl": _array_hash(self.kl.eigenvalues, self.kl.modes, self.kl.mean),
            "kl_space": [self.kl.space.degree, self.kl.space.level],
        }

    def cache_key(self, level, y):
        if not hasattr(self, "_settings_hash"):
            self._settings_hash = settings_hash(self.settings)
        return make_key(self.kl.space.surface.geometry_hash(), level, y_key(y), self._settings_hash)

    @staticmethod
    def to_arrays(data: InterfaceCauchyData):
        return {"u": data.u, "du": data.du}

    def from_arrays(self, arrays):
        return InterfaceCauchyData(arrays["u"], arrays["du"], self.grid.n_nodes)


def _array_hash(*arrays):
    import hashlib

    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()[:32]
