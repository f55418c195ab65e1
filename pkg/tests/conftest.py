import numpy as np
import pytest
from hypothesis import settings

from igauq import randomfield as rf
from igauq.bem.assembly import solve
from igauq.bem.greens import WaveContext
from igauq.geometry import cube, cuboid_shell, sphere
from igauq.interface import InterfaceGrid

settings.register_profile("igauq", deadline=None, max_examples=40)
settings.load_profile("igauq")


@pytest.fixture(scope="session")
def ctx():
    return WaveContext(1.0, (0.0, 0.0, 1.0))


@pytest.fixture(scope="session")
def unit_cube():
    return cube()


@pytest.fixture(scope="session")
def unit_sphere():
    return sphere()


@pytest.fixture(scope="session")
def cube_density(unit_cube, ctx):
    return solve(unit_cube, ctx, 2, 0)


class _SphereSolves:
    """Lazily computed sphere densities shared between tests."""

    def __init__(self, surface, ctx):
        self.surface, self.ctx, self.cache = surface, ctx, {}

    def __getitem__(self, level):
        if level not in self.cache:
            self.cache[level] = solve(self.surface, self.ctx, 2, level)
        return self.cache[level]


@pytest.fixture(scope="session")
def sphere_solves(unit_sphere, ctx):
    return _SphereSolves(unit_sphere, ctx)


@pytest.fixture(scope="session")
def cube_grid():
    return InterfaceGrid(cuboid_shell([-0.5] * 3, [1.5] * 3))


@pytest.fixture(scope="session")
def cube_kl(unit_cube):
    kl, fac, M = rf.compute_kl(unit_cube, rf.gaussian_kernel(1 / 20, 4.0), 2, 0, 1e-8, 0.99, 20)
    return kl


def sphere_points(n, radius, centre=(0.0, 0.0, 0.0), seed=0):
    v = np.random.default_rng(seed).standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return np.asarray(centre) + radius * v
