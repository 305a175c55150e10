import math
from importlib import resources

import numpy as np
import pytest

from closedgeo import manifold as M

CONFIG_DIR = resources.files("closedgeo") / "configs"
LAMBDA = "0.1*sin(2*pi*x1)*sin(2*pi*x2)"


def config_path(name: str) -> str:
    return str(CONFIG_DIR / name)


def malformed_paths() -> list:
    return sorted(str(p) for p in (CONFIG_DIR / "malformed").iterdir() if p.name.endswith(".json"))


def sphere_ambient(theta, phi):
    """Polar chart coordinates to the unit sphere in R^3 (independent oracle)."""
    return np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])


def great_circle_distance(p, q) -> float:
    a, b = sphere_ambient(*p), sphere_ambient(*q)
    return math.atan2(np.linalg.norm(np.cross(a, b)), float(a @ b))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def plane():
    return M.euclidean(2, r=10.0)


@pytest.fixture(scope="session")
def torus_chart():
    return M.euclidean(2, r=0.5)


@pytest.fixture(scope="session")
def sphere():
    return M.sphere_chart(R=1.0, r=1.0)


@pytest.fixture(scope="session")
def flat41():
    return M.flat([[4.0, 0.0], [0.0, 1.0]], r=1.0)


@pytest.fixture(scope="session")
def wavy():
    return M.conformal(LAMBDA, n=2, r=0.5)
