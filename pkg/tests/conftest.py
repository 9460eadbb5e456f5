from fractions import Fraction
from typing import Callable, Dict

import numpy as np
import pytest

from src.oracles import Curvatures
from src.rates import threshold_mu2


def sample_p1(rng: np.random.Generator) -> Curvatures:
    mu1 = rng.uniform(0.1, 2.0)
    mu2 = rng.uniform(0.0, mu1)
    return Curvatures(mu1, mu1 + rng.uniform(0.1, 3.0), mu2, mu1 + rng.uniform(0.1, 3.0))


def sample_p2(rng: np.random.Generator) -> Curvatures:
    mu2 = rng.uniform(0.1, 2.0)
    mu1 = rng.uniform(0.0, mu2)
    return Curvatures(mu1, mu2 + rng.uniform(0.1, 3.0), mu2, mu2 + rng.uniform(0.1, 3.0))


def sample_p3(rng: np.random.Generator) -> Curvatures:
    mu1 = rng.uniform(0.1, 2.0)
    L2 = mu1 + rng.uniform(0.1, 3.0)
    thr = threshold_mu2(mu1, L2)
    mu2 = thr * rng.uniform(0.001, 1.0)
    return Curvatures(mu1, mu1 + rng.uniform(0.1, 3.0), mu2, L2)


def sample_p4(rng: np.random.Generator) -> Curvatures:
    mu1 = rng.uniform(0.1, 2.0)
    L2 = mu1 * rng.uniform(0.1, 1.0)
    thr = threshold_mu2(mu1, L2)
    mu2 = thr + (L2 - thr) * rng.uniform(0.0, 0.999)
    return Curvatures(mu1, mu1 + rng.uniform(0.1, 3.0), mu2, L2)


def sample_p5(rng: np.random.Generator) -> Curvatures:
    mu1 = rng.uniform(0.1, 2.0)
    L2 = rng.uniform(0.05, 4.0)
    thr = threshold_mu2(mu1, L2)
    mu2 = -mu1 + (thr + mu1) * rng.uniform(0.001, 1.0)
    return Curvatures(mu1, mu1 + rng.uniform(0.1, 3.0), mu2, L2)


def sample_p5_linear(rng: np.random.Generator) -> Curvatures:
    """P5 points with L2 + mu2 <= 0."""
    mu1 = rng.uniform(0.1, 2.0)
    mu2 = -mu1 * rng.uniform(0.05, 0.999)
    L2 = mu2 - 2 * mu2 * rng.uniform(0.001, 1.0)
    return Curvatures(mu1, mu1 + rng.uniform(0.1, 3.0), mu2, L2)


def sample_p6(rng: np.random.Generator) -> Curvatures:
    mu2 = rng.uniform(0.5, 3.0)
    L1 = mu2 * rng.uniform(0.2, 1.0)
    mu1 = L1 * rng.uniform(0.0, 0.9)
    return Curvatures(mu1, L1, mu2, mu2 + rng.uniform(0.1, 3.0))


SAMPLERS: Dict[str, Callable[[np.random.Generator], Curvatures]] = {
    "p1": sample_p1,
    "p2": sample_p2,
    "p3": sample_p3,
    "p4": sample_p4,
    "p5": sample_p5,
    "p6": sample_p6,
}

# Rational points inside each regime, shared by the exact-arithmetic tests
EXACT_POINTS = {
    "p1": Curvatures.of(1, 2, Fraction(1, 2), 3),
    "p2": Curvatures.of(Fraction(1, 2), 3, 1, 2),
    "p3": Curvatures.of(1, 2, Fraction(-1, 2), 3),
    "p4": Curvatures.of(1, 2, Fraction(-2, 5), Fraction(9, 10)),
    "p5": Curvatures.of(1, 2, Fraction(-4, 5), 3),
    "p6": Curvatures.of(Fraction(1, 2), 1, 2, 3),
}


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240607)


@pytest.fixture
def samplers():
    return SAMPLERS


def interpolation_tol(traj) -> float:
    """Absolute slack tolerance scaled to the size of a trajectory."""
    scale = 1.0 + np.max(np.abs(traj.fvals)) + np.max(traj.points**2)
    scale += max(np.max(traj.g1**2), np.max(traj.g2**2))
    return 1e-9 * float(scale)
