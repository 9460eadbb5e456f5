"""Instance families for the worst-case search.

A family turns an unconstrained parameter vector into a valid DC instance and
a starting point: curvatures are clipped into their class, breakpoint gaps
are made positive and derivative jumps only appear when the class is
nonsmooth. Every vector therefore decodes to something the runners accept.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.engine import DCInstance
from src.oracles import (
    CurvatureBounds,
    Curvatures,
    FunctionOracle,
    PiecewiseQuadratic1D,
    QuadraticOracle,
    SeparableOracle,
    SubgradientPolicy,
)

QUADRATIC_1D = "quadratic-1d"
PW_QUADRATIC_1D = "pw-quadratic-1d"
QUADRATIC_2D = "quadratic-2d"
PW_QUADRATIC_2D = "pw-quadratic-2d"
FAMILIES = (QUADRATIC_1D, PW_QUADRATIC_1D, QUADRATIC_2D, PW_QUADRATIC_2D)
# Searched when no family is named: it holds every structured witness
DEFAULT_FAMILY = PW_QUADRATIC_2D

# Smallest gap between consecutive breakpoints of a decoded profile
MIN_GAP = 1e-3


@dataclass(frozen=True)
class Candidate:
    instance: DCInstance
    x0: np.ndarray
    policy: SubgradientPolicy = SubgradientPolicy.CANONICAL
    params: Optional[np.ndarray] = None
    source: str = "random"


def _bounds(curvatures: Curvatures) -> Tuple[CurvatureBounds, CurvatureBounds]:
    mu1, L1, mu2, L2 = (float(v) for v in curvatures)
    return CurvatureBounds(mu1, L1), CurvatureBounds(mu2, L2)


def clip_curvature(p: float, bounds: CurvatureBounds) -> float:
    mu = float(bounds.mu)
    if bounds.smooth:
        return mu + (float(bounds.L) - mu) * float(np.clip(p, 0.0, 1.0))
    return mu + max(float(p), 0.0) * (1.0 + abs(mu))


def _profile_slots(m: int) -> List[str]:
    if m < 1:
        raise ValueError(f"Need at least one piece, got {m}")
    slots = ["pos"] * min(m - 1, 1) + ["gap"] * max(m - 2, 0)
    return slots + ["curv"] * m + ["jump"] * (m - 1) + ["slope"]


def quadratic_piece(bounds: CurvatureBounds, a: float) -> PiecewiseQuadratic1D:
    """a x^2 / 2 on the line, declared in the class ``bounds``."""
    return PiecewiseQuadratic1D([], [(a, 0.0, 0.0)], bounds)


def layout(family: str, max_pieces: int = 3) -> List[str]:
    """Kind of every slot of the parameter vector of a family."""
    if family == QUADRATIC_1D:
        return ["curv", "curv", "x0"]
    elif family == PW_QUADRATIC_1D:
        return _profile_slots(max_pieces) * 2 + ["x0"]
    elif family == QUADRATIC_2D:
        return ["angle", "curv", "curv"] * 2 + ["x0", "x0"]
    elif family == PW_QUADRATIC_2D:
        # A profile in the first coordinate plus a quadratic in the second
        return (_profile_slots(max_pieces) + ["curv"]) * 2 + ["x0", "x0"]
    else:
        raise ValueError("Invalid family name")


def sample_params(family: str, rng: np.random.Generator, max_pieces: int = 3) -> np.ndarray:
    """Draw a parameter vector for a family.

    Curvature slots often land outside [0, 1], which clipping maps onto an
    extreme of the class.
    """
    draws = {
        "curv": lambda: rng.uniform(-0.25, 1.25),
        "pos": lambda: rng.normal(0.0, 2.0),
        "gap": lambda: rng.exponential(1.0),
        "jump": lambda: rng.exponential(1.0),
        "slope": lambda: rng.normal(0.0, 2.0),
        "x0": lambda: rng.normal(0.0, 2.0),
        "angle": lambda: rng.uniform(0.0, math.pi),
    }
    return np.array([draws[kind]() for kind in layout(family, max_pieces)])


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _quadratic_2d(theta: float, p1: float, p2: float, bounds: CurvatureBounds) -> QuadraticOracle:
    R = _rotation(theta)
    eigenvalues = [clip_curvature(p1, bounds), clip_curvature(p2, bounds)]
    return QuadraticOracle(R @ np.diag(eigenvalues) @ R.T, bounds=bounds)


def _profile(params: np.ndarray, m: int, bounds: CurvatureBounds) -> PiecewiseQuadratic1D:
    i = 0
    breakpoints = []
    for _ in range(m - 1):
        if not breakpoints:
            breakpoints.append(float(params[i]))
        else:
            breakpoints.append(breakpoints[-1] + abs(float(params[i])) + MIN_GAP)
        i += 1
    curvatures = [clip_curvature(p, bounds) for p in params[i : i + m]]
    i += m
    if bounds.smooth:
        jumps = [0.0] * (m - 1)
    else:
        jumps = [abs(float(p)) for p in params[i : i + m - 1]]
    i += m - 1
    slope0 = float(params[i])
    return PiecewiseQuadratic1D.from_profile(
        breakpoints, curvatures, jumps, slope0, 0.0, bounds
    )


def _separable(params: np.ndarray, m: int, bounds: CurvatureBounds) -> SeparableOracle:
    profile = _profile(params[:-1], m, bounds)
    second = quadratic_piece(bounds, clip_curvature(params[-1], bounds))
    return SeparableOracle([profile, second], bounds)


def decode(
    family: str,
    params,
    curvatures: Curvatures,
    policy: SubgradientPolicy = SubgradientPolicy.CANONICAL,
    max_pieces: int = 3,
) -> Candidate:
    params = np.asarray(params, dtype=float).reshape(-1)
    kinds = layout(family, max_pieces)
    if len(params) != len(kinds):
        raise ValueError(f"{family} takes {len(kinds)} parameters, got {len(params)}")
    b1, b2 = _bounds(curvatures)

    f1: FunctionOracle
    f2: FunctionOracle
    if family == QUADRATIC_1D:
        f1 = QuadraticOracle([[clip_curvature(params[0], b1)]], bounds=b1)
        f2 = QuadraticOracle([[clip_curvature(params[1], b2)]], bounds=b2)
        x0 = params[2:3]
    elif family == PW_QUADRATIC_1D:
        size = 3 * max_pieces - 1
        f1 = _profile(params[:size], max_pieces, b1)
        f2 = _profile(params[size : 2 * size], max_pieces, b2)
        x0 = params[-1:]
    elif family == QUADRATIC_2D:
        f1 = _quadratic_2d(*params[0:3], b1)
        f2 = _quadratic_2d(*params[3:6], b2)
        x0 = params[6:8]
    else:
        size = 3 * max_pieces
        f1 = _separable(params[:size], max_pieces, b1)
        f2 = _separable(params[size : 2 * size], max_pieces, b2)
        x0 = params[-2:]
    return Candidate(DCInstance(f1, f2), np.array(x0), policy, params, "random")
