"""Closed-form starting instances built from the equality cases of the descent lemmas.

Each builder returns an instance whose DCA iterates make every inequality of
the matching certificate tight: one component is the extreme quadratic and
the other alternates between its extreme curvatures so that the steps have
equal length. Most of them live on the line; the p3 case needs a second
coordinate. They seed the search before any random trial.
"""
import logging
import math
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.engine import DCInstance
from src.errors import DCRatesError
from src.oracles import (
    CurvatureBounds,
    Curvatures,
    FunctionOracle,
    PiecewiseQuadratic1D,
    QuadraticOracle,
    SeparableOracle,
    SubgradientPolicy,
)
from src.rates import Regime, in_regime, threshold_mu2
from src.worstcase.families import (
    PW_QUADRATIC_1D,
    PW_QUADRATIC_2D,
    QUADRATIC_1D,
    QUADRATIC_2D,
    Candidate,
    quadratic_piece,
)

logger = logging.getLogger(__name__)


def _pw(
    bounds: CurvatureBounds,
    breakpoints: Sequence[float],
    curvatures: Sequence[float],
    slope0: float,
    jumps: Optional[Sequence[float]] = None,
) -> PiecewiseQuadratic1D:
    """Profile with zero-width pieces dropped and equal neighbours merged."""
    jumps = list(jumps) if jumps is not None else [0.0] * len(breakpoints)
    kept_t, kept_a, kept_j = [], [curvatures[0]], []
    for t, a, jump in zip(breakpoints, curvatures[1:], jumps):
        if kept_t and t - kept_t[-1] <= 1e-12 * max(1.0, abs(t)):
            # The previous piece has no width: the new one replaces it
            kept_a[-1] = a
            kept_j[-1] += jump
            continue
        if a == kept_a[-1] and jump == 0:
            continue
        kept_t.append(t)
        kept_a.append(a)
        kept_j.append(jump)
    return PiecewiseQuadratic1D.from_profile(kept_t, kept_a, kept_j, slope0, 0.0, bounds)


def extreme_quadratics(c: Curvatures, N: int) -> List[Tuple[str, DCInstance, float]]:
    """f1 = mu1|x|^2/2 against f2 at either end of its class.

    At mu2 the iterates contract by mu2/mu1 every step, which is the equality
    case of the p5 lemmas.
    """
    b1, b2 = _float_bounds(c)
    out = []
    for name, a2 in (("quadratic-mu2", b2.mu), ("quadratic-L2", b2.L)):
        if not math.isfinite(a2):
            continue
        f1, f2 = quadratic_piece(b1, b1.mu), quadratic_piece(b2, a2)
        out.append((name, DCInstance(f1, f2), 1.0))
    return out


def _float_bounds(c: Curvatures) -> Tuple[CurvatureBounds, CurvatureBounds]:
    mu1, L1, mu2, L2 = (float(v) for v in c)
    return CurvatureBounds(mu1, L1), CurvatureBounds(mu2, L2)


def p1_witness(c: Curvatures, N: int) -> DCInstance:
    """f2 ramps from slope mu1 (j-1) to mu1 j over every [j, j+1], iterates step down by 1."""
    b1, b2 = _float_bounds(c)
    mu1, mu2, L2 = b1.mu, b2.mu, b2.L
    if b2.smooth:
        s = (mu1 - mu2) / (L2 - mu2)
        breakpoints, curvatures = [], [mu2]
        for j in range(1, N + 1):
            breakpoints += [float(j), j + s]
            curvatures += [L2, mu2]
        f2 = _pw(b2, breakpoints, curvatures, -mu2)
    else:
        breakpoints = [float(j) for j in range(1, N + 1)]
        f2 = _pw(b2, breakpoints, [mu2] * (N + 1), -mu2, [mu1 - mu2] * N)
    return DCInstance(quadratic_piece(b1, mu1), f2)


def p2_witness(c: Curvatures, N: int) -> DCInstance:
    """Mirror of p1_witness: f1 carries the ramps and maps mu2 (j+1) back to j."""
    b1, b2 = _float_bounds(c)
    mu1, L1, mu2 = b1.mu, b1.L, b2.mu
    if b1.smooth:
        s = (mu2 - mu1) / (L1 - mu1)
        breakpoints, curvatures = [], [mu1]
        for j in range(1, N + 1):
            breakpoints += [j - s, float(j)]
            curvatures += [L1, mu1]
        f1 = _pw(b1, breakpoints, curvatures, mu2)
    else:
        breakpoints = [float(j) for j in range(1, N + 1)]
        f1 = _pw(b1, breakpoints, [mu1] * (N + 1), mu2, [mu2 - mu1] * N)
    return DCInstance(f1, quadratic_piece(b2, mu2))


def p3_start(c: Curvatures) -> np.ndarray:
    """Start of p3_witness: the first step crosses the kink of f2 at u = 1.

    Both coordinates of the second step contract by mu2/mu1; the second
    coordinate is sized so that the two steps have the same length.
    """
    mu1, _, mu2, L2 = (float(v) for v in c)
    s, rho = mu1 / L2, mu2 / mu1
    return np.array([(mu1 + L2 - mu2) / L2, math.sqrt((1 - s * s) / (1 - rho * rho))])


def p3_witness(c: Curvatures, N: int) -> DCInstance:
    """f1 = mu1|x|^2/2; f2 has curvature L2 beyond u = 1 and mu2 everywhere else."""
    b1, b2 = _float_bounds(c)
    if not b2.smooth:
        raise DCRatesError("The p3 witness needs a finite L2")
    f1 = SeparableOracle([quadratic_piece(b1, b1.mu), quadratic_piece(b1, b1.mu)], b1)
    profile = _pw(b2, [1.0], [b2.mu, b2.L], 0.0)
    f2 = SeparableOracle([profile, quadratic_piece(b2, b2.mu)], b2)
    return DCInstance(f1, f2)


def p4_witness(c: Curvatures, N: int) -> DCInstance:
    """f2 has curvature L2 down to eta^N and mu2 below it, with eta = L2/mu1."""
    b1, b2 = _float_bounds(c)
    mu1, mu2, L2 = b1.mu, b2.mu, b2.L
    t = (L2 / mu1) ** max(N, 1)
    f2 = _pw(b2, [t], [mu2, L2], (L2 - mu2) * t)
    return DCInstance(quadratic_piece(b1, mu1), f2)


def p6_witness(c: Curvatures, N: int) -> DCInstance:
    """f1 has curvature L1 left of 0 and mu1 right of it, both with slope mu2 at 0."""
    b1, b2 = _float_bounds(c)
    f1 = _pw(b1, [0.0], [b1.L, b1.mu], b2.mu)
    return DCInstance(f1, quadratic_piece(b2, b2.mu))


Builder = Callable[[Curvatures, int], DCInstance]


class Structured(NamedTuple):
    name: str
    builder: Builder
    x0: np.ndarray
    policy: SubgradientPolicy
    pieces: int


def _structured(c: Curvatures, N: int) -> List[Structured]:
    """The witnesses that apply at c, with the number of pieces each profile uses."""
    mu1, L1, mu2, L2 = (float(v) for v in c)
    start = np.array([N + 1.0])
    out: List[Structured] = []
    if in_regime(Regime.P1, c) and mu1 > 0:
        out.append(Structured("p1", p1_witness, start, SubgradientPolicy.LEFT, 2 * N + 1))
    if in_regime(Regime.P2, c) and mu2 > 0:
        out.append(Structured("p2", p2_witness, start, SubgradientPolicy.RIGHT, 2 * N + 1))
    if in_regime(Regime.P3, c) and math.isfinite(L2):
        out.append(Structured("p3", p3_witness, p3_start(c), SubgradientPolicy.CANONICAL, 2))
    if mu1 > 0 and math.isfinite(L2) and 0 < L2 <= mu1 and mu2 >= threshold_mu2(mu1, L2):
        out.append(Structured("p4", p4_witness, np.ones(1), SubgradientPolicy.CANONICAL, 2))
    if in_regime(Regime.P6, c) and math.isfinite(L1) and L1 > 0:
        out.append(Structured("p6", p6_witness, np.ones(1), SubgradientPolicy.CANONICAL, 2))
    return out


def witness_pieces(curvatures: Curvatures, N: int) -> int:
    """Pieces per profile needed by the largest witness that applies."""
    return max((w.pieces for w in _structured(curvatures, N)), default=1)


def _embed_2d(inst: DCInstance) -> DCInstance:
    def lift(f: FunctionOracle) -> QuadraticOracle:
        a = float(f.pieces[0][0])
        return QuadraticOracle(np.diag([a, a]), bounds=f.bounds)

    return DCInstance(lift(inst.f1), lift(inst.f2))


def _embed_separable(inst: DCInstance) -> DCInstance:
    """Line instance as the first coordinate of a plane instance; the second stays at 0."""

    def lift(f: FunctionOracle) -> SeparableOracle:
        return SeparableOracle([f, quadratic_piece(f.bounds, float(f.bounds.mu))], f.bounds)

    return DCInstance(lift(inst.f1), lift(inst.f2))


def structured_witnesses(
    curvatures: Curvatures, N: int, family: str, max_pieces: int = 3
) -> List[Candidate]:
    """Closed-form candidates admissible in a family, extreme quadratics first."""
    out: List[Candidate] = []
    try:
        quadratics = extreme_quadratics(curvatures, N)
    except DCRatesError as e:
        logger.debug(f"No extreme quadratics at {tuple(curvatures)}: {e}")
        quadratics = []
    for name, inst, x0 in quadratics:
        if family == QUADRATIC_1D:
            f1 = QuadraticOracle([[inst.f1.pieces[0][0]]], bounds=inst.f1.bounds)
            f2 = QuadraticOracle([[inst.f2.pieces[0][0]]], bounds=inst.f2.bounds)
            out.append(Candidate(DCInstance(f1, f2), np.array([x0]), source=name))
        elif family == QUADRATIC_2D:
            out.append(Candidate(_embed_2d(inst), np.array([x0, 0.0]), source=name))
        elif family == PW_QUADRATIC_1D:
            out.append(Candidate(inst, np.array([x0]), source=name))
        elif family == PW_QUADRATIC_2D:
            out.append(Candidate(_embed_separable(inst), np.array([x0, 0.0]), source=name))

    if family not in (PW_QUADRATIC_1D, PW_QUADRATIC_2D):
        return out
    dim = 1 if family == PW_QUADRATIC_1D else 2
    for w in _structured(curvatures, N):
        if w.pieces > max_pieces:
            logger.debug(f"Witness {w.name} needs {w.pieces} pieces, family allows {max_pieces}")
            continue
        if len(w.x0) > dim:
            logger.debug(f"Witness {w.name} needs {len(w.x0)} coordinates, {family} has {dim}")
            continue
        try:
            inst = w.builder(curvatures, N)
        except DCRatesError as e:
            logger.debug(f"Witness {w.name} is not buildable at {tuple(curvatures)}: {e}")
            continue
        x0 = w.x0
        if len(x0) < dim:
            inst, x0 = _embed_separable(inst), np.append(x0, 0.0)
        out.append(Candidate(inst, x0, w.policy, source=w.name))
    return out
