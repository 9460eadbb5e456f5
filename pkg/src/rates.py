"""Regime classification and rate formulas for DCA and proximal gradient descent.

All functions are pure. Integer and Fraction inputs are evaluated exactly where
the formula allows it; an infinite curvature bound is math.inf and every
1/(L - mu) factor maps it to 0.
"""
import logging
import math
from enum import Enum
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import optimize

from src.engine import Trajectory, map_pgd_to_dc
from src.errors import DCRatesError, DomainError, NoRootError
from src.oracles import CurvatureBounds, Curvatures, inv
from src.utils import Number

logger = logging.getLogger(__name__)


class Regime(Enum):
    P1 = "p1"
    P2 = "p2"
    P3 = "p3"
    P4 = "p4"
    P5 = "p5"
    P6 = "p6"

    def __str__(self):
        return self.value


class RateStatus(Enum):
    TIGHT_ALL_N = "tight_all_N"
    TIGHT_N_LE_1 = "tight_N_le_1"
    PROVEN_LINEAR = "proven_linear"
    CONJECTURED = "conjectured"

    def __str__(self):
        return self.value


class FormulaId(Enum):
    SUBLINEAR = "sublinear"
    LINEAR_P4 = "linear-p4"
    LINEAR_P5 = "linear-p5"
    CONJECTURE_NONCONVEX = "conjecture-nonconvex"
    CONJECTURE_CONVEX = "conjecture-convex"
    CONJECTURE_CONCAVE = "conjecture-concave"

    def __str__(self):
        return self.value


DESCRIPTIONS = {
    Regime.P1: "f1, f2 convex; F nonconvex-nonconcave",
    Regime.P2: "f1, f2 convex; F nonconvex-nonconcave",
    Regime.P3: "f1 strongly convex, f2 nonconvex; F nonconvex-nonconcave",
    Regime.P4: "f1 strongly convex, f2 nonconvex; F convex",
    Regime.P5: "f1 strongly convex, f2 nonconvex; F nonconcave",
    Regime.P6: "f1 convex, f2 strongly convex; F concave",
}


class RegimeReport(BaseModel):
    regime: Regime
    p_value: float
    mu_sum: float
    status: RateStatus
    description: str

    def denominator(self, N: int) -> float:
        return self.mu_sum + self.p_value * N


class RateValue(BaseModel):
    bound: float
    denominator: float
    formula_id: FormulaId
    proven: bool
    regime: Optional[Regime] = None


def as_curvatures(curvatures) -> Curvatures:
    if isinstance(curvatures, Curvatures):
        return curvatures
    return Curvatures.of(*curvatures)


def threshold_mu2(mu1: Number, L2: Number) -> Number:
    """-L2 mu1 / (L2 + mu1), the mu2 value where T1 changes sign; -mu1 when L2 = inf."""
    if isinstance(L2, float) and math.isinf(L2):
        return -mu1
    return -L2 * mu1 / (L2 + mu1)


def regime_coefficient(regime: Regime, curvatures: Curvatures) -> Number:
    mu1, L1, mu2, L2 = curvatures
    if regime == Regime.P1:
        return mu1 + mu2 + (mu1 - mu2) ** 2 * inv(L2 - mu2)
    if regime == Regime.P2:
        return mu1 + mu2 + (mu2 - mu1) ** 2 * inv(L1 - mu1)
    if regime == Regime.P3:
        if isinstance(L2, float) and math.isinf(L2):
            return mu1 + mu2
        return (mu1 + mu2) * (L2 + mu1) / (L2 + mu2)
    if regime == Regime.P4:
        return mu1**2 * (L2 + mu1) / L2**2
    if regime == Regime.P5:
        return mu1**2 * (mu1 + mu2) / mu2**2
    return mu2**2 * (L1 + mu2) / L1**2


def in_regime(regime: Regime, curvatures: Curvatures) -> bool:
    mu1, L1, mu2, L2 = curvatures
    thr = threshold_mu2(mu1, L2)
    if regime == Regime.P1:
        return mu1 >= mu2 >= 0 and L2 > mu1
    if regime == Regime.P2:
        return mu2 >= mu1 >= 0 and L1 > mu2
    if regime == Regime.P3:
        return L2 > mu1 > 0 and thr <= mu2 < 0
    if regime == Regime.P4:
        return L2 <= mu1 and thr <= mu2 < L2
    if regime == Regime.P5:
        return -mu1 < mu2 <= thr
    return mu2 >= mu1 >= 0 and L1 <= mu2


def regime_status(regime: Regime, curvatures: Curvatures) -> RateStatus:
    if regime in (Regime.P1, Regime.P2, Regime.P3):
        return RateStatus.TIGHT_ALL_N
    if regime == Regime.P4:
        return RateStatus.PROVEN_LINEAR
    if regime == Regime.P5:
        mu1, _, mu2, L2 = curvatures
        if L2 + mu2 <= 0:
            return RateStatus.PROVEN_LINEAR
        return RateStatus.CONJECTURED
    # P6
    return RateStatus.CONJECTURED


def classify_regime(mu1, L1, mu2, L2) -> RegimeReport:
    """The regime of a curvature quadruple; the lowest index wins on shared boundaries."""
    curvatures = as_curvatures((mu1, L1, mu2, L2))
    mu1, L1, mu2, L2 = curvatures
    if mu1 < 0:
        raise DomainError(f"f1 must be convex, got mu1 = {mu1}")
    if mu1 + mu2 <= 0:
        raise DomainError(f"Rates need mu1 + mu2 > 0, got {mu1 + mu2}")

    for regime in Regime:
        if in_regime(regime, curvatures):
            return RegimeReport(
                regime=regime,
                p_value=float(regime_coefficient(regime, curvatures)),
                mu_sum=float(mu1 + mu2),
                status=regime_status(regime, curvatures),
                description=DESCRIPTIONS[regime],
            )
    raise DomainError(f"No regime covers {tuple(curvatures)}")


def _check_rate_args(N: int, Delta: Number) -> None:
    if N < 0:
        raise DomainError(f"Number of iterations must be nonnegative, got {N}")
    if Delta < 0:
        raise DomainError(f"Objective gap must be nonnegative, got {Delta}")


def sublinear_rate_bound(mu1, L1, mu2, L2, N: int, Delta: Number) -> RateValue:
    _check_rate_args(N, Delta)
    report = classify_regime(mu1, L1, mu2, L2)
    curvatures = as_curvatures((mu1, L1, mu2, L2))
    denominator = (curvatures.mu1 + curvatures.mu2) + regime_coefficient(
        report.regime, curvatures
    ) * N
    return RateValue(
        bound=float(Delta / denominator),
        denominator=float(denominator),
        formula_id=FormulaId.SUBLINEAR,
        proven=True,
        regime=report.regime,
    )


def e_sum(k: int, z: Number) -> Number:
    """Sum of z^-j for j = 1..2k."""
    if k < 0:
        raise DomainError(f"e_sum needs k >= 0, got {k}")
    if z == 0:
        raise DomainError("e_sum is undefined at z = 0")
    if k == 0:
        return 0
    if z == 1:
        return 2 * k
    if isinstance(z, (int, Fraction)):
        z = Fraction(z)
        return (-1 + z ** (-2 * k)) / (1 - z)
    if abs(1 - z) < 1e-3:
        return math.fsum(z ** (-j) for j in range(1, 2 * k + 1))
    return (-1 + z ** (-2 * k)) / (1 - z)


def _e_or_inf(k: int, z: Number) -> Number:
    return math.inf if z == 0 else e_sum(k, z)


def p_n(eta: Number, rho: Number, N: int) -> Number:
    if N < 0:
        raise DomainError(f"p_n needs N >= 0, got {N}")
    if isinstance(eta, float) and math.isinf(eta):
        return (1 + rho) * N
    if eta == rho or eta + rho == 0:
        raise DomainError(f"p_n is singular at eta={eta}, rho={rho}")
    total = sum(max(0, e_sum(k, eta) - e_sum(k, rho)) for k in range(N + 1))
    return (1 + eta) * (1 + rho) / (eta + rho) * (
        N + (1 - eta) * (1 - rho) / (eta - rho) * total
    )


def tight_rate_bound(mu1, L1, mu2, L2, N: int, Delta: Number) -> RateValue:
    """Linear and conjectured bounds on 1/2 min_k |x^k - x^{k+1}|^2 after N+1 steps.

    Cases, checked in order:
      * L2 + mu2 <= 0: proven, denominator mu1 + mu2 + mu1 E_N(mu2/mu1).
      * L2 <= mu1 and mu2 at or above the threshold: proven, denominator
        mu1 + mu2 + mu1 E_N(L2/mu1).
      * mu2 < 0 < mu1 < L2: conjectured, mu1 + mu2 + mu1 min{P_N, E_N(mu2/mu1)}.
      * L2 <= mu1: conjectured, mu1 + mu2 + mu1 min{E_N(L2/mu1), E_N(mu2/mu1)}.
      * 0 <= mu1 < L1 <= mu2 < L2: conjectured,
        mu1 + mu2 + mu2 min{E_N(L1/mu2), E_N(mu1/mu2)}.
    The two proven cases bound the last gap, which also bounds the minimum.
    """
    _check_rate_args(N, Delta)
    if N < 1:
        raise DomainError(f"Linear and conjectured rates need N >= 1, got {N}")
    mu1, L1, mu2, L2 = as_curvatures((mu1, L1, mu2, L2))
    if mu1 < 0 or mu1 + mu2 <= 0:
        raise DomainError(f"Rates need mu1 >= 0 and mu1 + mu2 > 0, got {mu1}, {mu2}")
    mu_sum = mu1 + mu2
    rho = mu2 / mu1 if mu1 > 0 else None
    L2_finite = not (isinstance(L2, float) and math.isinf(L2))

    if rho is not None and L2 + mu2 <= 0:
        formula, proven = FormulaId.LINEAR_P5, True
        denominator = mu_sum + mu1 * _e_or_inf(N, rho)
    elif rho is not None and L2 <= mu1 and mu2 >= threshold_mu2(mu1, L2):
        formula, proven = FormulaId.LINEAR_P4, True
        denominator = mu_sum + mu1 * e_sum(N, L2 / mu1)
    elif rho is not None and mu2 < 0 < mu1 < L2:
        formula, proven = FormulaId.CONJECTURE_NONCONVEX, False
        eta = L2 / mu1 if L2_finite else math.inf
        denominator = mu_sum + mu1 * min(p_n(eta, rho, N), _e_or_inf(N, rho))
    elif rho is not None and L2 <= mu1:
        formula, proven = FormulaId.CONJECTURE_CONVEX, False
        denominator = mu_sum + mu1 * min(e_sum(N, L2 / mu1), _e_or_inf(N, rho))
    elif 0 <= mu1 < L1 <= mu2 < L2:
        formula, proven = FormulaId.CONJECTURE_CONCAVE, False
        denominator = mu_sum + mu2 * min(e_sum(N, L1 / mu2), _e_or_inf(N, mu1 / mu2))
    else:
        raise DomainError(
            f"No linear or conjectured rate covers {(mu1, L1, mu2, L2)}; "
            "use the sublinear bound"
        )

    if not proven:
        logger.info(f"Returning conjectured bound {formula} for {(mu1, L1, mu2, L2)}")
    return RateValue(
        bound=float(Delta / denominator),
        denominator=float(denominator),
        formula_id=formula,
        proven=proven,
    )


def applicable_bounds(curvatures, N: int, Delta: Number) -> List[RateValue]:
    """Every rate bound that applies at (curvatures, N): sublinear first."""
    c = as_curvatures(curvatures)
    rates = [sublinear_rate_bound(*c, N, Delta)]
    if N >= 1:
        try:
            rates.append(tight_rate_bound(*c, N, Delta))
        except DomainError:
            pass
    return rates


def best_rate_bound(curvatures, N: int, Delta: Number) -> RateValue:
    """The smallest applicable bound; a proven one wins ties."""
    rates = applicable_bounds(curvatures, N, Delta)
    return max(rates, key=lambda r: (r.denominator, r.proven))


def t1_value(mu1: Number, mu2: Number, L2: Number) -> Number:
    if mu2 >= 0:
        raise DomainError(f"T1 needs mu2 < 0, got {mu2}")
    tail = (mu1 + mu2) / mu2**2
    if isinstance(L2, float) and math.isinf(L2):
        return -mu1 * tail
    return mu1 * ((L2 + mu1) / L2**2 - tail)


def t1_sign(mu1: Number, mu2: Number, L2: Number) -> int:
    """Sign of T1, computed from the factored form so the threshold maps to 0.

    For mu1 > 0, sign(T1) = -sign(L2 mu1 + L2 mu2 + mu1 mu2).
    """
    if mu2 >= 0:
        raise DomainError(f"T1 needs mu2 < 0, got {mu2}")
    if mu1 == 0:
        return 0
    if isinstance(L2, float) and math.isinf(L2):
        return -1 if mu1 + mu2 > 0 else (0 if mu1 + mu2 == 0 else 1)
    q = L2 * mu1 + L2 * mu2 + mu1 * mu2
    if isinstance(q, float):
        scale = max(abs(L2 * mu1), abs(L2 * mu2), abs(mu1 * mu2))
        if abs(q) <= 1e-12 * scale:
            return 0
    return -1 if q > 0 else (1 if q < 0 else 0)


def _threshold_polynomial(t: float, L_phi: float, mu_phi: float, mu_h: float) -> float:
    mu1, mu2, L2 = t + mu_h, t - L_phi, t - mu_phi
    return mu2 * (L2 + mu1) + L2 * mu1


def pgd_threshold_stepsize(L_phi: float, mu_phi: float, mu_h: float = 0.0) -> float:
    """Stepsize where mu2 = -L2 mu1/(L2 + mu1) under the PGD-to-DCA mapping.

    The condition is a convex quadratic q(t) in t = 1/gamma; it is negative
    at the lower end of the admissible range and positive at t = L_phi, so
    bisection returns its unique root there.
    """
    L_phi, mu_phi, mu_h = float(L_phi), float(mu_phi), float(mu_h)
    if L_phi <= 0 or not mu_phi < L_phi or mu_h < 0:
        raise DomainError(
            f"Need L_phi > 0, mu_phi < L_phi and mu_h >= 0, got {(L_phi, mu_phi, mu_h)}"
        )
    lo, hi = max((L_phi - mu_h) / 2, 0.0), L_phi
    args = (L_phi, mu_phi, mu_h)
    q_lo, q_hi = _threshold_polynomial(lo, *args), _threshold_polynomial(hi, *args)
    if q_lo * q_hi > 0:
        raise NoRootError(f"No threshold stepsize for {(L_phi, mu_phi, mu_h)}")
    t = optimize.bisect(_threshold_polynomial, lo, hi, args=args, xtol=1e-15)
    return 1 / t


class StepsizeInterval(BaseModel):
    lo: float
    hi: float
    regime: Optional[Regime] = None


def pgd_stepsize_regimes(
    L_phi: float, mu_phi: float, mu_h: float = 0.0, L_h: float = math.inf
) -> List[StepsizeInterval]:
    """Regimes active along the admissible stepsize range of a PGD splitting."""
    phi_bounds, h_bounds = CurvatureBounds(mu_phi, L_phi), CurvatureBounds(mu_h, L_h)
    upper = math.inf if L_phi - mu_h <= 0 else 2 / (L_phi - mu_h)
    cuts = [1 / L_phi]
    try:
        cuts.append(pgd_threshold_stepsize(L_phi, mu_phi, mu_h))
    except NoRootError:
        pass
    edges = [0.0] + sorted(c for c in set(cuts) if 0 < c < upper) + [upper]

    intervals = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = (lo + hi) / 2 if math.isfinite(hi) else 2 * lo + 1
        curvatures = map_pgd_to_dc(phi_bounds, h_bounds, mid)
        try:
            regime = classify_regime(*curvatures).regime
        except DomainError:
            regime = None
        intervals.append(StepsizeInterval(lo=lo, hi=hi, regime=regime))
    return intervals


def pgd_rate_bound(
    L_phi: float,
    mu_phi: float,
    mu_h: float,
    L_h: float,
    gamma: float,
    N: int,
    Delta: float,
) -> Tuple[Curvatures, RateValue]:
    curvatures = map_pgd_to_dc(
        CurvatureBounds(mu_phi, L_phi), CurvatureBounds(mu_h, L_h), gamma
    )
    return curvatures, best_rate_bound(curvatures, N, Delta)


def trajectory_bound_gaps(traj: Trajectory) -> List[Optional[float]]:
    """Per-row distance to the best rate bound, for the CSV trajectory table.

    Row k compares 1/2 min_{j<=k} |dx_j|^2 with the bound for k steps on the
    gap F(x^0) - F(x^{k+1}); rows without an applicable bound stay empty.
    """
    curvatures = traj.curvatures
    if curvatures is None or traj.meta.shifts is not None:
        return []
    sq = np.sum(traj.dx**2, axis=1)
    gaps: List[Optional[float]] = []
    for k in range(len(sq)):
        delta = max(float(traj.fvals[0] - traj.fvals[k + 1]), 0.0)
        try:
            rate = best_rate_bound(curvatures, k, delta)
        except DCRatesError:
            gaps.append(None)
            continue
        gaps.append(rate.bound - 0.5 * float(np.min(sq[: k + 1])))
    return gaps
