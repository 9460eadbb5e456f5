"""Descent-lemma certificates as quadratic forms over the trajectory symbols.

Every inequality is stored as ``affine >= gram``: the affine part weighs the
objective decreases (dF_k, dF_{k+1}) and the gram part is a symmetric matrix
over the five vector symbols (dx_k, dx_{k+1}, G_k, G_{k+1}, G_{k+2}), entry
(i, j) being the coefficient of <s_i, s_j>. Vectors never get a dimension,
so a certificate is a finite check on a 5x5 matrix.

Rational curvatures are handled with numpy object arrays of Fractions and
checked with zero tolerance; float curvatures use float64 with relative
tolerances.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import linalg

from src.engine import Trajectory
from src.errors import DCRatesError, DecompositionError, DomainError, WeightError
from src.oracles import Curvatures, coerce, inv
from src.rates import Regime, as_curvatures, e_sum, regime_coefficient
from src.utils import Number

logger = logging.getLogger(__name__)

# Float-mode tolerances, relative to max(1, max |residual entry|)
COEFFICIENT_TOL = 1e-12
LEFTOVER_TOL = 1e-10


class Symbol(Enum):
    DX0 = "dx_k"
    DX1 = "dx_k+1"
    G0 = "G_k"
    G1 = "G_k+1"
    G2 = "G_k+2"

    def __str__(self):
        return self.value

    @property
    def index(self) -> int:
        return list(Symbol).index(self)


SYMBOLS = tuple(str(s) for s in Symbol)
SCALARS = ("dF_k", "dF_k+1")

# Per-step basis of the interpolation inequalities: dx = x^j - x^{j+1},
# g1^j, g2^j (= g1^{j+1} on a DCA step) and g2^{j+1}; scalars are the f1 and
# f2 decreases over the step.
RAW_SYMBOLS = ("dx", "g1_j", "g2_j", "g2_j+1")
RAW_SCALARS = ("df1", "df2")


class LemmaId(Enum):
    P1 = "p1"
    P2 = "p2"
    P3 = "p3"
    P4 = "p4"
    P5 = "p5"
    P6 = "p6"
    LINEAR_P4 = "linear-p4"
    LINEAR_P5 = "linear-p5"

    def __str__(self):
        return self.value

    @property
    def regime(self) -> Regime:
        return Regime(self.value.replace("linear-", ""))


class Primitive(Enum):
    """The four interpolation inequalities between x^j and x^{j+1}.

    F1_FORWARD bounds f1(x^j) from below around x^{j+1}, F1_BACKWARD bounds
    f1(x^{j+1}) around x^j; the F2 pair does the same for f2.
    """

    F1_FORWARD = "f1-forward"
    F1_BACKWARD = "f1-backward"
    F2_FORWARD = "f2-forward"
    F2_BACKWARD = "f2-backward"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class QuadraticInequality:
    gram: np.ndarray
    affine: np.ndarray
    label: str = ""
    symbols: Tuple[str, ...] = SYMBOLS

    def __add__(self, other: "QuadraticInequality") -> "QuadraticInequality":
        if self.symbols != other.symbols:
            raise ValueError("Cannot add inequalities over different symbols")
        return QuadraticInequality(
            self.gram + other.gram,
            self.affine + other.affine,
            f"{self.label} + {other.label}",
            self.symbols,
        )

    def scaled(self, weight: Number) -> "QuadraticInequality":
        return QuadraticInequality(
            self.gram * weight, self.affine * weight, f"{weight}*({self.label})", self.symbols
        )

    @property
    def exact(self) -> bool:
        return self.gram.dtype == object

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "symbols": list(self.symbols),
            "gram": _floats(self.gram).tolist(),
            "affine": _floats(self.affine).tolist(),
        }


class SquareTerm(BaseModel):
    label: str
    coefficient: float
    exact_coefficient: Optional[str] = None
    vector: List[float]


class SquareDecomposition(BaseModel):
    lemma: str
    k: int = 0
    orientation: str
    beta1: float
    beta2: float
    claim: Tuple[float, float]
    terms: List[SquareTerm]
    leftover: List[List[float]]
    leftover_norm: float
    listed_basis_exact: bool = True
    exact: bool = False

    def coefficient(self, label: str) -> float:
        for term in self.terms:
            if term.label == label:
                return term.coefficient
        raise KeyError(label)


@dataclass(frozen=True)
class SquareSpec:
    u: Symbol
    v: Symbol
    t: Number
    t_name: str

    @property
    def label(self) -> str:
        return square_label(self.u, self.t_name, self.v)


@dataclass(frozen=True)
class LemmaPlan:
    lemma: LemmaId
    base_shift: int
    beta1: Number
    beta2: Number
    claim: Tuple[Number, Number]
    squares: List[SquareSpec] = field(default_factory=list)
    k: int = 0

    @property
    def orientation(self) -> str:
        return "A" if self.base_shift == 0 else "B"


def square_label(u: Symbol, t_name: str, v: Symbol) -> str:
    return f"{u}-{t_name}*{v}"


def _zeros(shape, exact: bool) -> np.ndarray:
    if exact:
        return np.full(shape, Fraction(0), dtype=object)
    return np.zeros(shape, dtype=float)


def _vector(values: Sequence[Number], exact: bool) -> np.ndarray:
    return np.array([coerce(v, exact) for v in values], dtype=object if exact else float)


def _square(coefficients: Sequence[Number], exact: bool) -> np.ndarray:
    v = _vector(coefficients, exact)
    return np.outer(v, v)


def _inner(n: int, i: int, j: int, exact: bool) -> np.ndarray:
    m = _zeros((n, n), exact)
    half = coerce(1, exact) / 2
    m[i, j] += half
    m[j, i] += half
    return m


def _floats(a: np.ndarray) -> np.ndarray:
    return np.array(a, dtype=float)


def _max_abs(a: np.ndarray) -> Number:
    return max((abs(v) for v in a.flat), default=0)


def _half_gap_inv(L: Number, mu: Number, exact: bool) -> Number:
    return coerce(inv(L - mu), exact) / 2


def primitive_inequalities(
    curvatures, mixed_squares: bool = True
) -> Dict[Primitive, QuadraticInequality]:
    """The per-step interpolation inequalities over RAW_SYMBOLS.

    Without ``mixed_squares`` the 1/(2(L - mu)) terms are dropped, which is
    the interpolation inequality of the nonsmooth class.
    """
    c = as_curvatures(curvatures)
    exact = c.exact
    mu1, mu2 = coerce(c.mu1, exact), coerce(c.mu2, exact)
    c1 = _half_gap_inv(c.L1, c.mu1, exact) if mixed_squares else coerce(0, exact)
    c2 = _half_gap_inv(c.L2, c.mu2, exact) if mixed_squares else coerce(0, exact)
    dx, a1, a2, b2 = range(4)

    f1_terms = mu1 / 2 * _square([1, 0, 0, 0], exact) + c1 * _square(
        [-mu1, 1, -1, 0], exact
    )
    f2_terms = mu2 / 2 * _square([1, 0, 0, 0], exact) + c2 * _square(
        [-mu2, 0, 1, -1], exact
    )

    def make(name: Primitive, affine, gram) -> QuadraticInequality:
        return QuadraticInequality(gram, _vector(affine, exact), str(name), RAW_SYMBOLS)

    return {
        Primitive.F1_FORWARD: make(
            Primitive.F1_FORWARD, [1, 0], _inner(4, a2, dx, exact) + f1_terms
        ),
        Primitive.F1_BACKWARD: make(
            Primitive.F1_BACKWARD, [-1, 0], -_inner(4, a1, dx, exact) + f1_terms
        ),
        Primitive.F2_FORWARD: make(
            Primitive.F2_FORWARD, [0, 1], _inner(4, b2, dx, exact) + f2_terms
        ),
        Primitive.F2_BACKWARD: make(
            Primitive.F2_BACKWARD, [0, -1], -_inner(4, a2, dx, exact) + f2_terms
        ),
    }


def reduce_primitive(ineq: QuadraticInequality) -> Tuple[np.ndarray, Number]:
    """Rewrite a sum of primitives over (dx, G_j, G_{j+1}) and dF_j.

    Returns the 3x3 gram and the coefficient of dF_j. Raises DCRatesError when
    the sum depends on the subgradients other than through G_j = g1_j - g2_j
    and G_{j+1} = g2_j - g2_{j+1}, or on df1 and df2 other than through
    dF_j = df1 - df2.
    """
    if ineq.symbols != RAW_SYMBOLS:
        raise ValueError("Only per-step inequalities can be reduced")
    exact = ineq.exact
    S = _matrix([[1, 0, 0, 0], [0, 1, -1, 0], [0, 0, 1, -1]], exact)
    P = _matrix([[1, 0, 0], [0, 1, 1], [0, 0, 1], [0, 0, 0]], exact)
    reduced = P.T @ ineq.gram @ P

    scale = max(1, _max_abs(ineq.gram))
    tol = 0 if exact else COEFFICIENT_TOL * scale
    if _max_abs(S.T @ reduced @ S - ineq.gram) > tol:
        raise DCRatesError(f"'{ineq.label}' is not a form in (dx, G_j, G_j+1)")
    df1, df2 = ineq.affine
    if abs(df1 + df2) > tol:
        raise DCRatesError(f"'{ineq.label}' is not a multiple of dF_j")
    return reduced, df1


def _matrix(rows, exact: bool) -> np.ndarray:
    return np.array(
        [[coerce(v, exact) for v in row] for row in rows], dtype=object if exact else float
    )


def _lift(
    reduced: np.ndarray, affine_coefficient: Number, shift: int, label: str, exact: bool
) -> QuadraticInequality:
    if shift not in (0, 1):
        raise ValueError(f"Shift must be 0 or 1, got {shift}")
    idx = [0, 2, 3] if shift == 0 else [1, 3, 4]
    gram = _zeros((5, 5), exact)
    gram[np.ix_(idx, idx)] = reduced
    affine = _zeros(2, exact)
    affine[shift] = affine_coefficient
    return QuadraticInequality(gram, affine, label)


def _build(
    curvatures, shift: int, parts: Tuple[Primitive, Primitive], name: str, mixed: bool = True
) -> QuadraticInequality:
    c = as_curvatures(curvatures)
    primitives = primitive_inequalities(c, mixed)
    reduced, coefficient = reduce_primitive(primitives[parts[0]] + primitives[parts[1]])
    return _lift(reduced, coefficient, shift, f"{name}^{{k+{shift}}}", c.exact)


def build_base(curvatures, shift: int = 0, mixed_squares: bool = True) -> QuadraticInequality:
    """dF_{k+s} >= (mu1+mu2)/2 |dx_{k+s}|^2 plus the two mixed squares."""
    return _build(
        curvatures, shift, (Primitive.F1_FORWARD, Primitive.F2_BACKWARD), "B", mixed_squares
    )


def build_c1(curvatures, shift: int = 0) -> QuadraticInequality:
    return _build(curvatures, shift, (Primitive.F1_FORWARD, Primitive.F1_BACKWARD), "C_f1")


def build_c2(curvatures, shift: int = 0) -> QuadraticInequality:
    return _build(curvatures, shift, (Primitive.F2_FORWARD, Primitive.F2_BACKWARD), "C_f2")


def combine(base_shift: int, beta1: Number, beta2: Number, curvatures) -> QuadraticInequality:
    """B^{k+s} + beta1 C_f1^{k+1} + beta2 C_f2^k.

    base_shift 0 is orientation A and 1 is orientation B; both pair the base
    inequality with the same two monotonicity inequalities.
    """
    if beta1 < 0 or beta2 < 0:
        raise WeightError(f"Weights must be nonnegative, got ({beta1}, {beta2})")
    c = as_curvatures(curvatures)
    combined = build_base(c, base_shift)
    if beta1 != 0:
        combined = combined + build_c1(c, 1).scaled(coerce(beta1, c.exact))
    if beta2 != 0:
        combined = combined + build_c2(c, 0).scaled(coerce(beta2, c.exact))
    return combined


def _squares(lemma: LemmaId, c: Curvatures) -> List[SquareSpec]:
    G0, G1, G2, DX0, DX1 = Symbol.G0, Symbol.G1, Symbol.G2, Symbol.DX0, Symbol.DX1
    regime = lemma.regime
    if regime == Regime.P1:
        return [
            SquareSpec(G0, DX0, c.mu1, "mu1"),
            SquareSpec(G1, DX0, c.mu1, "mu1"),
            SquareSpec(G1, DX1, c.mu1, "mu1"),
        ]
    if regime == Regime.P2:
        return [
            SquareSpec(G2, DX1, c.mu2, "mu2"),
            SquareSpec(G1, DX1, c.mu2, "mu2"),
            SquareSpec(G1, DX0, c.mu2, "mu2"),
        ]
    if regime == Regime.P3:
        return [SquareSpec(G0, DX0, c.mu1, "mu1"), SquareSpec(G1, DX1, c.mu1, "mu1")]
    if regime == Regime.P4:
        return [
            SquareSpec(G0, DX0, c.mu1, "mu1"),
            SquareSpec(G1, DX1, c.mu1, "mu1"),
            SquareSpec(G1, DX0, c.L2, "L2"),
        ]
    if regime == Regime.P5:
        return [
            SquareSpec(G0, DX0, c.mu1, "mu1"),
            SquareSpec(G1, DX1, c.mu1, "mu1"),
            SquareSpec(G1, DX0, c.mu2, "mu2"),
        ]
    return [
        SquareSpec(G2, DX1, c.mu2, "mu2"),
        SquareSpec(G1, DX0, c.mu2, "mu2"),
        SquareSpec(G1, DX1, c.L1, "L1"),
    ]


def lemma_plan(lemma_id, curvatures, k: int = 0) -> LemmaPlan:
    """Orientation, multipliers and claimed coefficients of a descent lemma.

    The claim (ca, cb) reads dF >= ca/2 |dx_k|^2 + cb/2 |dx_{k+1}|^2, with
    dF = dF_k for orientation A and dF_{k+1} for orientation B.
    """
    lemma = LemmaId(str(lemma_id))
    c = as_curvatures(curvatures)
    exact = c.exact
    mu1, L1, mu2, L2 = [coerce(v, exact) for v in c]
    if k < 0:
        raise DomainError(f"Step index must be nonnegative, got {k}")
    if (lemma in (LemmaId.P4, LemmaId.LINEAR_P4) and not c.f2.smooth) or (
        lemma == LemmaId.P6 and not c.f1.smooth
    ):
        raise DomainError(f"{lemma} needs a finite curvature upper bound")

    try:
        if lemma == LemmaId.P1:
            beta = (mu1 - mu2) * coerce(inv(L2 - mu2), exact)
            shift, beta1, beta2 = 0, beta, 0
            claim = (mu1 + mu2 * (1 - beta), mu1 * beta)
        elif lemma == LemmaId.P2:
            beta = (mu2 - mu1) * coerce(inv(L1 - mu1), exact)
            shift, beta1, beta2 = 1, 0, beta
            claim = (mu2 * beta, mu2 + mu1 * (1 - beta))
        elif lemma == LemmaId.P3:
            scale = coerce(inv(L2 + mu2), exact)
            shift, beta1, beta2 = 0, mu1 * scale, -mu2 * scale
            claim = (mu1 + mu2 - mu2**2 * scale, mu1**2 * scale)
        elif lemma == LemmaId.P4:
            shift, beta1, beta2 = 0, mu1 * (mu1 + L2) / L2**2, mu1 / L2
            claim = (0, mu1**2 * (L2 + mu1) / L2**2)
        elif lemma == LemmaId.P5:
            shift, beta1, beta2 = 0, mu1 * (mu1 + mu2) / mu2**2, (mu1 + mu2) / (-mu2)
            claim = (0, mu1**2 * (mu1 + mu2) / mu2**2)
        elif lemma == LemmaId.P6:
            shift, beta1, beta2 = 1, mu2 / L1, mu2 * (mu2 + L1) / L1**2
            claim = (mu2**2 * (L1 + mu2) / L1**2, 0)
        else:
            if mu1 <= 0:
                raise DomainError(f"{lemma} needs mu1 > 0, got {mu1}")
            if lemma == LemmaId.LINEAR_P4:
                z = L2 / mu1
                following = coerce(e_sum(k + 1, z), exact)
                shift, beta1, beta2 = 0, following, -1 + z * following
            else:
                z = mu2 / mu1
                following = coerce(e_sum(k + 1, z), exact)
                shift, beta1, beta2 = 0, following, -z * following
            current = coerce(e_sum(k, z), exact)
            claim = (-current * mu1, following * mu1)
    except ZeroDivisionError:
        raise DomainError(f"{lemma} is undefined at {tuple(c)}")

    return LemmaPlan(
        lemma=lemma,
        base_shift=shift,
        beta1=coerce(beta1, exact),
        beta2=coerce(beta2, exact),
        claim=(coerce(claim[0], exact), coerce(claim[1], exact)),
        squares=_squares(lemma, c),
        k=k,
    )


def claim_inequality(plan: LemmaPlan, exact: bool) -> QuadraticInequality:
    gram = _zeros((5, 5), exact)
    gram[0, 0] = plan.claim[0] / 2
    gram[1, 1] = plan.claim[1] / 2
    affine = _zeros(2, exact)
    affine[plan.base_shift] = coerce(1, exact)
    return QuadraticInequality(gram, affine, f"{plan.lemma} claim")


def _square_vector(spec: SquareSpec, exact: bool) -> np.ndarray:
    v = _zeros(5, exact)
    v[spec.u.index] = coerce(1, exact)
    v[spec.v.index] = -coerce(spec.t, exact)
    return v


def _term(label: str, coefficient: Number, vector: np.ndarray, exact: bool) -> SquareTerm:
    return SquareTerm(
        label=label,
        coefficient=float(coefficient),
        exact_coefficient=str(coefficient) if exact else None,
        vector=_floats(vector).tolist(),
    )


def _complete(lemma: LemmaId, leftover: np.ndarray, tol: float) -> List[SquareTerm]:
    """LDL^T squares of a leftover that is not in the listed basis."""
    lu, d, _ = linalg.ldl(_floats(leftover))
    if np.any(np.abs(d - np.diag(np.diag(d))) > tol):
        raise DecompositionError(
            f"Leftover of {lemma} is indefinite", lemma=str(lemma), label="completion"
        )
    terms = []
    for i, value in enumerate(np.diag(d)):
        if value < -tol:
            raise DecompositionError(
                f"Leftover of {lemma} is not positive semidefinite ({value:.3g})",
                lemma=str(lemma),
                label=f"completion[{i}]",
                value=float(value),
            )
        if value > tol:
            terms.append(_term(f"completion[{i}]", value, lu[:, i], False))
    return terms


def verify_descent_lemma(lemma_id, curvatures, k: int = 0) -> SquareDecomposition:
    """Machine check of a descent lemma: combined inequality minus claim is a sum of squares.

    Square coefficients are read off the residual in the lemma's listed basis:
    a square |U - t V|^2 is the only term carrying <U, V>, so its coefficient
    is -R[U, V]/t; squares with t = 0 take what is left on the U diagonal.
    Raises DecompositionError on a negative coefficient.
    """
    c = as_curvatures(curvatures)
    exact = c.exact
    plan = lemma_plan(lemma_id, c, k)
    lemma = str(plan.lemma)
    try:
        combined = combine(plan.base_shift, plan.beta1, plan.beta2, c)
    except WeightError:
        label, value = ("beta1", plan.beta1) if plan.beta1 < 0 else ("beta2", plan.beta2)
        raise DecompositionError(
            f"{lemma}: multiplier {label} = {float(value):.6g} is negative",
            lemma=lemma,
            label=label,
            value=float(value),
        )

    residual = combined.gram - claim_inequality(plan, exact).gram
    scale = max(1, _max_abs(residual))
    coef_tol = 0 if exact else COEFFICIENT_TOL * float(scale)
    left_tol = 0 if exact else LEFTOVER_TOL * float(scale)

    coefficients: Dict[int, Number] = {}
    for i, spec in enumerate(plan.squares):
        if spec.t != 0:
            coefficients[i] = -residual[spec.u.index, spec.v.index] / coerce(spec.t, exact)
    for i, spec in enumerate(plan.squares):
        if spec.t == 0:
            shared = sum(
                (
                    coefficients[j]
                    for j, other in enumerate(plan.squares)
                    if j in coefficients and other.u == spec.u
                ),
                coerce(0, exact),
            )
            coefficients[i] = residual[spec.u.index, spec.u.index] - shared

    leftover = residual.copy()
    terms = []
    for i, spec in enumerate(plan.squares):
        value = coefficients[i]
        if value < -coef_tol:
            raise DecompositionError(
                f"{lemma}: coefficient of |{spec.label}|^2 is {float(value):.6g}",
                lemma=lemma,
                label=spec.label,
                value=float(value),
            )
        vector = _square_vector(spec, exact)
        leftover = leftover - value * np.outer(vector, vector)
        terms.append(_term(spec.label, value, vector, exact))

    listed = _max_abs(leftover) <= left_tol
    if not listed:
        logger.warning(
            f"{lemma} at {tuple(float(v) for v in c)}: leftover "
            f"{float(_max_abs(leftover)):.3g} outside the listed squares, completing"
        )
        completion = _complete(plan.lemma, leftover, max(left_tol, 1e-14))
        terms += completion
        for term in completion:
            vector = np.array(term.vector)
            leftover = _floats(leftover) - term.coefficient * np.outer(vector, vector)

    return SquareDecomposition(
        lemma=lemma,
        k=plan.k,
        orientation=plan.orientation,
        beta1=float(plan.beta1),
        beta2=float(plan.beta2),
        claim=(float(plan.claim[0]), float(plan.claim[1])),
        terms=terms,
        leftover=_floats(leftover).tolist(),
        leftover_norm=float(_max_abs(leftover)),
        listed_basis_exact=listed,
        exact=exact,
    )


@dataclass(frozen=True)
class GramIdentity:
    name: str
    lhs: np.ndarray
    rhs: np.ndarray

    def error(self) -> Number:
        return _max_abs(self.lhs - self.rhs)


def property_identities(mu_i: Number, mu_j: Number) -> List[GramIdentity]:
    """The two identities used to trade inner products for squares, over (G, dx).

    -<G, dx> = (|G - mu_j dx|^2 - |G|^2 - mu_j^2 |dx|^2) / (2 mu_j)
    |G - mu_i dx|^2 = r |G - mu_j dx|^2 - r (1 - r) mu_j^2 |dx|^2 + (1 - r) |G|^2,
    with r = mu_i / mu_j.
    """
    if mu_j == 0:
        raise DomainError("The identities need mu_j != 0")
    exact = isinstance(mu_i, (int, Fraction)) and isinstance(mu_j, (int, Fraction))
    mu_i, mu_j = coerce(mu_i, exact), coerce(mu_j, exact)
    g, dx = [1, 0], [0, 1]

    def sq(t):
        return _square([1, -t], exact)

    inner = -_inner(2, 0, 1, exact)
    expanded = (sq(mu_j) - _square(g, exact) - mu_j**2 * _square(dx, exact)) / (2 * mu_j)
    r = mu_i / mu_j
    mixed = (
        r * sq(mu_j)
        - r * (1 - r) * mu_j**2 * _square(dx, exact)
        + (1 - r) * _square(g, exact)
    )
    return [
        GramIdentity("inner-product", inner, expanded),
        GramIdentity("square-shift", sq(mu_i), mixed),
    ]


def _symbol_vectors(traj: Trajectory, k: int) -> Tuple[np.ndarray, np.ndarray]:
    if k < 0 or k + 2 > traj.N + 1:
        raise IndexError(f"Step {k} needs points up to {k + 2}, trajectory has N = {traj.N}")
    dx, G = traj.dx, traj.G
    vectors = np.array([dx[k], dx[k + 1], G[k], G[k + 1], G[k + 2]])
    decreases = np.array(
        [traj.fvals[k] - traj.fvals[k + 1], traj.fvals[k + 1] - traj.fvals[k + 2]]
    )
    return vectors, decreases


def evaluate(ineq: QuadraticInequality, traj: Trajectory, k: int) -> float:
    """Slack affine - gram of an inequality on the vectors of a trajectory at step k."""
    vectors, decreases = _symbol_vectors(traj, k)
    inner = vectors @ vectors.T
    return float(_floats(ineq.affine) @ decreases - np.sum(_floats(ineq.gram) * inner))


def _trajectory_curvatures(traj: Trajectory, curvatures) -> Curvatures:
    if curvatures is not None:
        return as_curvatures(curvatures)
    if traj.curvatures is None:
        raise ValueError("Trajectory carries no curvature bounds")
    return traj.curvatures


def numeric_check(lemma_id, traj: Trajectory, k: int, curvatures=None) -> float:
    """LHS - RHS of a lemma statement on the iterates of a trajectory at step k."""
    c = _trajectory_curvatures(traj, curvatures)
    plan = lemma_plan(lemma_id, c, k)
    return evaluate(claim_inequality(plan, c.exact), traj, k)


class TelescopeReport(BaseModel):
    lemma: str
    N: int
    slacks: List[float]
    final_slack: float
    total: float
    delta: float
    claimed: float
    denominator: float
    min_gap: float
    identity_error: float


def _denominator(lemma: LemmaId, c: Curvatures, N: int) -> Number:
    mu_sum = c.mu1 + c.mu2
    if lemma == LemmaId.LINEAR_P4:
        return mu_sum + c.mu1 * e_sum(N, c.L2 / c.mu1)
    if lemma == LemmaId.LINEAR_P5:
        return mu_sum + c.mu1 * e_sum(N, c.mu2 / c.mu1)
    return mu_sum + regime_coefficient(lemma.regime, c) * N


def telescope(lemma_id, traj: Trajectory, curvatures=None) -> TelescopeReport:
    """Sum the lemma over k = 0..N-1 and close with the truncated base inequality.

    Orientation A closes at step N, orientation B opens at step 0. The slacks
    add up to F(x^0) - F(x^{N+1}) minus the claimed terms, and the claimed
    terms dominate the rate denominator times 1/2 min_k |dx_k|^2.
    """
    c = _trajectory_curvatures(traj, curvatures)
    lemma = LemmaId(str(lemma_id))
    N = traj.N
    if N < 1:
        raise IndexError("Telescoping needs N >= 1")
    sq = np.sum(traj.dx**2, axis=1)
    dF = traj.fvals[:-1] - traj.fvals[1:]
    mu_sum = float(c.mu1 + c.mu2)

    slacks, claimed = [], 0.0
    for k in range(N):
        plan = lemma_plan(lemma, c, k)
        slacks.append(evaluate(claim_inequality(plan, c.exact), traj, k))
        claimed += float(plan.claim[0]) / 2 * sq[k] + float(plan.claim[1]) / 2 * sq[k + 1]
    closing = N if lemma_plan(lemma, c).base_shift == 0 else 0
    final_slack = float(dF[closing] - mu_sum / 2 * sq[closing])
    claimed += mu_sum / 2 * sq[closing]

    total = float(np.sum(slacks)) + final_slack
    delta = traj.delta
    return TelescopeReport(
        lemma=str(lemma),
        N=N,
        slacks=slacks,
        final_slack=final_slack,
        total=total,
        delta=delta,
        claimed=claimed,
        denominator=float(_denominator(lemma, c, N)),
        min_gap=0.5 * float(np.min(sq)),
        identity_error=abs(total - (delta - claimed)),
    )


class TwoStepCoefficients(BaseModel):
    scaled: Tuple[float, float]
    raw: Tuple[float, float]
    p3_claim: Tuple[float, float]
    scaled_matches: bool
    raw_matches: bool


def _two_step(ell: float, m: float, gamma: float) -> Tuple[float, float]:
    denom = gamma * (2 - ell - m)
    if denom == 0:
        raise DomainError("Two-step coefficients are undefined at L_phi + mu_phi = 2/gamma")
    return ((2 - ell) * (2 - m) - 1) / denom, 1 / denom


def pgd_two_step_coefficients(
    L_phi: float, mu_phi: float, gamma: float, rtol: float = 1e-12
) -> TwoStepCoefficients:
    """PGD two-step descent coefficients under both readings of L_phi and mu_phi.

    The scaled reading uses gamma L_phi and gamma mu_phi in the closed form;
    the raw reading plugs L_phi and mu_phi in directly. Each is compared with
    the p3 claim on the DC splitting with mu_h = 0.
    """
    if gamma <= 0:
        raise DomainError(f"Stepsize must be positive, got {gamma}")
    L_phi, mu_phi, gamma = float(L_phi), float(mu_phi), float(gamma)
    scaled = _two_step(gamma * L_phi, gamma * mu_phi, gamma)
    raw = _two_step(L_phi, mu_phi, gamma)

    t = 1 / gamma
    mu1, mu2, L2 = t, t - L_phi, t - mu_phi
    if L2 + mu2 == 0:
        raise DomainError("The p3 claim is undefined at L2 + mu2 = 0")
    p3 = (mu1 + mu2 - mu2**2 / (L2 + mu2), mu1**2 / (L2 + mu2))

    def matches(pair):
        return all(np.isclose(a, b, rtol=rtol, atol=rtol) for a, b in zip(pair, p3))

    return TwoStepCoefficients(
        scaled=scaled,
        raw=raw,
        p3_claim=p3,
        scaled_matches=matches(scaled),
        raw_matches=matches(raw),
    )
