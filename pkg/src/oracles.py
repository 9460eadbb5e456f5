import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from src.errors import DomainError, RangeError, SingularError
from src.utils import Number, jsonable, parse_extended_real

logger = logging.getLogger(__name__)

# Slack used when validating stored parametric forms against declared bounds
BOUNDS_TOL = 1e-9
# Relative distance under which a point is considered to sit on a breakpoint
KINK_RTOL = 1e-12


def inv(value: Number) -> Number:
    """1/value, with the infinite case mapped to 0."""
    if isinstance(value, float) and math.isinf(value):
        return 0
    return 1 / value


def is_exact(*values: Number) -> bool:
    finite = [v for v in values if not (isinstance(v, float) and math.isinf(v))]
    return all(
        isinstance(v, (int, Fraction)) and not isinstance(v, bool) for v in finite
    )


def coerce(value: Number, exact: bool) -> Number:
    if isinstance(value, float) and math.isinf(value):
        return value
    return Fraction(value) if exact else float(value)


@dataclass(frozen=True)
class CurvatureBounds:
    mu: Number
    L: Number = math.inf

    def __post_init__(self) -> None:
        if isinstance(self.mu, float) and (math.isinf(self.mu) or math.isnan(self.mu)):
            raise DomainError(f"Curvature lower bound must be finite, got {self.mu}")
        if isinstance(self.L, float) and math.isnan(self.L):
            raise DomainError("Curvature upper bound is NaN")
        if not self.mu < self.L:
            raise DomainError(f"Curvature bounds need mu < L, got ({self.mu}, {self.L})")

    @property
    def smooth(self) -> bool:
        return not (isinstance(self.L, float) and math.isinf(self.L))

    @property
    def inv_gap(self) -> Number:
        return inv(self.L - self.mu)

    def shift(self, lam: Number) -> "CurvatureBounds":
        return CurvatureBounds(self.mu - lam, self.L - lam)

    def negate(self) -> "CurvatureBounds":
        if not self.smooth:
            raise DomainError("Cannot negate a nonsmooth curvature class")
        return CurvatureBounds(-self.L, -self.mu)

    def contains(self, curvature: float, tol: float = BOUNDS_TOL) -> bool:
        scale = max(1.0, abs(float(curvature)))
        return self.mu - tol * scale <= curvature <= self.L + tol * scale


class Curvatures(NamedTuple):
    mu1: Number
    L1: Number
    mu2: Number
    L2: Number

    @property
    def f1(self) -> CurvatureBounds:
        return CurvatureBounds(self.mu1, self.L1)

    @property
    def f2(self) -> CurvatureBounds:
        return CurvatureBounds(self.mu2, self.L2)

    @property
    def exact(self) -> bool:
        return is_exact(*self)

    @classmethod
    def of(cls, mu1: Number, L1: Number, mu2: Number, L2: Number) -> "Curvatures":
        """Validated quadruple with a single arithmetic mode for all entries."""
        values = [parse_extended_real(v) for v in (mu1, L1, mu2, L2)]
        exact = is_exact(*values)
        curvatures = cls(*[coerce(v, exact) for v in values])
        # Raises on malformed bounds
        CurvatureBounds(curvatures.mu1, curvatures.L1)
        CurvatureBounds(curvatures.mu2, curvatures.L2)
        return curvatures

    def swapped(self) -> "Curvatures":
        return Curvatures(self.mu2, self.L2, self.mu1, self.L1)


class SubgradientPolicy(Enum):
    CANONICAL = "canonical"
    LEFT = "left"
    RIGHT = "right"

    def __str__(self):
        return self.value


class Violation(BaseModel):
    i: int
    j: int
    slack: float


class FunctionOracle(ABC):
    family: str
    bounds: CurvatureBounds

    @property
    @abstractmethod
    def dim(self) -> int:
        ...

    @abstractmethod
    def eval(self, x: np.ndarray) -> float:
        ...

    @abstractmethod
    def subgradient(
        self, x: np.ndarray, policy: SubgradientPolicy = SubgradientPolicy.CANONICAL
    ) -> np.ndarray:
        ...

    @abstractmethod
    def tilt_argmin(self, g: np.ndarray) -> np.ndarray:
        """A point w with g in the subdifferential at w."""

    @abstractmethod
    def shift(self, lam: float) -> "FunctionOracle":
        """The oracle of f - lam*|x|^2/2."""

    @abstractmethod
    def negate(self) -> "FunctionOracle":
        ...

    @abstractmethod
    def params(self) -> dict:
        ...

    def to_dict(self) -> dict:
        return jsonable(
            {
                "family": self.family,
                "params": self.params(),
                "mu": self.bounds.mu,
                "L": self.bounds.L,
            }
        )

    def samples(self, points: Sequence[np.ndarray], policy=SubgradientPolicy.CANONICAL):
        return [(x, self.subgradient(x, policy), self.eval(x)) for x in points]


def _as_point(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != dim:
        raise ValueError(f"Expected a point of dimension {dim}, got {x.shape[0]}")
    return x


class QuadraticOracle(FunctionOracle):
    """f(x) = x'Ax/2 + b'x + c on R^d."""

    family = "quadratic"

    def __init__(
        self,
        A,
        b=None,
        c: float = 0.0,
        bounds: Optional[CurvatureBounds] = None,
    ) -> None:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=1e-12):
            raise ValueError("Quadratic Hessian must be a symmetric square matrix")
        self.A = (A + A.T) / 2
        self.b = (
            np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float).reshape(-1)
        )
        self.c = float(c)
        self.eigenvalues = np.linalg.eigvalsh(self.A)

        lo, hi = float(self.eigenvalues[0]), float(self.eigenvalues[-1])
        if bounds is None:
            bounds = CurvatureBounds(lo, hi if hi > lo else lo + 1e-6)
        if not (bounds.contains(lo) and bounds.contains(hi)):
            raise DomainError(
                f"Hessian eigenvalues [{lo}, {hi}] outside declared bounds "
                f"[{bounds.mu}, {bounds.L}]"
            )
        self.bounds = bounds

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def eval(self, x) -> float:
        x = _as_point(x, self.dim)
        return float(0.5 * x @ self.A @ x + self.b @ x + self.c)

    def subgradient(self, x, policy=SubgradientPolicy.CANONICAL) -> np.ndarray:
        x = _as_point(x, self.dim)
        return self.A @ x + self.b

    def tilt_argmin(self, g) -> np.ndarray:
        if self.eigenvalues[0] < -BOUNDS_TOL:
            raise DomainError("Tilted argmin of a nonconvex quadratic is unbounded")
        rhs = _as_point(g, self.dim) - self.b
        scale = max(1.0, float(np.max(np.abs(self.eigenvalues))))
        if self.eigenvalues[0] > 1e-12 * scale:
            return np.linalg.solve(self.A, rhs)

        # Flat direction: minimum-norm solution if the system is consistent
        w, *_ = np.linalg.lstsq(self.A, rhs, rcond=None)
        residual = np.linalg.norm(self.A @ w - rhs)
        if residual > 1e-9 * max(1.0, float(np.linalg.norm(rhs))):
            raise SingularError(
                f"Slope has a component of norm {residual:.3g} along a flat direction"
            )
        return w

    def shift(self, lam: float) -> "QuadraticOracle":
        return QuadraticOracle(
            self.A - lam * np.eye(self.dim), self.b, self.c, self.bounds.shift(lam)
        )

    def negate(self) -> "QuadraticOracle":
        return QuadraticOracle(-self.A, -self.b, -self.c, self.bounds.negate())

    def params(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist(), "c": self.c}


class PiecewiseQuadratic1D(FunctionOracle):
    """Continuous 1-D function made of quadratic pieces a/2 x^2 + b x + c.

    Piece i lives on [t_{i-1}, t_i] with t_{-1} = -inf and t_m = +inf. The
    derivative may jump upwards at a breakpoint, which requires L = inf.
    """

    family = "pw1d"

    def __init__(
        self,
        breakpoints: Sequence[float],
        pieces: Sequence[Tuple[float, float, float]],
        bounds: Optional[CurvatureBounds] = None,
    ) -> None:
        self.breakpoints = np.asarray(breakpoints, dtype=float).reshape(-1)
        self.pieces = np.asarray(pieces, dtype=float).reshape(-1, 3)
        if len(self.pieces) != len(self.breakpoints) + 1:
            raise ValueError("Need exactly one more piece than breakpoints")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("Breakpoints must be strictly increasing")

        jumps = []
        for j, t in enumerate(self.breakpoints):
            left, right = self.pieces[j], self.pieces[j + 1]
            scale = max(1.0, abs(t)) ** 2 * max(1.0, *np.abs(left), *np.abs(right))
            if abs(_value(left, t) - _value(right, t)) > BOUNDS_TOL * scale:
                raise ValueError(f"Function is discontinuous at breakpoint {t}")
            jump = _slope(right, t) - _slope(left, t)
            if jump < -BOUNDS_TOL * scale:
                raise DomainError(f"Downward kink at breakpoint {t}")
            # Rounding noise from from_profile is not a kink
            jumps.append(jump if jump > BOUNDS_TOL * scale else 0.0)
        self.jumps = np.asarray(jumps, dtype=float)

        curvatures = self.pieces[:, 0]
        has_kinks = bool(np.any(self.jumps > 0))
        if bounds is None:
            lo, hi = float(curvatures.min()), float(curvatures.max())
            if has_kinks:
                hi = math.inf
            elif hi <= lo:
                hi = lo + 1e-6
            bounds = CurvatureBounds(lo, hi)
        if has_kinks and bounds.smooth:
            raise DomainError("Kinks require an infinite curvature upper bound")
        if not all(bounds.contains(a) for a in curvatures):
            raise DomainError(
                f"Piece curvatures {curvatures.tolist()} outside declared bounds "
                f"[{bounds.mu}, {bounds.L}]"
            )
        self.bounds = bounds

    @classmethod
    def from_profile(
        cls,
        breakpoints: Sequence[float],
        curvatures: Sequence[float],
        jumps: Optional[Sequence[float]] = None,
        slope0: float = 0.0,
        value0: float = 0.0,
        bounds: Optional[CurvatureBounds] = None,
    ) -> "PiecewiseQuadratic1D":
        """Build pieces from curvatures and derivative jumps.

        The first piece is curvatures[0]/2 x^2 + slope0 x + value0; every later
        piece continues the value and the derivative (plus the jump) of its
        left neighbour.
        """
        jumps = np.zeros(len(breakpoints)) if jumps is None else jumps
        if len(curvatures) != len(breakpoints) + 1 or len(jumps) != len(breakpoints):
            raise ValueError("Profile lengths do not match the breakpoints")
        pieces = [(float(curvatures[0]), float(slope0), float(value0))]
        for t, a, jump in zip(breakpoints, curvatures[1:], jumps):
            prev = pieces[-1]
            b = _slope(prev, t) + jump - a * t
            c = _value(prev, t) - (a * t * t / 2 + b * t)
            pieces.append((float(a), float(b), float(c)))
        return cls(breakpoints, pieces, bounds)

    @property
    def dim(self) -> int:
        return 1

    def _kink(self, x: float) -> Optional[int]:
        for j, t in enumerate(self.breakpoints):
            if abs(x - t) <= KINK_RTOL * max(1.0, abs(t)):
                return j
        return None

    def _piece(self, x: float) -> np.ndarray:
        return self.pieces[int(np.searchsorted(self.breakpoints, x, side="right"))]

    def one_sided(self, x) -> Tuple[float, float]:
        x = float(_as_point(x, 1)[0])
        j = self._kink(x)
        if j is None:
            d = _slope(self._piece(x), x)
            return d, d
        t = self.breakpoints[j]
        return _slope(self.pieces[j], t), _slope(self.pieces[j + 1], t)

    def eval(self, x) -> float:
        x = float(_as_point(x, 1)[0])
        return float(_value(self._piece(x), x))

    def subgradient(self, x, policy=SubgradientPolicy.CANONICAL) -> np.ndarray:
        left, right = self.one_sided(x)
        if policy == SubgradientPolicy.LEFT:
            return np.array([left])
        if policy == SubgradientPolicy.RIGHT:
            return np.array([right])
        return np.array([(left + right) / 2])

    def tilt_argmin(self, g) -> np.ndarray:
        if self.bounds.mu < 0:
            raise DomainError("Tilted argmin needs a convex piecewise function")
        g = float(_as_point(g, 1)[0])
        edges = np.concatenate([[-np.inf], self.breakpoints, [np.inf]])
        slope_tol = 1e-10 * max(1.0, abs(g))

        # The solution set is an interval; collect every part of it
        intervals: List[Tuple[float, float]] = []
        captured: List[float] = []
        for i, (a, b, _) in enumerate(self.pieces):
            lo, hi = edges[i], edges[i + 1]
            if a > 0:
                w = (g - b) / a
                reach = KINK_RTOL * max(1.0, abs(w))
                if lo - reach <= w <= hi + reach:
                    intervals.append((w, w))
            elif abs(b - g) <= slope_tol:
                intervals.append((lo, hi))
        for j, t in enumerate(self.breakpoints):
            left = _slope(self.pieces[j], t)
            right = _slope(self.pieces[j + 1], t)
            if left - slope_tol <= g <= right + slope_tol:
                intervals.append((t, t))
                captured.append(t)
        if not intervals:
            raise RangeError(f"Slope {g} is outside the range of the subdifferential")

        lo = min(i[0] for i in intervals)
        hi = max(i[1] for i in intervals)
        if hi - lo <= KINK_RTOL * max(1.0, abs(lo), abs(hi)):
            return np.array([captured[0] if captured else lo])
        return np.array([float(np.clip(0.0, lo, hi))])

    def shift(self, lam: float) -> "PiecewiseQuadratic1D":
        pieces = self.pieces.copy()
        pieces[:, 0] -= lam
        return PiecewiseQuadratic1D(self.breakpoints, pieces, self.bounds.shift(lam))

    def negate(self) -> "PiecewiseQuadratic1D":
        bounds = self.bounds.negate()
        return PiecewiseQuadratic1D(self.breakpoints, -self.pieces, bounds)

    def params(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "pieces": self.pieces.tolist()}


def _within(inner: CurvatureBounds, outer: CurvatureBounds) -> bool:
    if inner.smooth:
        return outer.contains(inner.mu) and outer.contains(inner.L)
    return outer.contains(inner.mu) and not outer.smooth


class SeparableOracle(FunctionOracle):
    """f(x) = sum_i f_i(x_i) over consecutive coordinate blocks.

    The sum inherits the curvature class of its blocks, so every block must
    sit inside the declared bounds.
    """

    family = "separable"

    def __init__(
        self, blocks: Sequence[FunctionOracle], bounds: Optional[CurvatureBounds] = None
    ) -> None:
        if not blocks:
            raise ValueError("A separable oracle needs at least one block")
        self.blocks = list(blocks)
        if bounds is None:
            mu = min(b.bounds.mu for b in self.blocks)
            L = max(b.bounds.L for b in self.blocks)
            bounds = CurvatureBounds(mu, L)
        for block in self.blocks:
            inner = block.bounds
            if not _within(inner, bounds):
                raise DomainError(
                    f"Block bounds [{inner.mu}, {inner.L}] outside declared bounds "
                    f"[{bounds.mu}, {bounds.L}]"
                )
        self.bounds = bounds
        self._offsets = np.cumsum([0] + [b.dim for b in self.blocks])

    @property
    def dim(self) -> int:
        return int(self._offsets[-1])

    def _split(self, x) -> List[np.ndarray]:
        x = _as_point(x, self.dim)
        return [x[lo:hi] for lo, hi in zip(self._offsets[:-1], self._offsets[1:])]

    def eval(self, x) -> float:
        return float(sum(b.eval(part) for b, part in zip(self.blocks, self._split(x))))

    def subgradient(self, x, policy=SubgradientPolicy.CANONICAL) -> np.ndarray:
        parts = self._split(x)
        return np.concatenate([b.subgradient(p, policy) for b, p in zip(self.blocks, parts)])

    def tilt_argmin(self, g) -> np.ndarray:
        parts = self._split(g)
        return np.concatenate([b.tilt_argmin(p) for b, p in zip(self.blocks, parts)])

    def shift(self, lam: float) -> "SeparableOracle":
        return SeparableOracle([b.shift(lam) for b in self.blocks], self.bounds.shift(lam))

    def negate(self) -> "SeparableOracle":
        return SeparableOracle([b.negate() for b in self.blocks], self.bounds.negate())

    def params(self) -> dict:
        return {"blocks": [b.to_dict() for b in self.blocks]}


def _value(piece, x: float) -> float:
    a, b, c = piece
    return a * x * x / 2 + b * x + c


def _slope(piece, x: float) -> float:
    a, b, _ = piece
    return a * x + b


def check_interpolation(
    bounds: CurvatureBounds, samples: Sequence[tuple], tol: float = 1e-9
) -> List[Violation]:
    """Ordered pairs of samples (x, g, f) violating the F_{mu,L} interpolation inequality.

    For every pair (i, j) the slack is
    f_i - f_j - <g_j, x_i - x_j> - mu/2 |x_i - x_j|^2
    - 1/(2(L - mu)) |g_i - g_j - mu (x_i - x_j)|^2.
    An empty list means the samples are consistent with the class.
    """
    if len(samples) < 2:
        return []
    X = np.array([np.asarray(s[0], dtype=float).reshape(-1) for s in samples])
    G = np.array([np.asarray(s[1], dtype=float).reshape(-1) for s in samples])
    F = np.array([float(s[2]) for s in samples])
    mu, c = float(bounds.mu), float(bounds.inv_gap) / 2

    D = X[:, None, :] - X[None, :, :]
    DG = G[:, None, :] - G[None, :, :]
    linear = np.einsum("jd,ijd->ij", G, D)
    slack = (
        F[:, None]
        - F[None, :]
        - linear
        - mu / 2 * np.sum(D**2, axis=-1)
        - c * np.sum((DG - mu * D) ** 2, axis=-1)
    )
    np.fill_diagonal(slack, 0.0)
    return [
        Violation(i=int(i), j=int(j), slack=float(slack[i, j]))
        for i, j in zip(*np.nonzero(slack < -tol))
    ]


def shift_curvature(f: FunctionOracle, lam: float) -> FunctionOracle:
    return f.shift(lam)


def oracle_from_dict(payload: dict) -> FunctionOracle:
    family = payload.get("family")
    params = payload.get("params", {})
    bounds = None
    if "mu" in payload:
        L = parse_extended_real(payload.get("L", "inf"))
        bounds = CurvatureBounds(float(parse_extended_real(payload["mu"])), float(L))

    if family == "quadratic":
        return QuadraticOracle(
            params["A"], params.get("b"), params.get("c", 0.0), bounds=bounds
        )
    elif family == "pw1d":
        if "pieces" in params:
            return PiecewiseQuadratic1D(params["breakpoints"], params["pieces"], bounds)
        return PiecewiseQuadratic1D.from_profile(
            params["breakpoints"],
            params["curvatures"],
            params.get("jumps"),
            params.get("slope0", 0.0),
            params.get("value0", 0.0),
            bounds,
        )
    elif family == "separable":
        return SeparableOracle([oracle_from_dict(b) for b in params["blocks"]], bounds)
    else:
        raise ValueError(f"Unknown oracle family: {family}")

