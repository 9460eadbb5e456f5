import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from src.errors import DomainError, ScheduleError, StepsizeError
from src.oracles import (
    CurvatureBounds,
    Curvatures,
    FunctionOracle,
    SubgradientPolicy,
    oracle_from_dict,
)
from src.utils import Number, instance_hash, jsonable

logger = logging.getLogger(__name__)


class DCInstance:
    """F = f1 - f2 with f1 convex and mu1 + mu2 > 0 (or mu1 = mu2 = 0)."""

    def __init__(self, f1: FunctionOracle, f2: FunctionOracle) -> None:
        if f1.dim != f2.dim:
            raise ValueError(f"Dimension mismatch: f1 has {f1.dim}, f2 has {f2.dim}")
        mu1, mu2 = f1.bounds.mu, f2.bounds.mu
        if mu1 < 0:
            raise DomainError(f"f1 must be convex, got mu1 = {mu1}")
        if not (mu1 + mu2 > 0 or (mu1 == 0 and mu2 == 0)):
            raise DomainError(f"Need mu1 + mu2 > 0 or mu1 = mu2 = 0, got {mu1}, {mu2}")
        self.f1 = f1
        self.f2 = f2

    @property
    def dim(self) -> int:
        return self.f1.dim

    @property
    def curvatures(self) -> Curvatures:
        return Curvatures(
            self.f1.bounds.mu, self.f1.bounds.L, self.f2.bounds.mu, self.f2.bounds.L
        )

    def F(self, x) -> float:
        return self.f1.eval(x) - self.f2.eval(x)

    def to_dict(self) -> dict:
        return {"f1": self.f1.to_dict(), "f2": self.f2.to_dict()}

    @classmethod
    def from_dict(cls, payload: dict) -> "DCInstance":
        return cls(oracle_from_dict(payload["f1"]), oracle_from_dict(payload["f2"]))

    @property
    def instance_id(self) -> str:
        return instance_hash(self.to_dict())


class TrajectoryMeta(BaseModel):
    instance_id: str
    N: int
    policy: SubgradientPolicy = SubgradientPolicy.CANONICAL
    method: str = "dca"
    curvatures: Optional[List[float]] = None
    stepsizes: Optional[List[float]] = None
    shifts: Optional[List[float]] = None
    f_lo: Optional[float] = None


@dataclass(frozen=True)
class Trajectory:
    """Iterates x^0..x^{N+1} with one f1 and one f2 record per iterate.

    fvals is F itself and does not depend on the splitting. For a PGD run with
    a stepsize schedule the component records do: g2[k] and f2vals[k] use the
    stepsize of step k, while g1[k + 1] and f1vals[k + 1] use the stepsize of
    the step that produced x^{k+1} (the last f2 record reuses the final
    stepsize). meta.stepsizes holds the schedule, so the split at step k can be
    rebuilt from it.
    """

    points: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    fvals: np.ndarray
    f1vals: np.ndarray
    f2vals: np.ndarray
    meta: TrajectoryMeta

    def __post_init__(self) -> None:
        for array in (self.points, self.g1, self.g2, self.fvals, self.f1vals, self.f2vals):
            array.setflags(write=False)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def N(self) -> int:
        return len(self.points) - 2

    @property
    def dx(self) -> np.ndarray:
        return self.points[:-1] - self.points[1:]

    @property
    def G(self) -> np.ndarray:
        return self.g1 - self.g2

    @property
    def delta(self) -> float:
        return float(self.fvals[0] - self.fvals[-1])

    @property
    def curvatures(self) -> Optional[Curvatures]:
        if self.meta.curvatures is None:
            return None
        return Curvatures(*self.meta.curvatures)

    def samples(self, component: int) -> List[tuple]:
        grads, values = (self.g1, self.f1vals) if component == 1 else (self.g2, self.f2vals)
        return list(zip(self.points, grads, values))

    def to_dict(self) -> dict:
        return jsonable(
            {
                "points": self.points,
                "g1": self.g1,
                "g2": self.g2,
                "fvals": self.fvals,
                "f1vals": self.f1vals,
                "f2vals": self.f2vals,
                "meta": self.meta.dict(),
            }
        )

    @classmethod
    def from_dict(cls, payload: dict) -> "Trajectory":
        meta = dict(payload["meta"])
        if meta.get("curvatures") is not None:
            meta["curvatures"] = [float(v) for v in meta["curvatures"]]
        return cls(
            points=np.array(payload["points"], dtype=float),
            g1=np.array(payload["g1"], dtype=float),
            g2=np.array(payload["g2"], dtype=float),
            fvals=np.array(payload["fvals"], dtype=float),
            f1vals=np.array(payload["f1vals"], dtype=float),
            f2vals=np.array(payload["f2vals"], dtype=float),
            meta=TrajectoryMeta(**meta),
        )

    def to_frame(self, gaps: Optional[Sequence[Optional[float]]] = None) -> pd.DataFrame:
        def joined(v: np.ndarray) -> str:
            return ";".join(repr(float(c)) for c in v)

        gaps = list(gaps) if gaps is not None else []
        gaps += [None] * (len(self) - len(gaps))
        return pd.DataFrame(
            {
                "k": np.arange(len(self)),
                "x": [joined(x) for x in self.points],
                "F": self.fvals,
                "g1": [joined(g) for g in self.g1],
                "g2": [joined(g) for g in self.g2],
                "gap_to_bound": gaps,
            }
        )


def _record(
    points: List[np.ndarray],
    g1: List[np.ndarray],
    g2: List[np.ndarray],
    f1vals: List[float],
    f2vals: List[float],
    fvals: List[float],
    meta: TrajectoryMeta,
) -> Trajectory:
    return Trajectory(
        points=np.array(points, dtype=float),
        g1=np.array(g1, dtype=float),
        g2=np.array(g2, dtype=float),
        fvals=np.array(fvals, dtype=float),
        f1vals=np.array(f1vals, dtype=float),
        f2vals=np.array(f2vals, dtype=float),
        meta=meta,
    )


def _curvature_list(curvatures: Curvatures) -> List[float]:
    return [float(v) for v in curvatures]


def dca_run(
    inst: DCInstance,
    x0,
    N: int,
    policy: SubgradientPolicy = SubgradientPolicy.CANONICAL,
    shifts: Optional[Sequence[float]] = None,
) -> Trajectory:
    """Run N+1 DCA steps from x0 and record x^0..x^{N+1} with both subgradients.

    With ``shifts`` the k-th step runs on the pair (f1 - lam_k|.|^2/2,
    f2 - lam_k|.|^2/2); F is unchanged and the recorded subgradients are the
    ones of the shifted pair used at that step.
    """
    if N < 0:
        raise DomainError(f"Number of iterations must be nonnegative, got {N}")
    if shifts is not None and len(shifts) != N + 1:
        raise ValueError(f"Expected {N + 1} shifts, got {len(shifts)}")
    lams = [0.0] * (N + 1) if shifts is None else [float(s) for s in shifts]

    def pair(k: int) -> Tuple[FunctionOracle, FunctionOracle]:
        if lams[k] == 0.0:
            return inst.f1, inst.f2
        return inst.f1.shift(lams[k]), inst.f2.shift(lams[k])

    x = np.asarray(x0, dtype=float).reshape(-1)
    f1, f2 = pair(0)
    points = [x]
    g1 = [f1.subgradient(x, policy)]
    g2: List[np.ndarray] = []
    f1vals, f2vals = [f1.eval(x)], [f2.eval(x)]

    for k in range(N + 1):
        f1, f2 = pair(k)
        slope = f2.subgradient(x, policy)
        g2.append(slope)
        x = f1.tilt_argmin(slope)
        points.append(x)
        # The DCA identity: the slope used for the step is a subgradient of f1 at x^{k+1}
        g1.append(slope)
        f1vals.append(f1.eval(x))
        f2vals.append(f2.eval(x))
    g2.append(f2.subgradient(x, policy))

    meta = TrajectoryMeta(
        instance_id=inst.instance_id,
        N=N,
        policy=policy,
        method="dca",
        curvatures=_curvature_list(inst.curvatures),
        shifts=None if shifts is None else lams,
    )
    fvals = [inst.F(p) for p in points]
    return _record(points, g1, g2, f1vals, f2vals, fvals, meta)


def _validate_stepsize(gamma: float, phi: FunctionOracle, h: FunctionOracle) -> None:
    spread = phi.bounds.L - h.bounds.mu
    if gamma <= 0 or (spread > 0 and gamma >= 2 / spread):
        raise StepsizeError(
            f"Stepsize {gamma} outside (0, 2/(L_phi - mu_h)) with L_phi - mu_h = {spread}"
        )


def _check_pgd_pair(phi: FunctionOracle, h: FunctionOracle) -> None:
    if not phi.bounds.smooth:
        raise DomainError("phi must be smooth (finite L_phi)")
    if h.bounds.mu < 0:
        raise DomainError(f"h must be convex, got mu_h = {h.bounds.mu}")


def pgd_step(phi: FunctionOracle, h: FunctionOracle, gamma: float, x) -> np.ndarray:
    """argmin_w h(w) + |w - x + gamma grad phi(x)|^2 / (2 gamma)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = x - gamma * phi.subgradient(x)
    return h.shift(-1 / gamma).tilt_argmin(y / gamma)


def pgd_run(
    phi: FunctionOracle,
    h: FunctionOracle,
    gamma: Union[float, Sequence[float]],
    x0,
    N: int,
) -> Trajectory:
    _check_pgd_pair(phi, h)
    gammas = [float(gamma)] * (N + 1) if np.isscalar(gamma) else [float(g) for g in gamma]
    if len(gammas) != N + 1:
        raise ValueError(f"Expected {N + 1} stepsizes, got {len(gammas)}")
    for g in gammas:
        _validate_stepsize(g, phi, h)

    def f1_parts(x, g):
        return h.eval(x) + x @ x / (2 * g), h.subgradient(x) + x / g

    def f2_parts(x, g):
        return x @ x / (2 * g) - phi.eval(x), x / g - phi.subgradient(x)

    x = np.asarray(x0, dtype=float).reshape(-1)
    value, grad = f1_parts(x, gammas[0])
    points, g1, g2 = [x], [grad], []
    f1vals, f2vals = [value], []

    for k, g in enumerate(gammas):
        value, slope = f2_parts(x, g)
        f2vals.append(value)
        g2.append(slope)
        x = pgd_step(phi, h, g, x)
        points.append(x)
        g1.append(slope)
        f1vals.append(h.eval(x) + x @ x / (2 * g))
    value, slope = f2_parts(x, gammas[-1])
    f2vals.append(value)
    g2.append(slope)

    meta = TrajectoryMeta(
        instance_id=instance_hash({"phi": phi.to_dict(), "h": h.to_dict()}),
        N=N,
        method="pgd",
        curvatures=_curvature_list(
            map_pgd_to_dc(phi.bounds, h.bounds, gammas[0])
        ),
        stepsizes=gammas,
    )
    fvals = [phi.eval(p) + h.eval(p) for p in points]
    return _record(points, g1, g2, f1vals, f2vals, fvals, meta)


def map_pgd_to_dc(
    phi_bounds: CurvatureBounds, h_bounds: CurvatureBounds, gamma: Number
) -> Curvatures:
    if gamma <= 0:
        raise DomainError(f"Stepsize must be positive, got {gamma}")
    t = 1 / gamma
    return Curvatures(
        t + h_bounds.mu, t + h_bounds.L, t - phi_bounds.L, t - phi_bounds.mu
    )


def dc_split_of_pgd(phi: FunctionOracle, h: FunctionOracle, gamma: float) -> DCInstance:
    """f1 = h + |.|^2/(2 gamma), f2 = |.|^2/(2 gamma) - phi."""
    _check_pgd_pair(phi, h)
    return DCInstance(h.shift(-1 / gamma), phi.negate().shift(-1 / gamma))


def best_gradient_mapping(traj: Trajectory) -> Tuple[int, float]:
    if len(traj) < 2:
        raise ValueError("Trajectory needs at least two points")
    gaps = np.sum(traj.dx**2, axis=1)
    index = int(np.argmin(gaps))
    return index, float(gaps[index])


def gradient_residual(traj: Trajectory) -> Tuple[int, float]:
    residuals = np.linalg.norm(traj.G, axis=1)
    index = int(np.argmin(residuals))
    return index, float(residuals[index])


def schedule_curvature_shift(
    mu1: Number, L2: Number, mu2: Number, gamma_schedule: Sequence[Number]
) -> List[Number]:
    """Curvature shifts lam_k = mu1 - 1/gamma_k for a PGD stepsize schedule.

    The schedule is read on the PGD splitting with stepsize 1/mu1, where
    L_phi = mu1 - mu2 and mu_phi = mu1 - L2. Each shifted pair keeps
    mu1 - lam_k = 1/gamma_k and must still satisfy mu1 + mu2 > 0.
    """
    if mu1 <= 0:
        raise DomainError(f"Curvature shift schedules need mu1 > 0, got {mu1}")
    if not mu2 < L2:
        raise DomainError(f"Need mu2 < L2, got ({mu2}, {L2})")
    lams = []
    for k, gamma in enumerate(gamma_schedule):
        if gamma <= 0:
            raise ScheduleError(f"Stepsize {gamma} at k={k} is not positive")
        lam = mu1 - 1 / gamma
        shifted_mu1, shifted_mu2 = mu1 - lam, mu2 - lam
        if shifted_mu1 <= 0 or shifted_mu1 + shifted_mu2 <= 0:
            raise ScheduleError(
                f"Stepsize {gamma} at k={k} gives shifted curvatures "
                f"({shifted_mu1}, {shifted_mu2}) with mu1 + mu2 <= 0"
            )
        lams.append(lam)
    return lams


def shift_instance(inst: DCInstance, lam: float) -> DCInstance:
    return DCInstance(inst.f1.shift(lam), inst.f2.shift(lam))

