import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, validator
from scipy import optimize
from tqdm import tqdm

from src.engine import Trajectory, dca_run
from src.errors import DCRatesError, DomainError
from src.oracles import Curvatures, SubgradientPolicy
from src.rates import (
    FormulaId,
    Regime,
    RegimeReport,
    RateValue,
    applicable_bounds,
    classify_regime,
)
from src.worstcase.families import DEFAULT_FAMILY, FAMILIES, Candidate, decode, sample_params
from src.worstcase.witnesses import structured_witnesses, witness_pieces

logger = logging.getLogger(__name__)

# A ratio above 1 + RATIO_TOL is a bound violation
RATIO_TOL = 1e-6
# Acceptance levels under which a search logs a shortfall note
TIGHT_SMALL_N = 0.95
TIGHT_SUBLINEAR = 0.90
TIGHT_CONJECTURED = 0.85

POLICIES = list(SubgradientPolicy)


class SearchSpec(BaseModel):
    curvatures: Tuple[float, float, float, float]
    N: int
    family: str = DEFAULT_FAMILY
    budget: int = 1000
    seed: int = 0
    max_pieces: int = 3
    workers: int = 1
    refine: int = 3
    denominator_scale: float = 1.0

    @validator("family")
    def _known_family(cls, v):
        if v not in FAMILIES:
            raise ValueError("Invalid family name")
        return v


class Witness(BaseModel):
    source: str
    instance: dict
    x0: List[float]
    policy: SubgradientPolicy
    trajectory: dict


class TightnessReport(BaseModel):
    best_ratio: float
    proven_ratio: float
    bound_id: FormulaId
    proven: bool
    denominator: float
    proven_denominator: float
    regime: RegimeReport
    witness: Optional[Witness] = None
    trials: int
    failures: int
    conjecture_violated: bool = False
    note: Optional[str] = None


@dataclass(frozen=True)
class Trial:
    index: int
    ratio: float
    proven_ratio: float
    candidate: Optional[Candidate] = None
    trajectory: Optional[Trajectory] = None
    failed: bool = False


@dataclass(frozen=True)
class Denominators:
    best: float
    proven: float
    bound: RateValue


def _denominators(curvatures: Curvatures, N: int, scale: float) -> Denominators:
    rates = applicable_bounds(curvatures, N, 1.0)
    best = max(rates, key=lambda r: (r.denominator, r.proven))
    proven = max(r.denominator for r in rates if r.proven)
    return Denominators(best.denominator * scale, proven * scale, best)


def gap_ratio(traj: Trajectory, denominator: float) -> float:
    """(1/2 min_k |dx_k|^2) * denominator / (F(x^0) - F(x^{N+1})); 0 on a flat run."""
    delta = traj.delta
    if not delta > 1e-12 * max(1.0, abs(float(traj.fvals[0]))):
        return 0.0
    gap = 0.5 * float(np.min(np.sum(traj.dx**2, axis=1)))
    return gap * denominator / delta


def _run(index: int, candidate: Candidate, N: int, d: Denominators) -> Trial:
    try:
        traj = dca_run(candidate.instance, candidate.x0, N, candidate.policy)
    except DCRatesError as e:
        logger.debug(f"Trial {index} ({candidate.source}) failed: {e}")
        return Trial(index, 0.0, 0.0, candidate, failed=True)
    if not np.all(np.isfinite(traj.fvals)):
        return Trial(index, 0.0, 0.0, candidate, failed=True)
    return Trial(
        index,
        gap_ratio(traj, d.best),
        gap_ratio(traj, d.proven),
        candidate,
        traj,
    )


def _random_candidate(spec: SearchSpec, curvatures: Curvatures, seq) -> Candidate:
    rng = np.random.default_rng(seq)
    policy = POLICIES[int(rng.integers(len(POLICIES)))]
    params = sample_params(spec.family, rng, spec.max_pieces)
    return decode(spec.family, params, curvatures, policy, spec.max_pieces)


def _refine(trial: Trial, spec: SearchSpec, curvatures: Curvatures, d: Denominators) -> Trial:
    candidate = trial.candidate
    if candidate is None or candidate.params is None:
        return trial

    def objective(params: np.ndarray) -> float:
        try:
            moved = decode(spec.family, params, curvatures, candidate.policy, spec.max_pieces)
        except ValueError:
            return 0.0
        return -_run(trial.index, moved, spec.N, d).ratio

    result = optimize.minimize(
        objective,
        candidate.params,
        method="Nelder-Mead",
        options={"maxfev": max(50, spec.budget // 10), "xatol": 1e-10, "fatol": 1e-12},
    )
    if -result.fun <= trial.ratio:
        return trial
    moved = decode(spec.family, result.x, curvatures, candidate.policy, spec.max_pieces)
    refined = _run(trial.index, moved, spec.N, d)
    return refined if refined.ratio > trial.ratio else trial


def _shortfall_note(
    regime: Regime, N: int, ratio: float, conjectured: bool = False
) -> Optional[str]:
    if N <= 1 and ratio < TIGHT_SMALL_N:
        return f"best ratio {ratio:.4f} below {TIGHT_SMALL_N} at N = {N}"
    if regime in (Regime.P1, Regime.P2, Regime.P3) and N <= 5 and ratio < TIGHT_SUBLINEAR:
        return f"best ratio {ratio:.4f} below {TIGHT_SUBLINEAR} for {regime} at N = {N}"
    if conjectured and N in (2, 3) and ratio < TIGHT_CONJECTURED:
        return (
            f"best ratio {ratio:.4f} below {TIGHT_CONJECTURED} against the conjectured "
            f"bound for {regime} at N = {N}"
        )
    return None


def _witness(trial: Trial) -> Optional[Witness]:
    if trial.trajectory is None or trial.candidate is None:
        return None
    candidate = trial.candidate
    return Witness(
        source=candidate.source,
        instance=candidate.instance.to_dict(),
        x0=candidate.x0.tolist(),
        policy=candidate.policy,
        trajectory=trial.trajectory.to_dict(),
    )


def search_worst(spec: SearchSpec) -> TightnessReport:
    """Largest observed ratio of 1/2 min_k |dx_k|^2 to the rate bound.

    Structured witnesses run first, then ``budget`` random trials drawn from
    per-trial streams of the seed; the best random trials are refined with
    Nelder-Mead. The result depends on ``spec`` alone, whatever ``workers``.
    """
    if spec.budget < 1:
        raise DomainError(f"Search budget must be at least 1, got {spec.budget}")
    if spec.N < 0:
        raise DomainError(f"Number of iterations must be nonnegative, got {spec.N}")
    curvatures = Curvatures.of(*spec.curvatures)
    regime = classify_regime(*curvatures)
    d = _denominators(curvatures, spec.N, spec.denominator_scale)

    # Witnesses may use more pieces than the random trials
    pieces = max(spec.max_pieces, witness_pieces(curvatures, spec.N))
    if pieces > spec.max_pieces:
        logger.debug(f"Raising the witness piece budget from {spec.max_pieces} to {pieces}")
    seeds = structured_witnesses(curvatures, spec.N, spec.family, pieces)
    streams = np.random.SeedSequence(spec.seed).spawn(spec.budget)

    def job(index: int) -> Trial:
        if index < len(seeds):
            return _run(index, seeds[index], spec.N, d)
        seq = streams[index - len(seeds)]
        try:
            candidate = _random_candidate(spec, curvatures, seq)
        except ValueError as e:
            logger.debug(f"Trial {index} could not be decoded: {e}")
            return Trial(index, 0.0, 0.0, failed=True)
        return _run(index, candidate, spec.N, d)

    indices = range(len(seeds) + spec.budget)
    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as executor:
            trials = list(executor.map(job, indices))
    else:
        trials = [job(i) for i in indices]

    ranked = sorted(
        (t for t in trials if t.candidate is not None and t.candidate.params is not None),
        key=lambda t: (-t.ratio, t.index),
    )
    for trial in ranked[: spec.refine]:
        trials[trial.index] = _refine(trial, spec, curvatures, d)

    best = max(trials, key=lambda t: (t.ratio, -t.index))
    proven_ratio = max(t.proven_ratio for t in trials)
    failures = sum(t.proven_ratio > 1 + RATIO_TOL for t in trials)
    note = _shortfall_note(regime.regime, spec.N, best.ratio, not d.bound.proven)
    if note:
        logger.warning(f"{tuple(spec.curvatures)}, {spec.family}: {note}")
    if failures:
        logger.error(f"{failures} trials violate the proven bound at {tuple(spec.curvatures)}")

    return TightnessReport(
        best_ratio=best.ratio,
        proven_ratio=proven_ratio,
        bound_id=d.bound.formula_id,
        proven=d.bound.proven,
        denominator=d.best,
        proven_denominator=d.proven,
        regime=regime,
        witness=_witness(best),
        trials=len(trials),
        failures=failures,
        conjecture_violated=(not d.bound.proven) and best.ratio > 1 + RATIO_TOL,
        note=note,
    )


class ScanRecord(BaseModel):
    mu2_ratio: float
    L2_ratio: float
    N: int
    regime: Optional[Regime] = None
    bound: Optional[FormulaId] = None
    best_ratio: float = 0.0
    proven_ratio: float = 0.0
    status: str = "ok"


class ScanReport(BaseModel):
    records: List[ScanRecord]
    failures: List[ScanRecord]
    conjecture_violations: List[ScanRecord]
    skipped: int = 0

    def to_frame(self) -> pd.DataFrame:
        columns = list(ScanRecord.__fields__)
        return pd.DataFrame([r.dict() for r in self.records], columns=columns)


def default_grid(n: int = 50) -> Tuple[np.ndarray, np.ndarray]:
    """mu2/mu1 and L2/mu1 axes of the regime map at L1/mu1 = 2."""
    return np.linspace(-0.95, 2.5, n), np.linspace(-0.9, 4.0, n)


def violation_scan(
    Ns: Sequence[int],
    trials: int,
    mu2_ratios: Optional[Sequence[float]] = None,
    L2_ratios: Optional[Sequence[float]] = None,
    family: str = DEFAULT_FAMILY,
    seed: int = 0,
    denominator_scale: float = 1.0,
    workers: int = 1,
    progress: bool = True,
) -> ScanReport:
    """Search every valid cell of the (mu2/mu1, L2/mu1) plane with mu1 = 1, L1 = 2.

    A cell whose ratio against the best proven bound exceeds 1 + RATIO_TOL is
    a FAILURE; exceeding only a conjectured bound is recorded separately.
    """
    default_mu2, default_L2 = default_grid()
    mu2_ratios = default_mu2 if mu2_ratios is None else mu2_ratios
    L2_ratios = default_L2 if L2_ratios is None else L2_ratios
    cells = [(float(m), float(l), int(n)) for n in Ns for m in mu2_ratios for l in L2_ratios]
    streams = np.random.SeedSequence(seed).spawn(len(cells))

    records, failures, conjectures, skipped = [], [], [], 0
    for (mu2, L2, N), stream in tqdm(
        list(zip(cells, streams)), desc="Scanning cells", disable=not progress
    ):
        if not mu2 < L2 or 1.0 + mu2 <= 0:
            skipped += 1
            continue
        spec = SearchSpec(
            curvatures=(1.0, 2.0, mu2, L2),
            N=N,
            family=family,
            budget=trials,
            seed=int(stream.generate_state(1)[0]),
            workers=workers,
            refine=0,
            denominator_scale=denominator_scale,
        )
        try:
            report = search_worst(spec)
        except DomainError as e:
            logger.debug(f"Skipping cell {(mu2, L2)}: {e}")
            skipped += 1
            continue

        record = ScanRecord(
            mu2_ratio=mu2,
            L2_ratio=L2,
            N=N,
            regime=report.regime.regime,
            bound=report.bound_id,
            best_ratio=report.best_ratio,
            proven_ratio=report.proven_ratio,
        )
        if report.proven_ratio > 1 + RATIO_TOL:
            record.status = "FAILURE"
            failures.append(record)
        elif report.conjecture_violated:
            record.status = "conjecture-violation"
            conjectures.append(record)
        records.append(record)

    if failures:
        logger.error(f"{len(failures)} cells violate a proven bound")
    return ScanReport(
        records=records,
        failures=failures,
        conjecture_violations=conjectures,
        skipped=skipped,
    )
