"""Tests for the instance families, the closed-form witnesses and the worst-case search."""
import numpy as np
import pytest

from src.engine import dca_run
from src.errors import DomainError
from src.oracles import CurvatureBounds, Curvatures, check_interpolation
from src.worstcase import (
    FAMILIES,
    SearchSpec,
    decode,
    gap_ratio,
    sample_params,
    search_worst,
    structured_witnesses,
    violation_scan,
)
from src.rates import Regime, best_rate_bound, sublinear_rate_bound
from src.worstcase.families import DEFAULT_FAMILY, clip_curvature, layout
from src.worstcase.search import RATIO_TOL, TIGHT_CONJECTURED, _shortfall_note
from src.worstcase.witnesses import p3_start, p3_witness, witness_pieces

from tests.conftest import SAMPLERS, interpolation_tol, sample_p3

P1 = (1.0, 2.0, 0.5, 3.0)
P2 = (0.5, 3.0, 1.0, 2.0)
P3 = (1.0, 2.0, -0.5, 3.0)
P4 = (1.0, 2.0, -0.4, 0.9)
P5 = (1.0, 2.0, -0.8, 3.0)
P5_LINEAR = (1.0, 2.0, -0.8, 0.5)
P6 = (0.5, 1.0, 2.0, 3.0)


def test_clip_curvature():
    assert clip_curvature(-3.0, CurvatureBounds(1, 2)) == 1.0
    assert clip_curvature(0.5, CurvatureBounds(1, 2)) == 1.5
    assert clip_curvature(7.0, CurvatureBounds(1, 2)) == 2.0
    assert clip_curvature(2.0, CurvatureBounds(-1)) == pytest.approx(3.0)


def test_layout():
    assert len(layout("quadratic-1d")) == 3
    assert len(layout("pw-quadratic-1d", 3)) == 2 * 8 + 1
    assert len(layout("pw-quadratic-1d", 1)) == 2 * 2 + 1
    assert len(layout("quadratic-2d")) == 8
    assert len(layout("pw-quadratic-2d", 3)) == 2 * 9 + 2
    with pytest.raises(ValueError, match="Invalid family name"):
        layout("cubic")
    with pytest.raises(ValueError):
        decode("quadratic-1d", [0.5, 0.5], Curvatures.of(*P1))


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("name", list(SAMPLERS))
def test_decoded_instances_are_valid(family, name, rng):
    c = SAMPLERS[name](rng)
    for _ in range(5):
        candidate = decode(family, sample_params(family, rng), c)
        inst = candidate.instance
        assert inst.curvatures == tuple(float(v) for v in c)
        traj = dca_run(inst, candidate.x0, 2, candidate.policy)
        tol = interpolation_tol(traj)
        assert check_interpolation(inst.f1.bounds, traj.samples(1), tol) == []


def test_nonsmooth_family_has_kinks(rng):
    c = Curvatures.of(1.0, "inf", 0.5, "inf")
    params = sample_params("pw-quadratic-1d", rng)
    candidate = decode("pw-quadratic-1d", params, c)
    assert not candidate.instance.f1.bounds.smooth
    assert len(candidate.instance.f1.breakpoints) == 2


@pytest.mark.parametrize(
    "point,names",
    [
        (P1, ["quadratic-mu2", "quadratic-L2", "p1"]),
        (P4, ["quadratic-mu2", "quadratic-L2", "p4"]),
        (P6, ["quadratic-mu2", "quadratic-L2", "p6"]),
    ],
)
def test_structured_witnesses(point, names):
    seeds = structured_witnesses(Curvatures.of(*point), 1, "pw-quadratic-1d")
    assert [s.source for s in seeds] == names


def test_witnesses_respect_the_family():
    # The p1 witness needs 2N + 1 pieces and drops out of a 3-piece family at N = 2
    sources = [s.source for s in structured_witnesses(Curvatures.of(*P1), 2, "pw-quadratic-1d")]
    assert "p1" not in sources
    assert [s.source for s in structured_witnesses(Curvatures.of(*P1), 1, "quadratic-2d")] == [
        "quadratic-mu2",
        "quadratic-L2",
    ]


def test_gap_ratio_of_flat_run():
    seeds = structured_witnesses(Curvatures.of(*P1), 1, "quadratic-1d")
    traj = dca_run(seeds[0].instance, np.zeros(1), 1)
    assert gap_ratio(traj, 10.0) == 0.0


def test_search_spec_validation():
    with pytest.raises(ValueError):
        SearchSpec(curvatures=P1, N=1, family="cubic")
    with pytest.raises(DomainError):
        search_worst(SearchSpec(curvatures=P1, N=1, budget=0))
    with pytest.raises(DomainError):
        search_worst(SearchSpec(curvatures=(1.0, 2.0, -1.0, 3.0), N=1, budget=2))


def test_search_is_deterministic():
    spec = SearchSpec(curvatures=P5, N=2, budget=15, seed=7, refine=1)
    first, second = search_worst(spec), search_worst(spec)
    assert first.best_ratio == second.best_ratio
    assert first.witness == second.witness
    threaded = search_worst(spec.copy(update={"workers": 3}))
    assert threaded.best_ratio == first.best_ratio


@pytest.mark.parametrize("point", [P1, P2, P3, P4, P5, P6])
def test_one_step_witnesses_are_tight(point):
    report = search_worst(SearchSpec(curvatures=point, N=1, budget=10, seed=1, refine=0))
    assert report.best_ratio >= 0.95
    assert report.best_ratio <= 1 + RATIO_TOL
    assert report.failures == 0
    assert report.note is None
    assert report.witness is not None


@pytest.mark.parametrize("point", [P1, P4, P5_LINEAR, P3, P2])
@pytest.mark.parametrize("family", FAMILIES)
def test_proven_bounds_hold(point, family):
    for N in (1, 3):
        spec = SearchSpec(curvatures=point, N=N, family=family, budget=30, seed=N, refine=1)
        report = search_worst(spec)
        assert report.proven_ratio <= 1 + RATIO_TOL
        assert report.failures == 0


def test_search_reports_regime_and_bound():
    report = search_worst(SearchSpec(curvatures=P5, N=4, budget=5))
    assert report.regime.regime.value == "p5"
    assert report.bound_id.value == "conjecture-nonconvex"
    assert not report.proven
    assert report.denominator >= report.proven_denominator


def test_corrupted_denominator_is_caught():
    spec = SearchSpec(curvatures=P1, N=1, budget=5, refine=0, denominator_scale=1.1)
    report = search_worst(spec)
    assert report.failures > 0
    assert report.proven_ratio > 1 + RATIO_TOL


def test_violation_scan():
    report = violation_scan(
        [1], 4, mu2_ratios=[-1.0, 0.5, -0.8], L2_ratios=[0.6, 3.0], progress=False
    )
    # mu2/mu1 = -1 is outside the domain in both columns
    assert report.skipped == 2
    assert len(report.records) == 4
    assert report.failures == []
    frame = report.to_frame()
    assert list(frame.columns) == [
        "mu2_ratio", "L2_ratio", "N", "regime", "bound", "best_ratio", "proven_ratio", "status"
    ]
    assert len(frame) == 4


def test_violation_scan_flags_failures():
    report = violation_scan(
        [1], 3, mu2_ratios=[0.5], L2_ratios=[3.0], denominator_scale=1.1, progress=False
    )
    assert len(report.failures) == 1
    assert report.failures[0].status == "FAILURE"


@pytest.mark.slow
def test_default_grid_scan():
    report = violation_scan([1, 2], 10, progress=False)
    assert report.failures == []


def test_smooth_profiles_always_decode(rng):
    c = Curvatures.of(*P1)
    for _ in range(1000):
        candidate = decode("pw-quadratic-1d", sample_params("pw-quadratic-1d", rng), c)
        assert candidate.instance.f1.bounds.smooth
        assert not np.any(candidate.instance.f2.jumps)


def test_plane_family_witnesses():
    c = Curvatures.of(*P3)
    sources = [s.source for s in structured_witnesses(c, 1, "pw-quadratic-2d")]
    assert sources == ["quadratic-mu2", "quadratic-L2", "p3"]
    assert "p3" not in [s.source for s in structured_witnesses(c, 1, "pw-quadratic-1d")]

    seeds = structured_witnesses(Curvatures.of(*P1), 1, DEFAULT_FAMILY)
    assert [s.source for s in seeds] == ["quadratic-mu2", "quadratic-L2", "p1"]
    assert all(s.x0.shape == (2,) and s.x0[1] == 0.0 for s in seeds)


def test_p3_witness_is_tight_at_one_step(rng):
    for _ in range(20):
        c = sample_p3(rng)
        traj = dca_run(p3_witness(c, 1), p3_start(c), 1)
        steps = np.sum(traj.dx**2, axis=1)
        assert steps[0] == pytest.approx(steps[1], rel=1e-9)
        denominator = sublinear_rate_bound(*c, 1, 1.0).denominator
        assert gap_ratio(traj, denominator) == pytest.approx(1.0, rel=1e-8)


@pytest.mark.parametrize("point,N", [(P5, 1), (P5_LINEAR, 1), (P5_LINEAR, 2), (P5_LINEAR, 3)])
def test_contracting_quadratic_is_tight_for_p5(point, N):
    c = Curvatures.of(*point)
    seed = structured_witnesses(c, N, "pw-quadratic-1d")[0]
    assert seed.source == "quadratic-mu2"
    traj = dca_run(seed.instance, seed.x0, N)
    denominator = best_rate_bound(c, N, 1.0).denominator
    assert gap_ratio(traj, denominator) == pytest.approx(1.0, rel=1e-9)


def test_witness_piece_budget():
    assert witness_pieces(Curvatures.of(*P1), 2) == 5
    assert witness_pieces(Curvatures.of(*P3), 4) == 2
    assert witness_pieces(Curvatures.of(*P5), 2) == 1


@pytest.mark.parametrize("point,N", [(P1, 2), (P1, 3), (P2, 2)])
def test_multi_step_witnesses_beat_the_piece_limit(point, N):
    report = search_worst(SearchSpec(curvatures=point, N=N, budget=3, refine=0))
    assert report.best_ratio >= 0.95
    assert report.best_ratio <= 1 + RATIO_TOL
    assert report.witness.source == ("p1" if point == P1 else "p2")
    assert report.note is None


def test_shortfall_notes():
    assert _shortfall_note(Regime.P1, 1, 0.9) is not None
    assert _shortfall_note(Regime.P3, 4, 0.85) is not None
    assert _shortfall_note(Regime.P5, 2, 0.881, conjectured=True) is None
    note = _shortfall_note(Regime.P5, 3, 0.706, conjectured=True)
    assert note is not None and str(TIGHT_CONJECTURED) in note
    assert _shortfall_note(Regime.P5, 3, 0.706) is None
    assert _shortfall_note(Regime.P5, 4, 0.706, conjectured=True) is None


def test_conjectured_shortfall_is_reported():
    spec = SearchSpec(curvatures=P5, N=3, family="pw-quadratic-1d", budget=10, seed=1, refine=0)
    report = search_worst(spec)
    assert not report.proven
    assert report.best_ratio < TIGHT_CONJECTURED
    assert report.note is not None and "conjectured" in report.note
