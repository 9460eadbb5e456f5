"""Tests for the DCA and PGD runners and the trajectory record."""
from fractions import Fraction

import numpy as np
import pytest

from src.engine import (
    DCInstance,
    Trajectory,
    best_gradient_mapping,
    dc_split_of_pgd,
    dca_run,
    gradient_residual,
    map_pgd_to_dc,
    pgd_run,
    pgd_step,
    schedule_curvature_shift,
    shift_instance,
)
from src.errors import DomainError, ScheduleError, StepsizeError
from src.oracles import (
    CurvatureBounds,
    Curvatures,
    PiecewiseQuadratic1D,
    QuadraticOracle,
    SubgradientPolicy,
    check_interpolation,
)
from src.worstcase.families import decode, sample_params

from tests.conftest import interpolation_tol


def quadratic_instance() -> DCInstance:
    f1 = QuadraticOracle([[1.0]], bounds=CurvatureBounds(1.0, 2.0))
    f2 = QuadraticOracle([[0.5]], bounds=CurvatureBounds(0.5, 3.0))
    return DCInstance(f1, f2)


def pgd_pair():
    phi = QuadraticOracle([[1.0]], b=[-2.0], bounds=CurvatureBounds(-1.0, 1.0))
    h = PiecewiseQuadratic1D.from_profile([0.0], [0.0, 0.0], [2.0], -1.0)
    return phi, h


def test_dca_closed_form():
    traj = dca_run(quadratic_instance(), [1.0], 3)
    assert traj.N == 3
    assert len(traj) == 5
    np.testing.assert_allclose(traj.points[:, 0], [1.0, 0.5, 0.25, 0.125, 0.0625])
    # G_k is the gradient of F = x^2/4
    np.testing.assert_allclose(traj.G[:, 0], 0.5 * traj.points[:, 0])
    assert traj.delta == pytest.approx(0.25 * (1.0 - 0.0625**2))
    assert traj.meta.curvatures == [1.0, 2.0, 0.5, 3.0]
    assert traj.curvatures == Curvatures(1.0, 2.0, 0.5, 3.0)

    k, gap = best_gradient_mapping(traj)
    assert k == 3
    assert gap == pytest.approx(0.0625**2)
    k, residual = gradient_residual(traj)
    assert k == 4
    assert residual == pytest.approx(0.03125)


def test_instance_validation():
    with pytest.raises(DomainError):
        DCInstance(QuadraticOracle([[-1.0]]), QuadraticOracle([[1.0]]))
    with pytest.raises(DomainError):
        DCInstance(
            QuadraticOracle([[0.5]], bounds=CurvatureBounds(0.5, 1.0)),
            QuadraticOracle([[0.0]], bounds=CurvatureBounds(-0.5, 1.0)),
        )
    with pytest.raises(ValueError):
        DCInstance(QuadraticOracle(np.eye(2)), QuadraticOracle([[1.0]]))

    inst = quadratic_instance()
    with pytest.raises(DomainError):
        dca_run(inst, [1.0], -1)
    with pytest.raises(ValueError):
        dca_run(inst, [1.0], 2, shifts=[0.1, 0.2])


def test_instance_roundtrip():
    inst = quadratic_instance()
    restored = DCInstance.from_dict(inst.to_dict())
    assert restored.instance_id == inst.instance_id
    assert restored.curvatures == inst.curvatures


def test_trajectory_roundtrip_and_frame():
    traj = dca_run(quadratic_instance(), [1.0], 2)
    restored = Trajectory.from_dict(traj.to_dict())
    np.testing.assert_array_equal(restored.points, traj.points)
    np.testing.assert_array_equal(restored.g2, traj.g2)
    assert restored.meta == traj.meta

    frame = traj.to_frame([0.1, None])
    assert list(frame.columns) == ["k", "x", "F", "g1", "g2", "gap_to_bound"]
    assert len(frame) == 4
    assert frame["gap_to_bound"].iloc[0] == 0.1
    assert frame["x"].iloc[1] == "0.5"


def test_constant_shift_equals_shifted_instance():
    inst = quadratic_instance()
    lam = 0.5
    shifted = dca_run(inst, [1.0], 3, shifts=[lam] * 4)
    direct = dca_run(shift_instance(inst, lam), [1.0], 3)
    np.testing.assert_allclose(shifted.points, direct.points)
    np.testing.assert_allclose(shifted.fvals, [inst.F(p) for p in shifted.points])
    assert shifted.meta.shifts == [lam] * 4


def test_pgd_matches_dca_on_split():
    phi, h = pgd_pair()
    gamma = 0.5
    pgd = pgd_run(phi, h, gamma, [3.0], 4)
    dca = dca_run(dc_split_of_pgd(phi, h, gamma), [3.0], 4)
    np.testing.assert_allclose(pgd.points, dca.points, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(pgd.fvals, dca.fvals, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(pgd.G, dca.G, rtol=1e-12, atol=1e-12)
    assert pgd.meta.curvatures == dca.meta.curvatures == [2.0, float("inf"), 1.0, 3.0]
    assert pgd.points[-1, 0] == pytest.approx(1.0 + 2.0 ** -4)


def test_pgd_validation():
    phi, h = pgd_pair()
    with pytest.raises(StepsizeError):
        pgd_run(phi, h, 2.5, [0.0], 2)
    with pytest.raises(ValueError):
        pgd_run(phi, h, [0.5, 0.5], [0.0], 2)
    with pytest.raises(DomainError):
        pgd_run(h, phi, 0.5, [0.0], 2)
    with pytest.raises(DomainError):
        map_pgd_to_dc(phi.bounds, h.bounds, 0.0)


def test_map_pgd_to_dc():
    c = map_pgd_to_dc(CurvatureBounds(-1, 1), CurvatureBounds(0), Fraction(1, 2))
    assert c == (2, float("inf"), 1, 3)


def test_schedule_curvature_shift():
    assert schedule_curvature_shift(1.0, 3.0, 0.5, [0.5, 1.0]) == [-1.0, 0.0]
    exact = schedule_curvature_shift(Fraction(1), 3, Fraction(1, 2), [Fraction(1, 2)])
    assert exact == [Fraction(-1)]

    with pytest.raises(ScheduleError):
        schedule_curvature_shift(1.0, 3.0, 0.5, [0.0])
    with pytest.raises(ScheduleError):
        schedule_curvature_shift(1.0, 3.0, 0.5, [0.5, 10.0])
    with pytest.raises(DomainError):
        schedule_curvature_shift(0.0, 3.0, 0.5, [0.5])


@pytest.mark.parametrize(
    "family", ["quadratic-1d", "pw-quadratic-1d", "quadratic-2d", "pw-quadratic-2d"]
)
def test_iterates_interpolate_their_classes(family, rng):
    curvatures = Curvatures.of(1.0, 2.0, 0.5, 3.0)
    for _ in range(5):
        candidate = decode(family, sample_params(family, rng), curvatures)
        for policy in SubgradientPolicy:
            traj = dca_run(candidate.instance, candidate.x0, 4, policy)
            f1, f2 = candidate.instance.f1, candidate.instance.f2
            tol = interpolation_tol(traj)
            assert check_interpolation(f1.bounds, traj.samples(1), tol) == []
            assert check_interpolation(f2.bounds, traj.samples(2), tol) == []


def random_pgd_problem(rng):
    a = rng.uniform(-2.0, 2.0)
    phi = QuadraticOracle([[a]], b=[rng.normal()], bounds=CurvatureBounds(a - 1.0, a + 1.0))
    curvatures = rng.uniform(0.0, 2.0, size=2)
    h = PiecewiseQuadratic1D.from_profile(
        [rng.normal()], curvatures, [rng.uniform(0.1, 2.0)], rng.normal()
    )
    spread = phi.bounds.L - h.bounds.mu
    limit = 2 / spread if spread > 0 else 4.0
    gamma = limit * rng.uniform(0.05, 0.95)
    return phi, h, gamma


def test_pgd_matches_dca_on_random_problems(rng):
    for _ in range(200):
        phi, h, gamma = random_pgd_problem(rng)
        x0 = [rng.normal(0.0, 3.0)]
        N = int(rng.integers(1, 11))
        pgd = pgd_run(phi, h, gamma, x0, N)
        dca = dca_run(dc_split_of_pgd(phi, h, gamma), x0, N)
        scale = 1.0 + float(np.max(np.abs(pgd.points)))
        np.testing.assert_allclose(pgd.points, dca.points, rtol=0, atol=1e-12 * scale)


def test_pgd_step_is_invariant_under_curvature_transfer(rng):
    # (phi, h, gamma) and (phi - lam|.|^2/2, h + lam|.|^2/2, 1/(1/gamma - lam)) agree
    for _ in range(200):
        phi, h, gamma = random_pgd_problem(rng)
        lo = -h.bounds.mu
        lam = lo + (1 / gamma - lo) * rng.uniform(0.05, 0.95)
        gamma_shifted = 1 / (1 / gamma - lam)
        phi_shifted, h_shifted = phi.shift(lam), h.shift(-lam)
        assert h_shifted.bounds.mu >= 0

        x = [rng.normal(0.0, 3.0)]
        expected = pgd_step(phi, h, gamma, x)
        actual = pgd_step(phi_shifted, h_shifted, gamma_shifted, x)
        scale = 1.0 + abs(float(expected[0]))
        np.testing.assert_allclose(actual, expected, rtol=0, atol=1e-12 * scale)

        before = map_pgd_to_dc(phi.bounds, h.bounds, gamma)
        after = map_pgd_to_dc(phi_shifted.bounds, h_shifted.bounds, gamma_shifted)
        for old, new in zip(before, after):
            assert new == pytest.approx(old, rel=1e-12, abs=1e-12)


def test_pgd_schedule_records_split_per_step():
    phi, h = pgd_pair()
    gammas = [0.5, 0.25, 1.0]
    traj = pgd_run(phi, h, gammas, [3.0], 2)
    assert traj.meta.stepsizes == gammas
    x = traj.points[:, 0]
    for k, gamma in enumerate(gammas):
        assert traj.g2[k, 0] == pytest.approx(x[k] / gamma - float(phi.subgradient([x[k]])[0]))
        assert traj.f1vals[k + 1] == pytest.approx(h.eval([x[k + 1]]) + x[k + 1] ** 2 / (2 * gamma))
        assert traj.g1[k + 1, 0] == traj.g2[k, 0]
    assert traj.f2vals[-1] == pytest.approx(x[-1] ** 2 / 2 - phi.eval([x[-1]]))
    np.testing.assert_allclose(traj.fvals, [phi.eval([p]) + h.eval([p]) for p in x])
