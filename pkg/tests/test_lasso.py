import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barron_icl import lasso
from barron_icl.errors import DimensionMismatch, NegativeThreshold, NoConvergence, ValidationError


def random_problem(seed, N=40, n=12, lam=0.05):
    rng = np.random.default_rng(seed)
    Phi = np.column_stack([rng.uniform(size=(N, n)), np.ones(N)])
    y = Phi[:, :3] @ np.array([0.8, -0.5, 0.3]) + 0.05 * rng.normal(size=N)
    return lasso.LassoProblem(Phi, y, lam)


# soft threshold


@pytest.mark.parametrize("z, kappa, expected", [(0.5, 1.0, 0.0), (-1.0, 0.3, -0.7), (1.0, 1.0, 0.0), (2.5, 0.5, 2.0)])
def test_soft_threshold_values(z, kappa, expected):
    assert lasso.soft_threshold(z, kappa) == pytest.approx(expected, abs=1e-15)


@given(st.floats(-1e8, 1e8, allow_nan=False))
def test_soft_threshold_identity_at_zero(z):
    assert lasso.soft_threshold(z, 0.0) == z


def test_negative_threshold_is_rejected():
    with pytest.raises(NegativeThreshold):
        lasso.soft_threshold(1.0, -0.1)


@given(st.floats(-1e3, 1e3), st.floats(0, 1e3))
def test_soft_threshold_solves_scalar_prox(z, kappa):
    # x = ST(z) iff z - x lies in kappa * subdifferential of |.| at x
    x = lasso.soft_threshold(z, kappa)
    g = z - x
    tol = 1e-9 * max(1.0, abs(z), kappa)
    if x == 0:
        assert abs(g) <= kappa + tol
    else:
        assert abs(g - kappa * math.copysign(1.0, x)) <= tol


# problem validation


def test_problem_validation():
    with pytest.raises(ValidationError):
        lasso.LassoProblem([[0.5, 0.9]], [1.0], 0.1)  # last column is not ones
    with pytest.raises(ValidationError):
        lasso.LassoProblem([[1.5, 1.0]], [1.0], 0.1)
    with pytest.raises(DimensionMismatch):
        lasso.LassoProblem([[0.5, 1.0]], [1.0, 2.0], 0.1)
    with pytest.raises(ValidationError):
        lasso.LassoProblem([[0.5, 1.0]], [1.0], -0.1)


def test_default_step_is_half_inverse_width():
    p = lasso.LassoProblem(np.ones((3, 5)), np.zeros(3), 0.0)
    assert p.eta == 1.0 / 10.0


def test_problem_round_trip():
    p = random_problem(0)
    back = lasso.LassoProblem.from_dict(p.to_dict())
    np.testing.assert_array_equal(back.Phi, p.Phi)
    assert (back.lam, back.eta) == (p.lam, p.eta)


# objective


def test_objective_at_zero_is_mean_square_label():
    p = random_problem(1)
    assert lasso.lasso_objective(p, np.zeros(p.p)) == pytest.approx(np.mean(p.y**2), rel=1e-14)


def test_objective_hand_example():
    p = lasso.LassoProblem([[1.0, 1.0], [0.0, 1.0]], [1.0, 0.0], 0.1)
    # residuals (1 - 1, 0 - 0) vanish; penalty 0.1 * 1
    assert lasso.lasso_objective(p, [1.0, 0.0]) == 0.1


def test_objective_zero_for_interpolant():
    Phi = np.array([[1.0, 1.0], [0.25, 1.0]])
    y = np.array([2.0, -1.0])
    p = lasso.LassoProblem(Phi, y, 0.0)
    assert lasso.lasso_objective(p, np.linalg.solve(Phi, y)) == pytest.approx(0.0, abs=1e-28)


# ISTA steps and paths


def test_step_keeps_a_fixed_point():
    Phi = np.array([[1.0, 1.0], [0.5, 1.0]])
    rho = np.array([0.4, -0.2])
    p = lasso.LassoProblem(Phi, Phi @ rho, 0.0)
    np.testing.assert_allclose(lasso.ista_step(p, rho, np.zeros(2)), rho, atol=1e-16)


def test_one_dimensional_step():
    p = lasso.LassoProblem([[1.0]], [1.0], 0.0, eta=0.5)
    assert lasso.ista_step(p, [0.0]).tolist() == [1.0]


def test_step_adds_injected_residual():
    p = random_problem(2)
    rho = np.linspace(0, 0.1, p.p)
    e = np.full(p.p, 1e-3)
    np.testing.assert_allclose(lasso.ista_step(p, rho, e) - lasso.ista_step(p, rho), e, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.5))
def test_step_satisfies_prox_optimality(seed, lam):
    p = random_problem(seed, lam=lam)
    rho = np.random.default_rng(seed).normal(scale=0.3, size=p.p)
    z = rho - p.eta * lasso.smooth_gradient(p, rho)
    x = lasso.ista_step(p, rho)
    g = (z - x) / p.eta
    on = x != 0
    assert np.all(np.abs(g[on] - lam * np.sign(x[on])) <= 1e-9)
    assert np.all(np.abs(g[~on]) <= lam + 1e-9)


def test_zero_steps():
    traj = lasso.run_ista(random_problem(3), 0)
    assert traj.iterates.shape == (1, 13)
    assert np.all(traj.iterates[0] == 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.3))
def test_exact_ista_is_monotone(seed, lam):
    traj = lasso.run_ista(random_problem(seed, lam=lam), 60)
    assert np.all(np.diff(traj.objectives) <= 1e-12)


def test_residual_sources_agree():
    p = random_problem(4)
    table = np.random.default_rng(0).normal(scale=1e-4, size=(5, p.p))
    a = lasso.run_ista(p, 5, table)
    b = lasso.run_ista(p, 5, lambda t, prev: table[t - 1])
    np.testing.assert_array_equal(a.iterates, b.iterates)
    np.testing.assert_array_equal(a.injected_residuals, table)


def test_exact_path_matches_step_loop():
    p = random_problem(5)
    traj = lasso.run_ista(p, 20)
    rho = np.zeros(p.p)
    for t in range(20):
        rho = lasso.ista_step(p, rho)
    np.testing.assert_allclose(traj.iterates[-1], rho, atol=1e-14)


def test_residual_table_shape_checked():
    with pytest.raises(DimensionMismatch):
        lasso.run_ista(random_problem(6), 3, np.zeros((2, 13)))


def test_trajectory_csv_round_trip():
    p = random_problem(7)
    traj = lasso.run_ista(p, 4)
    text = traj.to_csv(reference_objective=0.0)
    rows = lasso.read_trajectory_csv(text)
    assert [r["t"] for r in rows] == [0, 1, 2, 3, 4]
    assert [r["objective"] for r in rows] == traj.objectives.tolist()
    assert rows[2]["gap_vs_oracle"] == traj.objectives[2]
    buf = io.StringIO()
    traj.to_csv(buf)
    assert lasso.read_trajectory_csv(buf.getvalue())[0]["gap_vs_oracle"] is None


# reference solver and KKT residual


def test_oracle_zero_for_huge_penalty():
    p = random_problem(8)
    big = 2.1 * np.max(np.abs((2.0 / p.N) * p.Phi.T @ p.y))
    q = lasso.LassoProblem(p.Phi, p.y, big)
    np.testing.assert_array_equal(lasso.oracle_solve(q), np.zeros(p.p))
    assert lasso.kkt_residual(q, np.zeros(p.p)) == 0.0


def test_oracle_least_squares_when_unpenalized():
    rng = np.random.default_rng(9)
    Phi = np.column_stack([rng.uniform(size=(3, 2)), np.ones(3)])
    y = rng.normal(size=3)
    p = lasso.LassoProblem(Phi, y, 0.0)
    np.testing.assert_allclose(lasso.oracle_solve(p, tol=1e-10), np.linalg.solve(Phi, y), atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_oracle_meets_tolerance(seed):
    p = random_problem(seed, lam=0.02)
    rho = lasso.oracle_solve(p, tol=1e-8)
    assert lasso.kkt_residual(p, rho) <= 1e-8


def test_oracle_reports_non_convergence():
    p = random_problem(10, lam=0.001)
    with pytest.raises(NoConvergence) as info:
        lasso.oracle_solve(p, tol=1e-14, max_iter=5, check_every=5)
    assert info.value.max_iter == 5


def test_kkt_without_penalty_is_gradient_norm():
    p = random_problem(11, lam=0.0)
    rho = np.linspace(-0.2, 0.2, p.p)
    assert lasso.kkt_residual(p, rho) == pytest.approx(np.abs(lasso.smooth_gradient(p, rho)).max(), rel=1e-14)


def test_gradient_matches_finite_differences():
    p = random_problem(12)
    rho = np.random.default_rng(12).normal(scale=0.2, size=p.p)

    def smooth(r):
        res = p.y - p.Phi @ r
        return res @ res / p.N

    h = 1e-6
    fd = np.array([(smooth(rho + h * e) - smooth(rho - h * e)) / (2 * h) for e in np.eye(p.p)])
    np.testing.assert_allclose(lasso.smooth_gradient(p, rho), fd, atol=1e-6)


def test_ista_gap_bound_holds():
    p = random_problem(13)
    star = lasso.oracle_solve(p)
    best = lasso.lasso_objective(p, star)
    traj = lasso.run_ista(p, 50)
    assert traj.objectives[-1] - best <= lasso.ista_gap_bound(p, star, 50)


# penalty level


def test_default_lambda_plug_in():
    assert lasso.default_lambda(math.e, 0.0, 1.0, 0.0, 0.0) == pytest.approx(0.6065306597126334, rel=1e-15)


def test_default_lambda_is_linear_in_c1():
    a = lasso.default_lambda(100, 0.1, 2.0, 0.1, 0.2, c1=1.0)
    assert lasso.default_lambda(100, 0.1, 2.0, 0.1, 0.2, c1=2.0) == pytest.approx(2 * a, rel=1e-15)


@given(st.integers(2, 10**6), st.floats(0, 5), st.floats(0.01, 5))
def test_default_lambda_statistical_term_only(N, sigma, C):
    expected = math.sqrt(math.log(N) / N) * (C + sigma)
    assert lasso.default_lambda(N, sigma, C, 0.0, 0.0) == pytest.approx(expected, rel=1e-12)


def test_default_lambda_zero_class():
    assert lasso.default_lambda(10, 0.5, 0.0, 0.3, 0.3) == pytest.approx(math.sqrt(math.log(10) / 10) * 0.5)
