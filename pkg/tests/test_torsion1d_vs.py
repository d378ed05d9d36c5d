import math

import numpy as np
import pytest

from torsionpinn.fd_oracle import solve_ode_1d
from torsionpinn.network import NetworkSpec, forward_jets, init_params
from torsionpinn.optim import total_loss
from torsionpinn.torsion1d_vs import (FLUX, VSProblem, boundary_terms, exact_profile, exact_solution,
                                      neumann_target, polar_moment, polar_moment_jet, radius, run_vs_case,
                                      scaled_operator, scaled_residual, unscaled_residual)

SPEC = NetworkSpec(1, (32, 32))


def params(seed=0):
    rng = np.random.default_rng(seed)
    return init_params(SPEC, seed) + 0.1 * rng.standard_normal(SPEC.n_params)


def test_profile_values():
    assert polar_moment(0.0) == pytest.approx(1 - 0.8 ** 4, abs=1e-12)
    assert polar_moment(1.0) == pytest.approx(16 - 1.8 ** 4, abs=1e-12)
    assert radius(0.5) == pytest.approx(1.5)
    x = np.linspace(0, 1, 11)
    r = radius(x)
    np.testing.assert_allclose(polar_moment(x), r ** 4 - (r - 0.2) ** 4, rtol=1e-12)


def test_profile_derivatives_match_finite_differences():
    x = np.linspace(0.4, 0.6, 9)
    J, Jp, Jpp = polar_moment_jet(x)
    h = 1e-5
    np.testing.assert_allclose(Jp, (polar_moment(x + h) - polar_moment(x - h)) / (2 * h), rtol=1e-6, atol=1e-6)
    h = 1e-4
    fd2 = (polar_moment(x + h) - 2 * J + polar_moment(x - h)) / h ** 2
    np.testing.assert_allclose(Jpp, fd2, rtol=1e-3, atol=1e-1)


def test_neumann_targets():
    assert neumann_target(1) == pytest.approx(32 / (math.pi * 5.5024), rel=1e-9)
    assert neumann_target(4) == pytest.approx(neumann_target(1) / 4, rel=1e-14)


def test_exact_solution_properties():
    assert exact_solution(0.0) == 0.0
    # first integral: J phi' = 32/pi
    x, h = 0.5, 1e-5
    slope = (exact_solution(x + h, 1e-13) - exact_solution(x - h, 1e-13)) / (2 * h)
    assert polar_moment(x) * slope == pytest.approx(FLUX, rel=1e-6)
    with pytest.raises(ValueError):
        exact_solution(1.5)
    xs, phi = exact_profile(101)
    assert np.all(np.diff(phi) > 0)
    assert phi[-1] == pytest.approx(exact_solution(1.0), rel=1e-9)
    # tolerance consistency
    assert exact_solution(0.7, 1e-8) == pytest.approx(exact_solution(0.7, 1e-12), abs=1e-7)


def test_exact_solution_matches_fd_oracle():
    sol = solve_ode_1d(polar_moment, (0.0, neumann_target(1)), 4000)
    xs = sol.x[::400]
    ref = np.array([exact_solution(float(x)) for x in xs])
    np.testing.assert_allclose(sol.phi[::400], ref, rtol=1e-3, atol=1e-6)
    np.testing.assert_allclose(sol.fluxes(), FLUX, rtol=1e-9)


def test_scaled_residual_reduces_and_transports():
    p = params(1)
    x = np.linspace(0.05, 0.95, 13)
    np.testing.assert_allclose(scaled_residual(p, x, 1.0), unscaled_residual(p, x), rtol=1e-12)
    # if v(xbar) = u(xbar / N) the scaled operator equals the physical one
    N = 4.0
    rng = np.random.default_rng(0)
    w = rng.standard_normal(5)
    k = np.arange(1, 6)
    u1 = np.cos(np.outer(x, k)) @ (w * k)
    u2 = -np.sin(np.outer(x, k)) @ (w * k * k)
    J, Jp, _ = polar_moment_jet(x)
    physical = Jp * u1 + J * u2
    scaled = scaled_operator(u1 / N, u2 / N ** 2, N * x, N)
    np.testing.assert_allclose(scaled, physical, rtol=1e-12, atol=1e-12)


def test_boundary_terms_and_zero_network():
    zero = np.zeros(SPEC.n_params)
    d, n = boundary_terms(zero, 4.0)
    assert d == 0.0 and n == pytest.approx(-neumann_target(4.0))
    prob = VSProblem(4.0)
    batch = prob.sample(np.random.default_rng(0))
    assert batch.interior.shape == (100, 1) and np.all(batch.interior <= 4.0)
    total, lr, lb = total_loss(prob, zero, batch)
    assert lr == 0.0
    assert lb == pytest.approx(neumann_target(4.0) ** 2)
    assert total == pytest.approx(20 * lb)
    assert prob.weights.lambda_r == pytest.approx(1 / 256)


def test_residuals_match_jets():
    prob = VSProblem(2.0)
    p = params(3)
    xbar = np.array([[0.3], [1.1], [1.9]])
    jet = forward_jets(p, SPEC, xbar)
    J, Jp, _ = polar_moment_jet(xbar[:, 0] / 2.0)
    np.testing.assert_allclose(prob.residuals(p, xbar), 2 * Jp * jet.d1[0] + 4 * J * jet.d2[0], rtol=1e-12)


def test_validation():
    with pytest.raises(ValueError):
        VSProblem(0.5)
    with pytest.raises(ValueError):
        VSProblem(2.0, n_collocation=0)


def test_short_run_writes_outputs(tmp_path):
    res = run_vs_case(4.0, seed=0, epochs=300, lr=1e-2, outdir=tmp_path, eval_stride=100)
    assert np.isfinite(res.rel_l2)
    assert res.report.records[-1].loss_total < res.report.records[0].loss_total
    lines = (tmp_path / "solution.csv").read_text().splitlines()
    assert lines[0] == "x,phi_pred,phi_exact" and len(lines) == 1001
    assert (tmp_path / "errors.csv").exists()
    assert res.problem.first_integral_deviation(res.params) >= 0
