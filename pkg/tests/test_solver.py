import math

import numpy as np
import pytest

import qebsdej as q
from qebsdej.oracles import girsanov_tilt_exact, girsanov_tilt_mc
from qebsdej.semimartingale import martingale_regression_test
from qebsdej.solver import (EnsembleMismatchError, FeatureMap,
                            NonContractionError)


@pytest.fixture(scope="module")
def null_quad():
    return q.build_quadrature(q.make_model("null"), 2.0, 4)


@pytest.fixture(scope="module")
def brownian_ensemble(null_quad):
    tg = np.linspace(0.0, 1.0, 26)
    return q.simulate_forward(q.make_model("null"), null_quad, "brownian", tg,
                              50000, seed=77)


# ---------------------------------------------------------------------------
# forward simulation
# ---------------------------------------------------------------------------

def test_brownian_increment_statistics(gamma_model, gamma_quad):
    tg = np.linspace(0.0, 1.0, 11)
    n = 100000
    ens = q.simulate_forward(gamma_model, gamma_quad, "brownian_jumps", tg, n,
                             seed=55)
    dt = ens.dt
    for k in (0, 5, 9):
        inc = ens.dw[:, k, 0]
        assert abs(inc.mean()) <= 4.0 * math.sqrt(dt / n)
        assert abs(inc.var() / dt - 1.0) <= 0.05


def test_seed_reproducibility(gamma_model, gamma_quad):
    tg = np.linspace(0.0, 1.0, 6)
    a = q.simulate_forward(gamma_model, gamma_quad, "brownian_jumps", tg, 500,
                           seed=9)
    b = q.simulate_forward(gamma_model, gamma_quad, "brownian_jumps", tg, 500,
                           seed=9)
    assert np.array_equal(a.state, b.state)
    assert np.array_equal(a.dw, b.dw)
    assert np.array_equal(a.jumps.time, b.jumps.time)


def test_deterministic_dynamics(gamma_model, gamma_quad):
    tg = np.linspace(0.0, 1.0, 9)
    ens = q.simulate_forward(gamma_model, gamma_quad, "deterministic", tg, 10,
                             seed=1)
    assert np.allclose(ens.state, tg[None, :], atol=1e-15)


def test_brownian_terminal_variance(null_quad):
    tg = np.linspace(0.0, 1.0, 11)
    ens = q.simulate_forward(q.make_model("null"), null_quad, "brownian", tg,
                             100000, seed=2)
    assert abs(ens.state[:, -1].var() / 1.0 - 1.0) <= 0.05


def test_compensated_jump_state_mean(gamma_model):
    quad = q.build_quadrature(gamma_model, 4.0, 10)
    tg = np.linspace(0.0, 1.0, 11)
    n = 100000
    ens = q.simulate_forward(gamma_model, quad, "jumps_only", tg, n, seed=3)
    term = ens.state[:, -1]
    assert abs(term.mean()) <= 4.0 * term.std() / math.sqrt(n)


def test_mark_impact_dynamics(gamma_model, gamma_quad):
    tg = np.linspace(0.0, 1.0, 5)
    ens = q.simulate_forward(gamma_model, gamma_quad, "jumps_only", tg, 2000,
                             seed=4, jump_impact="mark")
    assert np.isfinite(ens.state).all()
    with pytest.raises(ValueError, match="jump_impact"):
        q.simulate_forward(gamma_model, gamma_quad, "jumps_only", tg, 10,
                           seed=4, jump_impact="levels")


def test_unknown_dynamics_rejected(gamma_model, gamma_quad):
    with pytest.raises(ValueError, match="dynamics"):
        q.simulate_forward(gamma_model, gamma_quad, "heston",
                           np.linspace(0, 1, 5), 10, seed=1)


def test_feature_map_deterministic_state_reduces_to_intercept():
    fmap = FeatureMap.fit(np.full(100, 3.0), 3)
    assert fmap.n_basis == 1
    assert np.allclose(fmap.matrix(np.full(100, 3.0)), 1.0)


# ---------------------------------------------------------------------------
# backward solves
# ---------------------------------------------------------------------------

def test_zero_driver_martingale(brownian_ensemble, null_quad):
    drv = q.make_driver("zero", q.StructureParams.from_constants(1.0))
    sol = q.solve_lipschitz(drv.at_quadrature(null_quad), lambda x: x,
                            brownian_ensemble)
    err = np.abs(sol.y - brownian_ensemble.state).mean(axis=0).max()
    assert err <= 0.02
    z_mid = sol.z[:, 12, 0]
    assert abs(z_mid.mean() - 1.0) <= 0.02
    assert np.array_equal(sol.y[:, -1], brownian_ensemble.state[:, -1])


def test_zero_mass_measure_gives_null_jump_loading(brownian_ensemble, null_quad):
    drv = q.make_driver("zero", q.StructureParams.from_constants(1.0))
    sol = q.solve_lipschitz(drv.at_quadrature(null_quad), lambda x: x,
                            brownian_ensemble)
    assert np.all(sol.u_values(brownian_ensemble, 10) == 0.0)


def test_linear_ode_closed_form(gamma_model, gamma_quad):
    tg = np.linspace(0.0, 1.0, 101)
    ens = q.simulate_forward(gamma_model, gamma_quad, "brownian_jumps", tg,
                             2000, seed=21)
    p = q.StructureParams.from_constants(1.0, 0.5, 1.0)
    drv = q.make_driver("linear", p, quad_mass_hint=gamma_quad.total_mass,
                        a=0.5)
    sol = q.solve_lipschitz(drv.at_quadrature(gamma_quad),
                            lambda x: np.ones_like(x), ens)
    assert abs(sol.y0 - math.exp(0.5)) <= 0.01


def test_grid_refinement_first_order(gamma_model, gamma_quad):
    p = q.StructureParams.from_constants(1.0, 0.5, 1.0)
    drv = q.make_driver("linear", p, quad_mass_hint=gamma_quad.total_mass,
                        a=0.5)
    y0 = {}
    for k_steps in (25, 50, 100):
        tg = np.linspace(0.0, 1.0, k_steps + 1)
        ens = q.simulate_forward(gamma_model, gamma_quad, "brownian_jumps", tg,
                                 500, seed=22)
        y0[k_steps] = q.solve_lipschitz(drv.at_quadrature(gamma_quad),
                                        lambda x: np.ones_like(x), ens).y0
    gap_coarse = abs(y0[25] - y0[50])
    gap_fine = abs(y0[50] - y0[100])
    assert gap_coarse >= 1.5 * gap_fine


def test_girsanov_tilt_oracle(gamma_model):
    quad = q.build_quadrature(gamma_model, 4.0, 10)
    tg = np.linspace(0.0, 1.0, 41)
    ens = q.simulate_forward(gamma_model, quad, "brownian_jumps", tg, 40000,
                             seed=23)
    p = q.StructureParams.from_constants(1.0, 1.0, 0.0)
    drv = q.make_driver("linear", p, quad_mass_hint=quad.total_mass, b=0.3,
                        c_tilde=0.4)
    sol = q.solve_lipschitz(drv.at_quadrature(quad), lambda x: x, ens)
    oracle = girsanov_tilt_mc(0.3, 0.4, quad.total_mass, 1.0,
                              n_samples=400000, seed=24)
    cse = math.hypot(sol.y0_se, oracle.stderr)
    assert abs(sol.y0 - oracle.value) <= 3.0 * cse
    assert oracle.value == pytest.approx(
        girsanov_tilt_exact(0.3, 0.4, quad.total_mass, 1.0), abs=3 * oracle.stderr)


def test_non_contraction_guard(brownian_ensemble, null_quad):
    p = q.StructureParams.from_constants(1.0, 0.0, 30.0)
    drv = q.make_driver("linear", p, a=30.0)  # dt = 0.04, dt * 30 > 1
    with pytest.raises(NonContractionError):
        q.solve_lipschitz(drv.at_quadrature(null_quad), lambda x: x,
                          brownian_ensemble)


def test_two_dimensional_noise(gamma_model, gamma_quad):
    tg = np.linspace(0.0, 1.0, 21)
    ens = q.simulate_forward(gamma_model, gamma_quad, "brownian", tg, 20000,
                             seed=25, d=2)
    assert ens.dw.shape == (20000, 20, 2)
    drv = q.make_driver("zero", q.StructureParams.from_constants(1.0))
    sol = q.solve_lipschitz(drv.at_quadrature(gamma_quad), lambda x: x, ens)
    err = np.abs(sol.y - ens.state).mean(axis=0).max()
    assert err <= 0.03


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------

def test_reconstruction_identity(small_ensemble, gamma_quad):
    p = q.StructureParams.from_constants(1.0)
    drv = q.make_driver("canonical", p)
    view = drv.at_quadrature(gamma_quad,
                             gamma_quad.zeta_at(small_ensemble.model, 0.0))
    sol = q.solve_lipschitz(view, lambda x: 0.25 * x, small_ensemble)
    dec = q.decompose(sol, small_ensemble)
    recon = sol.y[:, :1] - dec.v + dec.m_total
    assert np.max(np.abs(sol.y - recon)) <= 1e-10


def test_zero_driver_zero_variation(brownian_ensemble, null_quad):
    drv = q.make_driver("zero", q.StructureParams.from_constants(1.0))
    sol = q.solve_lipschitz(drv.at_quadrature(null_quad), lambda x: x,
                            brownian_ensemble)
    dec = q.decompose(sol, brownian_ensemble)
    assert np.all(dec.v == 0.0)


def test_deterministic_solution_has_flat_martingales(gamma_model, gamma_quad):
    tg = np.linspace(0.0, 1.0, 41)
    ens = q.simulate_forward(gamma_model, gamma_quad, "brownian_jumps", tg,
                             5000, seed=26)
    p = q.StructureParams.from_constants(1.0, 0.5, 1.0)
    drv = q.make_driver("linear", p, quad_mass_hint=gamma_quad.total_mass,
                        a=0.5)
    sol = q.solve_lipschitz(drv.at_quadrature(gamma_quad),
                            lambda x: np.ones_like(x), ens)
    dec = q.decompose(sol, ens)
    assert np.max(np.abs(dec.m_c)) <= 1e-8
    assert np.max(np.abs(dec.m_d)) <= 1e-8
    assert np.allclose(np.diff(dec.v, axis=1), sol.driver_values * ens.dt,
                       atol=1e-12)


def test_martingale_component_regression(small_ensemble, gamma_quad):
    p = q.StructureParams.from_constants(1.0)
    drv = q.make_driver("canonical", p)
    view = drv.at_quadrature(gamma_quad,
                             gamma_quad.zeta_at(small_ensemble.model, 0.0))
    sol = q.solve_lipschitz(view, lambda x: 0.25 * x, small_ensemble)
    dec = q.decompose(sol, small_ensemble)
    dm = np.diff(dec.m_c + dec.m_d, axis=1)
    stat = martingale_regression_test(dm[:, ::4], small_ensemble)
    assert stat <= 4.0


def test_mismatched_ensemble_rejected(small_ensemble, gamma_model, gamma_quad):
    p = q.StructureParams.from_constants(1.0)
    drv = q.make_driver("canonical", p)
    view = drv.at_quadrature(gamma_quad,
                             gamma_quad.zeta_at(small_ensemble.model, 0.0))
    sol = q.solve_lipschitz(view, lambda x: 0.25 * x, small_ensemble)
    other = q.simulate_forward(gamma_model, gamma_quad, "brownian_jumps",
                               small_ensemble.time_grid, 20000, seed=999)
    with pytest.raises(EnsembleMismatchError):
        q.decompose(sol, other)
