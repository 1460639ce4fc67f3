import math
import warnings

import numpy as np
import pytest

from bsvie_kit.bsde import backward_sweep
from bsvie_kit.paths import TimeGrid, simulate_forward, tree_ensemble
from bsvie_kit.presets import coupled_bsvie, linear_decay_bsvie, linear_family_bsvie
from bsvie_kit.regression import BasisSpec, Regressor
from bsvie_kit.volterra import CertificationWarning, build_system, flow_residual, solve_bsvie


def _tree(n):
    g = TimeGrid.uniform(1.0, n)
    ens = tree_ensemble(0.0, 1.0, g)
    return ens, Regressor(ens, BasisSpec("exact"))


def test_system_mapping_subtracts_derivative():
    system = build_system(linear_decay_bsvie(2.0), 1.0)
    y = np.ones((3, 1))
    out = system.h(0.0, None, y, None, y, None, np.full((3, 1), 0.5))
    np.testing.assert_allclose(out, -2.0 - 0.5)
    assert system.lipschitz.du == 1.0


def test_parameter_free_equation_collapses_to_one_sweep():
    g = TimeGrid.uniform(1.0, 8)
    ens = simulate_forward(0.0, 1.0, g, 300, seed=4)
    reg = Regressor(ens, BasisSpec("poly", 2))
    sol = solve_bsvie(linear_decay_bsvie(0.7, 2.0), ens, reg, tol=1e-13, max_iter=50, certify=False)
    ref = backward_sweep(np.full((300, 1), 2.0), ens, reg, lambda i, y, z: -0.7 * y)
    for k in range(9):
        np.testing.assert_allclose(sol.Y[:, :, k], ref.Y, atol=1e-13)
    np.testing.assert_allclose(sol.diagonal_process[0], ref.Y, atol=1e-13)
    gy, gz = sol.diagonal_gap()
    assert gy <= 1e-12 and gz <= 1e-12
    np.testing.assert_allclose(sol.dY, 0.0, atol=1e-15)


def test_linear_family_closed_form_on_tree():
    ens, reg = _tree(3)
    sol = solve_bsvie(linear_family_bsvie(), ens, reg, tol=1e-14, certify=False)
    X = ens.X[:, :, 0]
    for k, s in enumerate(ens.grid.times):
        np.testing.assert_allclose(sol.Y[:, :, k, 0], s * X.T, atol=1e-14)


def test_flow_residual_on_linear_family_tree():
    # the discrete identity is off by dt * (X_b - X_a)
    ens, reg = _tree(3)
    sol = solve_bsvie(linear_family_bsvie(), ens, reg, tol=1e-14, certify=False)
    rep = flow_residual(sol.diag, linear_family_bsvie(), ens, pairs=[(0, 3)])
    X = ens.X[:, :, 0]
    expected = math.sqrt(np.mean((X[:, 3] - X[:, 0]) ** 2)) / 3
    assert rep.rms == pytest.approx(expected, rel=1e-12)
    nc = flow_residual(sol.diag, linear_family_bsvie(), ens, drop_derivative=True, pairs=[(0, 3)])
    assert nc.rms > 2 * rep.rms


def test_flow_residual_pairs():
    ens, reg = _tree(2)
    sol = solve_bsvie(linear_family_bsvie(), ens, reg, tol=1e-14, certify=False)
    assert flow_residual(sol.diag, linear_family_bsvie(), ens).pairs == 3
    assert flow_residual(sol.diag, linear_family_bsvie(), ens, pairs=[]).pairs == 0
    with pytest.raises(ValueError):
        flow_residual(sol.diag, linear_family_bsvie(), ens, pairs=[(2, 1)])


def test_uncertified_run_warns_but_solves():
    ens, reg = _tree(2)
    with pytest.warns(CertificationWarning):
        sol = solve_bsvie(coupled_bsvie(), ens, reg, tol=1e-12, max_iter=100, radius_sq=1.0)
    assert sol.converged
    assert sol.certificate is not None and not sol.certificate.certified


def test_default_certification_of_coupled_preset_runs():
    ens, reg = _tree(2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CertificationWarning)
        sol = solve_bsvie(coupled_bsvie(), ens, reg, tol=1e-12, max_iter=100)
    assert sol.certificate.kappa == 7
