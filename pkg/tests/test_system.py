import numpy as np
import pytest

from bsvie_kit.paths import TimeGrid, simulate_forward, tree_ensemble
from bsvie_kit.presets import coupled_bsvie, quadratic_small_system, zero_bsvie
from bsvie_kit.regression import BasisSpec, Regressor
from bsvie_kit.system import (
    SystemIterate,
    certify_system,
    gradient_diagonal_bound,
    iterate_norms,
    picard_solve,
    residual_check,
    total_norm,
)
from bsvie_kit.volterra import build_system


def _tree(n):
    g = TimeGrid.uniform(1.0, n)
    ens = tree_ensemble(0.0, 1.0, g)
    return ens, Regressor(ens, BasisSpec("exact"))


def test_zero_system_converges_immediately():
    ens, reg = _tree(3)
    res = picard_solve(build_system(zero_bsvie(), 1.0), ens, reg, tol=1e-12)
    assert res.converged and res.iterations <= 2
    assert np.all(res.iterate.Y == 0)


def test_iterate_shapes_and_subtraction():
    ens, _ = _tree(2)
    it = SystemIterate.zeros(ens, 2, 3)
    assert it.Y.shape == (3, 4, 2)
    assert it.Z.shape == (2, 4, 1, 2)
    assert it.U.shape == (3, 4, 3, 3)
    assert it.V.shape == (2, 4, 1, 3, 3)
    p = it.perturbed(0.1, seed=1)
    d = p - it
    np.testing.assert_array_equal(d.U, p.U)


def test_norms_vanish_on_zero_iterate():
    ens, reg = _tree(2)
    assert total_norm(iterate_norms(SystemIterate.zeros(ens, 1, 1), reg, 0.5)) == 0.0


def test_tree_residuals_vanish_at_fixed_point():
    ens, reg = _tree(3)
    system = build_system(coupled_bsvie(), 1.0)
    res = picard_solve(system, ens, reg, tol=1e-14, max_iter=200)
    assert res.converged
    rep = residual_check(res.iterate, system, ens, reg)
    assert rep.worst_projected <= 1e-12
    # on a tree the martingale part is represented exactly
    assert rep.y.pathwise_rms <= 1e-12
    assert rep.u.pathwise_rms <= 1e-12


def test_contraction_ratios_below_one():
    ens, reg = _tree(3)
    res = picard_solve(build_system(coupled_bsvie(), 1.0), ens, reg, tol=1e-12, max_iter=200)
    ratios = [r for r in res.ratios() if np.isfinite(r)]
    assert all(r < 1 for r in ratios[-3:])


def test_frozen_and_sequential_agree_at_fixed_point():
    ens, reg = _tree(3)
    system = build_system(coupled_bsvie(), 1.0)
    a = picard_solve(system, ens, reg, tol=1e-14, max_iter=200, variant="frozen")
    b = picard_solve(system, ens, reg, tol=1e-14, max_iter=200, variant="sequential")
    np.testing.assert_allclose(a.iterate.U, b.iterate.U, atol=1e-12)
    assert b.iterations <= a.iterations


def test_max_iter_reports_non_convergence():
    ens, reg = _tree(3)
    res = picard_solve(build_system(coupled_bsvie(), 1.0), ens, reg, tol=1e-14, max_iter=2)
    assert not res.converged and res.iterations == 2


def test_bad_solver_arguments():
    ens, reg = _tree(1)
    system = build_system(zero_bsvie(), 1.0)
    with pytest.raises(ValueError):
        picard_solve(system, ens, reg, tol=0.0)
    with pytest.raises(ValueError):
        picard_solve(system, ens, reg, max_iter=0)


def test_uniqueness_from_perturbed_start():
    ens, reg = _tree(3)
    system = build_system(coupled_bsvie(), 1.0)
    a = picard_solve(system, ens, reg, tol=1e-13, max_iter=300)
    start = SystemIterate.zeros(ens, 1, 1).perturbed(0.5, seed=3)
    b = picard_solve(system, ens, reg, tol=1e-13, max_iter=300, init=start)
    assert a.converged and b.converged
    np.testing.assert_allclose(a.iterate.Y, b.iterate.Y, atol=3e-13)


def test_certify_small_quadratic_instance():
    g = TimeGrid.uniform(1.0, 4)
    ens = simulate_forward(0.0, 1.0, g, 500, seed=0)
    cert = certify_system(quadratic_small_system(), ens, 10, [1, 35, 1, 1, 1, 1], 0.5, None, 0.2)
    assert cert.certified


def test_certification_fails_for_large_data():
    g = TimeGrid.uniform(1.0, 4)
    ens = simulate_forward(0.0, 1.0, g, 500, seed=0)
    cert = certify_system(quadratic_small_system(scale=1.0), ens, 10, [1, 35, 1, 1, 1, 1], 0.5, None, 0.2)
    assert not cert.I0_ok and not cert.certified


def test_gradient_diagonal_bound_on_converged_run():
    ens, reg = _tree(3)
    system = build_system(coupled_bsvie(), 1.0)
    c = 2.0 * max(system.lipschitz.u, system.lipschitz.du)
    res = picard_solve(system, ens, reg, c=c, tol=1e-13, max_iter=300)
    bound = gradient_diagonal_bound(res.iterate, system, ens, reg, c)
    assert bound.weight_ok and bound.passed
    assert not gradient_diagonal_bound(res.iterate, system, ens, reg, 0.0).weight_ok
