import numpy as np
import pytest

from bsvie_kit.paths import TimeGrid, tree_ensemble
from bsvie_kit.presets import coupled_bsvie, linear_decay_bsvie, linear_family_bsvie, terminal_state
from bsvie_kit.regression import BasisSpec, Regressor
from bsvie_kit.tree import OracleError, controlled_tree_dp, tree_oracle
from bsvie_kit.volterra import flow_residual, solve_bsvie


def test_linear_decay_oracle_matches_recursion():
    g = TimeGrid.uniform(1.0, 3)
    orc = tree_oracle(linear_decay_bsvie(1.0), 0.0, 1.0, g)
    np.testing.assert_allclose(orc.Y[0], (1 - 1 / 3) ** 3, atol=1e-14)


def test_linear_family_oracle():
    g = TimeGrid.uniform(1.0, 2)
    orc = tree_oracle(linear_family_bsvie(), 0.0, 1.0, g)
    np.testing.assert_allclose(orc.dU[0], 0.0, atol=1e-14)
    np.testing.assert_allclose(orc.diag_v[1], 0.5, atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_solver_matches_oracle(n):
    g = TimeGrid.uniform(1.0, n)
    ens = tree_ensemble(0.3, 0.8, g)
    reg = Regressor(ens, BasisSpec("exact"))
    spec = coupled_bsvie()
    sol = solve_bsvie(spec, ens, reg, tol=1e-14, max_iter=500, certify=False)
    orc = tree_oracle(spec, 0.3, 0.8, g)
    np.testing.assert_allclose(sol.Y, orc.U, atol=1e-12)
    np.testing.assert_allclose(sol.dY, orc.dU, atol=1e-12)
    np.testing.assert_allclose(sol.diag.v, orc.diag_v, atol=1e-12)
    fr = flow_residual(sol.diag, spec, ens)
    assert abs(fr.rms - orc.flow_rms) <= 1e-12


def test_oracle_limits():
    with pytest.raises(OracleError):
        tree_oracle(linear_decay_bsvie(), 0.0, 1.0, TimeGrid.uniform(1.0, 11))
    with pytest.raises(OracleError):
        tree_oracle(linear_decay_bsvie(), 0.0, 1.0, TimeGrid.uniform(1.0, 2), damping=0.0)


def test_dp_without_reward_is_martingale_value():
    g = TimeGrid.uniform(1.0, 3)
    # with zero drift dependence (z = 0 at the leaves of a constant terminal) the value is the terminal
    dp = controlled_tree_dp(0.0, 1.0, g, lambda p: 1.0, (0.0, 0.0, 0.0), (-1.0, 1.0))
    np.testing.assert_allclose(dp.value, 1.0)
    np.testing.assert_allclose(dp.policy, -1.0)


def test_dp_interior_policy():
    g = TimeGrid.uniform(1.0, 2)
    dp = controlled_tree_dp(0.0, 1.0, g, lambda p: terminal_state(p)[0], (-0.5, 0.0, 0.0), (-1.0, 1.0))
    # last step: z = 1, unconstrained maximiser 1 / (T - t) = 2 is clipped
    np.testing.assert_allclose(dp.policy[1], 1.0)
    # the bridge drift then pins the node-1 value to a constant, so z = 0 at the root
    np.testing.assert_allclose(dp.value[1], dp.value[1, 0], atol=1e-15)
    assert dp.policy[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_dp_rejects_convex_reward():
    with pytest.raises(OracleError):
        controlled_tree_dp(0.0, 1.0, TimeGrid.uniform(1.0, 2), lambda p: 0.0, (1.0, 0.0, 0.0), (-1.0, 1.0))
