"""Single-sphere reference solutions: closed form, radial solver, cross-checks.

The nonlinear solver's frozen values were verified against an independent
collocation solution of the same boundary-value problem (scipy solve_bvp at
tol 1e-11); both routes agree to about 5e-8 relative, so the literals below
carry that confidence.
"""

import math

import numpy as np
import pytest

from pbwos import (
    ConfigError,
    NumericalError,
    RadialGrid,
    linear_single_atom,
    nonlinear_single_atom,
)

# Independent collocation values (scipy solve_bvp, tol 1e-11) for the
# exterior problem on a unit sphere; the finite-difference solver at
# n = 100_000 must agree to a few parts in 1e7.
BVP_REACTION_Z1 = -275.79976409466803
BVP_REACTION_Z02 = -55.02233364928945

# Frozen outputs of the finite-difference solver itself at n = 100_000,
# guarding against silent behavior drift.
FD_REACTION_Z1 = -275.7997496610273
FD_REACTION_Z02 = -55.022330929246806

LINEAR_REACTION_Z1 = -275.0835538572212


class TestRadialGrid:
    def test_validation(self):
        with pytest.raises(ConfigError):
            RadialGrid(r_min=0.0, r_max=10.0)
        with pytest.raises(ConfigError):
            RadialGrid(r_min=2.0, r_max=1.0)
        with pytest.raises(ConfigError):
            RadialGrid(r_min=1.0, r_max=100.0, n_points=100)

    def test_for_params_margin(self, params):
        grid = RadialGrid.for_params(params, 1.0)
        assert grid.r_min == 1.0
        assert grid.r_max == pytest.approx(1.0 + 30.0 / params.kappa_out)
        assert grid.points.shape == (10_000,)
        assert grid.spacing == pytest.approx((grid.r_max - 1.0) / 9_999)


class TestLinearSingleAtom:
    def test_frozen_value(self, params):
        assert linear_single_atom(params, 1.0, 1.0) == pytest.approx(
            LINEAR_REACTION_Z1, rel=1e-12
        )

    def test_linear_in_charge(self, params):
        v1 = linear_single_atom(params, 1.3, 0.25)
        v2 = linear_single_atom(params, 1.3, -0.5)
        assert v2 == pytest.approx(-2.0 * v1, rel=1e-12)

    def test_bad_radius(self, params):
        with pytest.raises(ConfigError):
            linear_single_atom(params, 0.0, 1.0)

    def test_zero_screening_limit(self, params_no_salt):
        # With no ions the exterior is unscreened Coulomb and the reaction
        # value reduces to the two-dielectric Born expression.
        c = params_no_salt.constants
        expected = (
            params_no_salt.source_C
            / (4.0 * math.pi * 2.0)
            * (1.0 / c.eps_out - 1.0 / c.eps_in)
        )
        assert linear_single_atom(params_no_salt, 2.0, 1.0) == pytest.approx(
            expected, rel=1e-12
        )


@pytest.fixture(scope="module")
def fine(params):
    grid = RadialGrid.for_params(params, 1.0, n_points=100_000)
    return {z: nonlinear_single_atom(params, 1.0, z, grid) for z in (1.0, 0.2, 1e-3)}


class TestNonlinearSingleAtom:
    def test_agrees_with_independent_collocation(self, fine):
        assert fine[1.0].reaction_value == pytest.approx(BVP_REACTION_Z1, rel=5e-7)
        assert fine[0.2].reaction_value == pytest.approx(BVP_REACTION_Z02, rel=5e-7)

    def test_frozen_values_replay(self, fine):
        assert fine[1.0].reaction_value == pytest.approx(FD_REACTION_Z1, rel=1e-12)
        assert fine[0.2].reaction_value == pytest.approx(FD_REACTION_Z02, rel=1e-12)

    def test_residual_and_iteration_report(self, fine):
        for sol in fine.values():
            assert sol.residual < 1e-10
            assert 0 <= sol.iterations <= 20

    def test_small_charge_matches_linearized(self, params, fine):
        # At z = 1e-3 the nonlinearity is negligible and both routes must
        # coincide far below the discretization error.
        lin = linear_single_atom(params, 1.0, 1e-3)
        assert fine[1e-3].reaction_value == pytest.approx(lin, rel=1e-6)

    def test_nonlinear_weaker_than_linearized(self, fine, params):
        # sinh(v) screens harder than v, so the nonlinear reaction value is
        # more negative than the linearized one at z = 1.
        assert fine[1.0].reaction_value < LINEAR_REACTION_Z1

    def test_second_order_self_convergence(self, params):
        vals = {}
        for n in (10_000, 20_000, 40_000):
            grid = RadialGrid.for_params(params, 1.0, n_points=n)
            vals[n] = nonlinear_single_atom(params, 1.0, 1.0, grid).reaction_value
        ratio = (vals[10_000] - vals[20_000]) / (vals[20_000] - vals[40_000])
        assert ratio == pytest.approx(4.0, abs=0.5)

    def test_far_field_truncation_is_converged(self, params):
        # Same spacing, farther cutoff: the answer must not move.
        ko = params.kappa_out
        g30 = RadialGrid(1.0, 1.0 + 30.0 / ko, 30_001)
        g40 = RadialGrid(1.0, 1.0 + 40.0 / ko, 40_001)
        assert g30.spacing == pytest.approx(g40.spacing, rel=1e-12)
        a = nonlinear_single_atom(params, 1.0, 1.0, g30).reaction_value
        b = nonlinear_single_atom(params, 1.0, 1.0, g40).reaction_value
        assert a == pytest.approx(b, abs=1e-10)

    def test_grid_must_match_sphere(self, params):
        grid = RadialGrid.for_params(params, 2.0)
        with pytest.raises(ConfigError):
            nonlinear_single_atom(params, 1.0, 1.0, grid)

    def test_grid_must_reach_far_field(self, params):
        grid = RadialGrid(1.0, 2.0, 10_000)
        with pytest.raises(ConfigError):
            nonlinear_single_atom(params, 1.0, 1.0, grid)

    def test_absurd_charge_fails_loudly(self, params):
        grid = RadialGrid.for_params(params, 1.0)
        with pytest.raises(NumericalError):
            nonlinear_single_atom(params, 1.0, 100.0, grid)


class TestRadialSolutionEvaluation:
    def test_interpolation_and_range_check(self, params):
        grid = RadialGrid.for_params(params, 1.0)
        sol = nonlinear_single_atom(params, 1.0, 0.2, grid)
        assert sol(1.0) == pytest.approx(float(sol.values[0]), rel=1e-12)
        mid = 0.5 * (grid.r_min + grid.r_max)
        many = sol(np.array([1.0, mid, grid.r_max]))
        assert many.shape == (3,)
        assert many[2] == pytest.approx(0.0, abs=1e-12)
        # exterior solution decays monotonically toward the far field
        assert abs(sol(2.0)) < abs(sol(1.0))
        with pytest.raises(ConfigError):
            sol(0.5)
        with pytest.raises(ConfigError):
            sol(grid.r_max + 1.0)
