"""Solver plumbing: request validation, determinism, aggregation, isolation.

Statistical correctness against the radial references lives in the
acceptance tests; these check the machinery around the estimators.
"""

import math

import numpy as np
import pytest

from pbwos import (
    Atom,
    ConfigError,
    Molecule,
    PhysicalConstants,
    SolveRequest,
    derive_parameters,
    exterior_exit_fraction,
    scheme_from_params,
    solve_linear,
    solve_nonlinear,
)
from pbwos.jumps import TAJ
from pbwos.solvers import CHUNK_SAMPLES, _allocate, _TopMass, _Welford


def _request(mol, params, **kw):
    defaults = dict(
        molecule=mol,
        params=params,
        points=np.array([[0.0, 0.0, 0.0]]),
        scheme=scheme_from_params("anj", 0.1, params),
        samples=2000,
        seed=1,
    )
    defaults.update(kw)
    return SolveRequest(**defaults)


class TestSolveRequestValidation:
    def test_points_shape_and_finiteness(self, unit_atom, params):
        with pytest.raises(ConfigError):
            _request(unit_atom, params, points=np.zeros((2, 2)))
        with pytest.raises(ConfigError):
            _request(unit_atom, params, points=np.array([[np.nan, 0.0, 0.0]]))

    def test_single_point_is_promoted(self, unit_atom, params):
        req = _request(unit_atom, params, points=[1.5, 0.0, 0.0])
        assert req.points.shape == (1, 3)

    def test_count_bounds(self, unit_atom, params):
        with pytest.raises(ConfigError):
            _request(unit_atom, params, samples=0)
        with pytest.raises(ConfigError):
            _request(unit_atom, params, workers=0)
        with pytest.raises(ConfigError):
            _request(unit_atom, params, epsilon_shell=0.0)
        with pytest.raises(ConfigError):
            _request(unit_atom, params, pilot_samples=1)
        with pytest.raises(ConfigError):
            _request(unit_atom, params, max_strata=0)

    def test_scheme_constants_must_match_params(self, unit_atom, params):
        from pbwos.jumps import ANJ

        mismatched = ANJ(h=0.1, eps_in=4.0, eps_out=params.constants.eps_out)
        with pytest.raises(ConfigError):
            _request(unit_atom, params, scheme=mismatched)

    def test_taj_screening_must_match_params(self, unit_atom, params):
        bad = TAJ(
            h=0.1,
            eps_in=params.constants.eps_in,
            eps_out=params.constants.eps_out,
            kappa_bar=1.0,
        )
        with pytest.raises(ConfigError):
            _request(unit_atom, params, scheme=bad)

    def test_raw_potential_rejects_center_point(self, unit_atom, params):
        with pytest.raises(ConfigError):
            _request(unit_atom, params, subtract_u0=False, points=[0.0, 0.0, 0.0])
        # off-center raw queries are fine
        _request(unit_atom, params, subtract_u0=False, points=[0.5, 0.0, 0.0])

    def test_no_screening_rejected(self, unit_atom, params_no_salt):
        with pytest.raises(ConfigError):
            SolveRequest(
                molecule=unit_atom,
                params=params_no_salt,
                points=np.array([[0.0, 0.0, 0.0]]),
                scheme=scheme_from_params("anj", 0.1, params_no_salt),
                samples=100,
            )

    def test_stratified_linear_rejected(self, unit_atom, params):
        req = _request(unit_atom, params, stratified=True)
        with pytest.raises(ConfigError):
            solve_linear(req)

    def test_taj_nonlinear_rejected(self, unit_atom, params):
        req = _request(unit_atom, params, scheme=scheme_from_params("taj", 0.1, params))
        with pytest.raises(ConfigError):
            solve_nonlinear(req)


class TestDeterminism:
    def test_linear_replay_and_worker_invariance(self, dimer, params):
        ests = [
            solve_linear(_request(dimer, params, samples=8000, workers=w))[0]
            for w in (1, 1, 4)
        ]
        for est in ests[1:]:
            assert est.mean == ests[0].mean
            assert est.std_error == ests[0].std_error
            assert est.samples_used == ests[0].samples_used == 8000
            assert est.steps_per_sample == ests[0].steps_per_sample

    def test_chunk_boundary_has_no_seam(self, unit_atom, params):
        # One sample beyond a chunk boundary exercises the merge path; the
        # first chunk's contribution must be unchanged.
        a = solve_linear(_request(unit_atom, params, samples=CHUNK_SAMPLES))[0]
        b = solve_linear(_request(unit_atom, params, samples=CHUNK_SAMPLES + 1))[0]
        assert a.samples_used == CHUNK_SAMPLES
        assert b.samples_used == CHUNK_SAMPLES + 1
        assert a.mean != b.mean  # the extra sample does land
        assert abs(a.mean - b.mean) < 10.0 * a.std_error / math.sqrt(CHUNK_SAMPLES)

    def test_seed_changes_result(self, unit_atom, params):
        a = solve_linear(_request(unit_atom, params, seed=1))[0]
        b = solve_linear(_request(unit_atom, params, seed=2))[0]
        assert a.mean != b.mean

    def test_nonlinear_stratified_replay(self, unit_atom, params):
        kw = dict(samples=30_000, stratified=True, max_strata=5)
        a = solve_nonlinear(_request(unit_atom, params, workers=1, **kw))[0]
        b = solve_nonlinear(_request(unit_atom, params, workers=3, **kw))[0]
        assert a.mean == b.mean
        assert a.std_error == b.std_error
        assert a.samples_used == b.samples_used == 30_000


class TestErrorIsolation:
    def test_failing_point_does_not_abort_others(self, unit_atom, params):
        # With max_steps=1 the interior point always trips the cap on its
        # first exterior leg, while walks from 50 A out are killed at the
        # very first clock check (the rate there is astronomical), so that
        # point completes with every score equal to its initial value.
        req = _request(
            unit_atom,
            params,
            points=np.array([[0.0, 0.0, 0.0], [50.0, 0.0, 0.0]]),
            samples=200,
            max_steps=1,
        )
        interior, exterior = solve_linear(req)
        assert interior.error is not None
        assert "step" in interior.error
        assert math.isnan(interior.mean)
        assert interior.samples_used == 0
        assert exterior.error is None
        assert np.isfinite(exterior.mean)
        assert exterior.samples_used == 200


class TestEstimateDiagnostics:
    def test_zero_scores_counted_for_far_raw_point(self, unit_atom, params):
        # In raw-potential mode an exterior walk that is killed before ever
        # touching the molecule scores exactly zero; from 30 A out that is
        # nearly every walk, and the raw potential there is ~0.
        est = solve_nonlinear(
            _request(
                unit_atom,
                params,
                points=[30.0, 0.0, 0.0],
                samples=4000,
                subtract_u0=False,
            )
        )[0]
        assert est.error is None
        assert est.zero_score_fraction is not None
        assert est.zero_score_fraction > 0.99
        assert est.mean == pytest.approx(0.0, abs=0.1)

    def test_far_point_regular_part_cancels_singular_part(self, unit_atom, params):
        # In subtract mode the same killed walks score -u0(x0): far from the
        # molecule the full potential vanishes, so the regular part must
        # converge to minus the singular part.
        from pbwos import u0

        x0 = [30.0, 0.0, 0.0]
        est = solve_nonlinear(_request(unit_atom, params, points=x0, samples=4000))[0]
        assert est.error is None
        assert est.mean == pytest.approx(-u0(unit_atom, params, x0), abs=0.1)

    def test_linear_reports_steps(self, unit_atom, params):
        est = solve_linear(_request(unit_atom, params, samples=4000))[0]
        assert est.error is None
        assert est.steps_per_sample > 1.0
        assert est.ci95_halfwidth == pytest.approx(1.959964 * est.std_error)


class TestStratifiedConsistency:
    def test_matches_plain_estimate(self, unit_atom, params):
        plain = solve_nonlinear(_request(unit_atom, params, samples=120_000))[0]
        strat = solve_nonlinear(
            _request(unit_atom, params, samples=120_000, stratified=True, max_strata=10)
        )[0]
        assert plain.error is None and strat.error is None
        gap = abs(plain.mean - strat.mean)
        assert gap < 3.5 * math.hypot(plain.std_error, strat.std_error)

    def test_budget_too_small_for_pilots(self, unit_atom, params):
        with pytest.raises(ConfigError):
            solve_nonlinear(
                _request(unit_atom, params, samples=600, stratified=True, max_strata=10)
            )


class TestAllocate:
    def test_exact_total_and_proportionality(self):
        alloc = _allocate(1000, np.array([1.0, 1.0, 2.0]))
        assert alloc.sum() == 1000
        assert alloc[2] == 2 * alloc[0]

    def test_zero_weights(self):
        assert _allocate(100, np.zeros(3)).sum() == 0
        assert _allocate(0, np.array([1.0, 2.0])).sum() == 0

    def test_largest_remainder_is_deterministic(self):
        w = np.array([1.0, 1.0, 1.0])
        a = _allocate(10, w)
        assert a.sum() == 10
        np.testing.assert_array_equal(a, _allocate(10, w))


class TestWelford:
    def test_matches_numpy_two_pass(self):
        rng = np.random.default_rng(0)
        data = rng.standard_cauchy(30_000)  # heavy tails stress the merge
        acc = _Welford()
        for chunk in np.array_split(data, 7):
            acc.add_chunk(chunk)
        assert acc.n == data.size
        assert acc.mean == pytest.approx(float(data.mean()), rel=1e-12)
        assert acc.variance == pytest.approx(float(data.var(ddof=1)), rel=1e-10)
        assert acc.std_error == pytest.approx(
            float(data.std(ddof=1) / math.sqrt(data.size)), rel=1e-10
        )

    def test_empty_and_single(self):
        acc = _Welford()
        acc.add_chunk(np.array([]))
        assert acc.n == 0
        acc.add_chunk(np.array([2.5]))
        assert acc.n == 1 and acc.mean == 2.5


class TestTopMass:
    def test_flags_concentrated_mass(self):
        top = _TopMass(k=10)
        scores = np.zeros(1000)
        scores[:5] = 1e6  # tiny fraction carries nearly all the mass
        top.add_chunk(scores + 1e-3)
        assert top.exploded()

    def test_benign_distribution_not_flagged(self):
        rng = np.random.default_rng(1)
        top = _TopMass(k=10)
        top.add_chunk(rng.normal(5.0, 1.0, size=1000))
        assert not top.exploded()


class TestExitFraction:
    def test_deterministic_and_worker_invariant(self, unit_atom):
        kw = dict(lam=0.5, samples=20_000, seed=9)
        a = exterior_exit_fraction(unit_atom, [2.0, 0.0, 0.0], **kw)
        b = exterior_exit_fraction(unit_atom, [2.0, 0.0, 0.0], workers=4, **kw)
        assert a == b
        assert 0.0 < a < 1.0

    def test_requires_killing(self, unit_atom):
        with pytest.raises(ConfigError):
            exterior_exit_fraction(unit_atom, [2.0, 0.0, 0.0], lam=0.0, samples=10)
