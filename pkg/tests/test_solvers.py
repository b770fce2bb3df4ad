import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oblique_rbsde import (
    FULL_TREE,
    GeneralCosts,
    GeneratorSpec,
    LinearCosts,
    ProblemSpec,
    ScalarField,
    SolverOptions,
    build_lattice,
    driver_step,
    oblique_project,
    residuals,
    solve,
    solve_direct,
    solve_penalty_oblique,
    solve_penalty_upper,
    solve_picard,
)
from oblique_rbsde.exceptions import (
    ContractionError,
    PicardNonConvergence,
    ProjectionNonConvergence,
)
from oblique_rbsde.problems import (
    capped_rate_problem,
    cyclic_problem,
    martingale_problem,
    random_costs,
    random_problem,
    two_rate_problem,
    zero_problem,
)
from oblique_rbsde.solvers import expected_increment_totals, q_violation


def const_spec(m, costs, barriers, rates=None, y_coefs=None, z_coefs=None, terminals=None):
    rates = rates or [0.0] * m
    return ProblemSpec(m, 1.0, GeneratorSpec.constant_rates(rates, y_coefs, z_coefs), costs,
                       tuple(ScalarField.constant(s) for s in barriers),
                       tuple(ScalarField.constant(g) for g in (terminals or [0.0] * m)))


class TestDriverStep:
    def test_zero_generator_is_identity(self):
        spec = const_spec(1, LinearCosts(((0.0,),)), [1.0])
        assert driver_step(0.7, 0.0, 0.0, 0, spec, 0.25) == 0.7

    def test_constant_rate(self):
        spec = const_spec(1, LinearCosts(((0.0,),)), [1.0], rates=[1.0])
        assert driver_step(0.0, 0.0, 0.0, 0, spec, 0.25) == 0.25

    def test_implicit_linear_term(self):
        spec = const_spec(1, LinearCosts(((0.0,),)), [1.0], y_coefs=[-1.0])
        assert driver_step(1.0, 0.0, 0.0, 0, spec, 0.25) == pytest.approx(0.8, abs=1e-15)

    def test_contraction_guard(self):
        spec = const_spec(1, LinearCosts(((0.0,),)), [1.0], y_coefs=[4.0])
        with pytest.raises(ContractionError):
            driver_step(1.0, 0.0, 0.0, 0, spec, 0.25)


class TestObliqueProject:
    def test_interior_point_unchanged(self):
        spec = const_spec(2, LinearCosts.uniform(2, 0.1), [10, 10])
        res = oblique_project(np.array([1.0, 0.95]), 0.0, 0.0, spec)
        assert np.array_equal(res.y, [1.0, 0.95])
        assert not res.dk_plus.any() and not res.dk_minus.any()

    def test_lower_barrier_binds(self):
        spec = const_spec(2, LinearCosts.uniform(2, 0.1), [10, 10])
        res = oblique_project(np.array([1.0, 0.3]), 0.0, 0.0, spec)
        assert res.y == pytest.approx([1.0, 0.9], abs=1e-15)
        assert res.dk_plus == pytest.approx([0.0, 0.6], abs=1e-15)
        assert not res.dk_minus.any()
        assert res.sweeps == 1

    def test_upper_clip_wins_when_barrier_outside_region(self):
        # S is not in Q here (h_01(S_1) = 9.9 > S_0): the map's fixed point is
        # (0.5, 0.95) and it sits outside Q.
        spec = const_spec(2, LinearCosts.uniform(2, 0.1), [0.5, 10])
        res = oblique_project(np.array([1.0, 0.95]), 0.0, 0.0, spec)
        assert res.y == pytest.approx([0.5, 0.95], abs=1e-15)

    def test_three_modes(self):
        spec = const_spec(3, LinearCosts.uniform(3, 0.1), [10, 10, 10])
        res = oblique_project(np.array([0.0, 0.0, 1.0]), 0.0, 0.0, spec)
        assert res.y == pytest.approx([0.9, 0.9, 1.0], abs=1e-15)
        assert res.sweeps <= 2

    def test_free_loop_does_not_settle(self):
        k = ((0, -0.1), (-0.1, 0))
        spec = const_spec(2, LinearCosts(k), [1e9, 1e9])
        with pytest.raises(ProjectionNonConvergence) as info:
            oblique_project(np.array([0.0, 0.0]), 0.0, 0.0, spec)
        assert info.value.last_iterate is not None

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 5), st.integers(0, 2**32 - 1))
    def test_fixed_point_in_region_and_minimal(self, m, seed):
        rng = np.random.default_rng(seed)
        spec = const_spec(m, random_costs(rng, m), [3.0] * m)
        ybar = rng.uniform(-3, 5, size=m)
        res = oblique_project(ybar, 0.0, 0.0, spec)
        y = res.y
        assert np.all(y <= 3.0)
        assert np.all(y >= spec.lower_barriers(0.0, y) - 1e-12)
        # increments act only where their barrier binds
        assert np.all((res.dk_plus == 0) | (np.abs(y - spec.lower_barriers(0.0, y)) < 1e-12))
        assert np.all((res.dk_minus == 0) | (y == 3.0))
        assert res.sweeps <= m


def test_general_costs_project():
    costs = GeneralCosts.affine([[1, 0.5], [0.5, 1]], [[0, 0.1], [0.1, 0]])
    spec = const_spec(2, costs, [10, 10])
    res = oblique_project(np.array([2.0, 0.0]), 0.0, 0.0, spec)
    assert res.y == pytest.approx([2.0, 0.9])


class TestDirect:
    def test_zero_problem(self):
        sol = solve_direct(zero_problem(), build_lattice(1.0, 8))
        for arr in sol.Y + sol.Z + sol.dk_plus + sol.dk_minus:
            assert not arr.any()

    def test_two_rate(self):
        sol = solve_direct(two_rate_problem(), build_lattice(1.0, 16))
        assert sol.y0 == pytest.approx([1.0, 0.9], abs=1e-12)
        assert all(not d.any() for d in sol.dk_minus)

    def test_capped_rate_n4(self):
        lat = build_lattice(1.0, 4)
        sol = solve_direct(capped_rate_problem(), lat)
        assert [float(y[0, 0]) for y in sol.Y] == pytest.approx([0.5, 0.5, 0.5, 0.25, 0.0], abs=1e-15)
        assert expected_increment_totals(sol)[1][0] == pytest.approx(0.5, abs=1e-12)
        assert residuals(sol, capped_rate_problem()).worst() <= 1e-12

    def test_martingale(self):
        spec = martingale_problem()
        lat = build_lattice(1.0, 16)
        sol = solve_direct(spec, lat)
        for n in range(16):
            assert np.allclose(sol.Y[n], lat.states(n), atol=1e-12, rtol=0)
            assert np.allclose(sol.Z[n], 1.0, atol=1e-12, rtol=0)
            assert not sol.dk_plus[n].any() and not sol.dk_minus[n].any()

    def test_solution_stays_in_region(self):
        spec = random_problem(np.random.default_rng(5), m=3, y_coef=0.5, z_coef=0.5)
        sol = solve_direct(spec, build_lattice(1.0, 32))
        up, low = q_violation(sol, spec)
        assert up <= 0 and low <= 1e-12

    def test_same_answer_on_full_tree(self):
        spec = random_problem(np.random.default_rng(8), m=2)
        rec = solve_direct(spec, build_lattice(1.0, 6))
        full = solve_direct(spec, build_lattice(1.0, 6, FULL_TREE))
        for n in range(7):
            ups = full.lattice.up_counts(n)
            assert np.allclose(full.Y[n], rec.Y[n][:, ups], atol=1e-13, rtol=0)


class TestPenaltyUpper:
    def test_no_penalty_is_plain_bsde(self):
        sol = solve_penalty_upper(capped_rate_problem(), build_lattice(1.0, 8), n_pen=0)
        assert sol.y0[0] == pytest.approx(1.0, abs=1e-14)

    def test_far_barrier_never_triggers(self):
        spec = const_spec(1, LinearCosts(((0.0,),)), [1e9], rates=[1.0])
        lat = build_lattice(1.0, 8)
        for n_pen in (1, 100, 1e6):
            sol = solve_penalty_upper(spec, lat, n_pen=n_pen)
            assert sol.y0[0] == pytest.approx(1.0, abs=1e-14)

    def test_decreases_toward_reflected_value(self):
        lat = build_lattice(1.0, 32)
        vals = [solve_penalty_upper(capped_rate_problem(), lat, n_pen=2.0**p).y0[0] for p in range(2, 14, 2)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert vals[-1] - 0.5 < 5e-3


class TestPenaltyOblique:
    def test_zero_problem(self):
        sol = solve_penalty_oblique(zero_problem(), build_lattice(1.0, 8), n_pen=1000)
        assert all(not y.any() for y in sol.Y)

    def test_increases_toward_reflected_value(self):
        lat = build_lattice(1.0, 16)
        vals = [solve_penalty_oblique(two_rate_problem(), lat, n_pen=2.0**p).y0[1] for p in range(4, 13, 2)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        assert 0.9 - vals[-1] < 5e-3

    def test_single_node_penalised_root(self):
        # one step from terminal values (1.0, 0.3): the limit projection is (1.0, 0.9)
        spec = const_spec(2, LinearCosts.uniform(2, 0.1), [1.0, 1.0], terminals=[1.0, 0.3])
        lat = build_lattice(1.0, 1)
        for n_pen in (10.0, 100.0, 1e4):
            y = solve_penalty_oblique(spec, lat, n_pen=n_pen).Y[0][:, 0]
            assert y[1] >= y[0] - 0.1 - 2.0 / n_pen
            assert y[1] <= 0.9 + 1e-12

    def test_rejects_general_costs(self):
        costs = GeneralCosts.affine([[1, 0.5], [0.5, 1]], [[0, 0.1], [0.1, 0]])
        with pytest.raises(TypeError):
            solve_penalty_oblique(const_spec(2, costs, [10, 10]), build_lattice(1.0, 4), n_pen=10)


class TestPicard:
    def test_zero_problem_one_iteration(self):
        sol = solve_picard(zero_problem(), build_lattice(1.0, 8))
        assert sol.meta["iterations"] == 1
        assert all(not y.any() for y in sol.Y)

    def test_two_rate_iterates(self):
        lat = build_lattice(1.0, 8)
        sol = solve_picard(two_rate_problem(), lat)
        assert sol.meta["iterations"] == 2
        assert sol.y0 == pytest.approx([1.0, 0.9], abs=1e-12)
        assert sol.sup_gap(solve_direct(two_rate_problem(), lat)) <= 1e-12

    def test_cyclic_matches_direct(self):
        lat = build_lattice(1.0, 16)
        assert solve_picard(cyclic_problem(), lat).sup_gap(solve_direct(cyclic_problem(), lat)) <= 1e-9

    def test_iteration_cap(self):
        opts = SolverOptions(picard_max_iters=1)
        with pytest.raises(PicardNonConvergence) as info:
            solve_picard(cyclic_problem(), build_lattice(1.0, 8), opts)
        assert info.value.gaps


def test_residuals_on_reference_problems():
    lat = build_lattice(1.0, 16)
    for spec in (zero_problem(), two_rate_problem(), capped_rate_problem(), cyclic_problem()):
        assert residuals(solve_direct(spec, lat), spec).worst() <= 1e-12


def test_dispatch_rejects_unknown_backend():
    with pytest.raises(ValueError):
        solve(zero_problem(), build_lattice(1.0, 2), "newton")
