import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hemato.equilibrium import (FlowSegment, fixed_point_map, flow, flow_path, orbit_compose,
                                sample_accessible, solve_equilibrium)
from hemato.errors import DomainError
from hemato.model import EQUILIBRIUM_CASES, field, hormander_rank, invariant_box, random_params


def damped_fixed_point(p, iters=10_000):
    # independent oracle for the general case: damped iteration of the defining map
    x = 0.5
    for _ in range(iters):
        x = 0.5 * x + 0.5 * float(fixed_point_map(p, x))
    return x


def test_reference_equilibrium(pset_a):
    eq = solve_equilibrium(pset_a)
    assert (eq.p1, eq.p2, eq.p3) == (0.5, 1.0, 0.0)
    assert eq.case_tag == "Q2_ZERO" and eq.residual == 0.0


def test_middle_case_closed_form(pset_a):
    p = pset_a.replace(a=1.0, q1=1.0, q2=1.0, c1=1.0, c2=0.0, d=1.0)
    eq = solve_equilibrium(p)
    assert eq.case_tag == "Q2_NONZERO_C2_ZERO"
    assert eq.p1 == pytest.approx(math.sqrt(2) - 1, rel=1e-14)
    assert eq.p2 == pytest.approx(eq.p1, rel=1e-14)
    assert np.max(np.abs(field(p, eq.x, 0))) < 1e-12


def test_general_case_against_damped_iteration(pset_a):
    p = pset_a.replace(a=1.0, q1=1.0, q2=1.0, c1=1.0, c2=1.0, d=1.0)
    eq = solve_equilibrium(p)
    assert eq.case_tag == "GENERAL"
    assert eq.residual < 1e-10
    assert eq.p1 == pytest.approx(damped_fixed_point(p), abs=1e-9)


@pytest.mark.parametrize("case", EQUILIBRIUM_CASES)
def test_random_residuals(case):
    rng = np.random.default_rng(7)
    for _ in range(100):
        p = random_params(rng, case)
        eq = solve_equilibrium(p)
        assert eq.case_tag == case
        assert eq.residual < 1e-10
        assert 0 < eq.p1 <= 1 and eq.p2 > 0 and eq.p3 == 0


@given(st.integers(0, 2**31))
def test_fixed_point_map_decreasing(seed):
    p = random_params(np.random.default_rng(seed), "GENERAL")
    vals = fixed_point_map(p, np.linspace(0, 1, 200))
    assert np.all(np.diff(vals) < 0)


def test_equilibrium_inside_box():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = random_params(rng)
        assert invariant_box(p).contains(solve_equilibrium(p).x, inflate=1e-12)


def test_solver_rejects_bad_tolerance(pset_a):
    with pytest.raises(DomainError):
        solve_equilibrium(pset_a, tol=0)


class TestFlow:
    def test_x3_closed_form(self, pset_a):
        x = flow(pset_a, [0.5, 1.0, 0.0], 1, 1.0)
        assert x[2] == pytest.approx(1 - math.exp(-1), abs=1e-8)
        # x3 feeds back into x1 through q3, so x1 drops below its equilibrium value
        assert x[0] < 0.5

    def test_convergence_to_equilibrium(self, pset_a):
        x = flow(pset_a, [1.0, 2.0, 1.0], 0, 50.0)
        assert np.max(np.abs(x - [0.5, 1.0, 0.0])) < 1e-6

    def test_zero_time_is_identity(self, pset_a):
        np.testing.assert_array_equal(flow(pset_a, [0.4, 0.9, 0.1], 1, 0.0), [0.4, 0.9, 0.1])

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0, 5), st.floats(0, 5), st.integers(0, 1))
    def test_semigroup(self, pset_a, s, t, i):
        x0 = [0.45, 1.2, 0.3]
        a = flow(pset_a, x0, i, s + t)
        b = flow(pset_a, flow(pset_a, x0, i, s), i, t)
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_path_ends_at_flow(self, pset_a):
        ts, xs = flow_path(pset_a, [0.4, 1.5, 0.5], 1, 3.0)
        assert ts[0] == 0 and ts[-1] == pytest.approx(3.0)
        np.testing.assert_allclose(xs[-1], flow(pset_a, [0.4, 1.5, 0.5], 1, 3.0), atol=1e-12)

    @pytest.mark.parametrize("x0", [[1.2, 0, 0], [0.5, -1, 0], [0.5, 0, -1]])
    def test_rejects_outside_state_space(self, pset_a, x0):
        with pytest.raises(DomainError):
            flow(pset_a, x0, 0, 1.0)

    def test_rejects_negative_time_and_bad_regime(self, pset_a):
        with pytest.raises(DomainError):
            flow(pset_a, [0.5, 1, 0], 0, -1.0)
        with pytest.raises(DomainError):
            flow(pset_a, [0.5, 1, 0], 2, 1.0)


class TestOrbits:
    def test_empty_composition(self, pset_a):
        np.testing.assert_array_equal(orbit_compose(pset_a, [0.4, 1, 0.2], []), [0.4, 1, 0.2])

    def test_single_segment(self, pset_a):
        np.testing.assert_array_equal(orbit_compose(pset_a, [0.4, 1, 0.2], [FlowSegment(1, 2.0)]),
                                      flow(pset_a, [0.4, 1, 0.2], 1, 2.0))

    def test_zero_duration_segment(self, pset_a):
        x = orbit_compose(pset_a, [0.5, 1, 0], [(1, 1.0), (0, 0.0)])
        np.testing.assert_array_equal(x, flow(pset_a, [0.5, 1, 0], 1, 1.0))

    @pytest.mark.parametrize("seg", [(2, 1.0), (0, -1.0), (0, math.inf)])
    def test_segment_validation(self, seg):
        with pytest.raises(DomainError):
            FlowSegment(*seg)

    def test_accessible_zero_durations(self, pset_a):
        pts = sample_accessible(pset_a, 1, horizon=0.0)
        np.testing.assert_array_equal(pts[0], [0.5, 1.0, 0.0])

    def test_accessible_in_box_with_rank3(self, pset_a):
        pts = sample_accessible(pset_a, 50, rng_seed=1)
        assert np.all(invariant_box(pset_a).contains(pts, inflate=1e-9))
        assert np.any(hormander_rank(pset_a, pts) == 3)

    def test_accessible_reproducible(self, pset_a):
        np.testing.assert_array_equal(sample_accessible(pset_a, 5, rng_seed=9),
                                      sample_accessible(pset_a, 5, rng_seed=9))
