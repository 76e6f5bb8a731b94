import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from sweepctl.dynamics import Mesh, catch_up, cost
from sweepctl.examples import (
    EX2_T0,
    EX2_T1,
    EX3_COST,
    EX3_RATES,
    analytic_cost_ex1,
    analytic_cost_ex3,
    ex1_problem,
    ex2_first_rate,
    ex2_problem,
    ex3_problem,
)
from sweepctl.optimizer import (
    SolveOptions,
    descend,
    fd_gradient,
    grid_refine,
    piecewise_constant_u,
    seed_points,
    solve,
    two_phase_angle_rate,
    two_phase_b_rate,
)

BOX = (np.array([-1.0, -1.0]), np.array([1.0, 1.0]))


class TestGridRefine:

    def test_quadratic(self):
        p, f = grid_refine(lambda p: (p[0] - 0.3) ** 2 + (p[1] + 0.4) ** 2, *BOX, 4, 11)
        np.testing.assert_allclose(p, [0.3, -0.4], atol=1e-3)

    def test_ex3_closed_form(self):
        p, f = grid_refine(lambda p: analytic_cost_ex3(*p), *BOX)
        np.testing.assert_allclose(p, EX3_RATES, atol=2e-3)
        assert f == pytest.approx(EX3_COST, abs=1e-5)

    def test_ex1_closed_form(self):
        p, f = grid_refine(lambda p: analytic_cost_ex1(p[0], p[1], p[0], p[1]), *BOX)
        np.testing.assert_allclose(p, [-5 / 6, -1 / 3], atol=2e-3)

    def test_tie_break_lexicographic(self):
        p, f = grid_refine(lambda p: 0.0, *BOX, 2, 5)
        np.testing.assert_array_equal(p, [-1.0, -1.0])

    def test_too_many_parameters(self):
        with pytest.raises(ValueError):
            grid_refine(lambda p: 0.0, np.zeros(5), np.ones(5))


@pytest.fixture(scope="module")
def exact():
    b0, bs = sympy.symbols("b0 bs")
    t = 1 / (2 * (1 - b0))
    J = (t**2 + (1 + t + bs * (1 - t)) ** 2 + t * b0**2 + (1 - t) * bs**2) / 2
    grad = [sympy.lambdify((b0, bs), sympy.diff(J, v)) for v in (b0, bs)]
    return lambda p: np.array([g(*p) for g in grad])


class TestGradient:

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-0.95, 0.45), st.floats(-0.95, -0.05))
    def test_fd_matches_closed_form(self, exact, b0, bs):
        p = np.array([b0, bs])
        g = fd_gradient(lambda q: analytic_cost_ex3(*q), p, *BOX, fd_h=1e-6)
        np.testing.assert_allclose(g, exact(p), atol=1e-7)

    def test_second_order_error(self, exact):
        p = np.array([-0.3, -0.6])
        f = lambda q: analytic_cost_ex3(*q)  # noqa: E731
        errs = [np.abs(fd_gradient(f, p, *BOX, fd_h=h) - exact(p)).max() for h in (1e-2, 5e-3)]
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)

    def test_one_sided_at_bound(self):
        g = fd_gradient(lambda q: q[0] ** 2, np.array([1.0]), np.array([-1.0]), np.array([1.0]))
        assert g[0] == pytest.approx(2.0, abs=1e-5)


class TestDescend:

    def test_kink(self):
        # the minimizer sits on the kink |p1| = 0; gradient sampling must reach it
        f = lambda p: abs(p[0] - 0.2) + (p[1] - 0.1) ** 2  # noqa: E731
        p, fv, *_, costs = descend(f, np.array([0.9, -0.8]), *BOX, SolveOptions())
        np.testing.assert_allclose(p, [0.2, 0.1], atol=1e-6)
        assert np.all(np.diff(costs) <= 0)

    def test_smooth_converges_on_gradient_map(self):
        f = lambda p: (p[0] - 0.5) ** 2 + 2 * (p[1] + 0.25) ** 2  # noqa: E731
        p, fv, it, conv, reason, trail, costs = descend(f, np.zeros(2), *BOX, SolveOptions())
        np.testing.assert_allclose(p, [0.5, -0.25], atol=1e-7)

    def test_bound_constrained(self):
        f = lambda p: (p[0] - 3.0) ** 2 + p[1] ** 2  # noqa: E731
        p, *_ = descend(f, np.zeros(2), *BOX, SolveOptions())
        np.testing.assert_allclose(p, [1.0, 0.0], atol=1e-7)

    def test_seed_points(self):
        pts = seed_points(*BOX, 5)
        np.testing.assert_array_equal(pts[0], [0.0, 0.0])
        np.testing.assert_array_equal(pts[1], [-1.0, -1.0])
        assert len(pts) == 5


@pytest.fixture(scope="module")
def ex1_small():
    p = ex1_problem()
    fam = piecewise_constant_u(p)
    return p, fam, solve(p, fam, Mesh.uniform(1.0, 400))


class TestSolve:

    def test_ex1(self, ex1_small):
        p, fam, res = ex1_small
        np.testing.assert_allclose(res.params, [-5 / 6, -1 / 3], atol=1e-3)
        assert res.cost == pytest.approx(43 / 24, abs=1e-6)

    def test_reported_cost_is_simulated_cost(self, ex1_small):
        p, fam, res = ex1_small
        assert res.cost == pytest.approx(cost(p, res.controls, res.trajectory), abs=1e-12)

    def test_monotone_incumbent(self, ex1_small):
        assert np.all(np.diff(ex1_small[2].costs) <= 0)

    def test_deterministic(self, ex1_small):
        p, fam, res = ex1_small
        again = solve(p, fam, Mesh.uniform(1.0, 400))
        np.testing.assert_array_equal(again.trail, res.trail)
        assert again.cost == res.cost

    def test_multistart(self):
        p = ex1_problem()
        fam = piecewise_constant_u(p)
        res = solve(p, fam, Mesh.uniform(1.0, 200), SolveOptions(levels=0, seeds=3))
        assert res.cost == pytest.approx(43 / 24, abs=1e-5)

    def test_summary(self, ex1_small):
        s = ex1_small[2].summary(ex1_small[1].names)
        assert set(s["params"]) == {"u1", "u2"}


FAMILIES = {
    "ex1": lambda: (ex1_problem(), piecewise_constant_u(ex1_problem(), segments=3)),
    "ex2": lambda: (ex2_problem(), two_phase_angle_rate(ex2_problem(), 0, ex2_first_rate,
                                                        (EX2_T1, EX2_T0))),
    "ex2raw": lambda: (ex2_problem(), two_phase_angle_rate(ex2_problem(), 0)),
    "ex3": lambda: (ex3_problem(), two_phase_b_rate(ex3_problem(), 1)),
}


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(sorted(FAMILIES)), st.data(), st.integers(10, 200))
def test_decoded_controls_are_feasible(name, data, nu):
    p, fam = FAMILIES[name]()
    raw = data.draw(st.lists(st.floats(-5, 5), min_size=fam.dim, max_size=fam.dim))
    ctrl = fam.decode(np.array(raw), Mesh.uniform(1.0, nu))
    ctrl.validate(p)
    catch_up(p, ctrl)


def test_event_switch_lands_on_first_contact():
    p = ex3_problem()
    fam = two_phase_b_rate(p, 1)
    mesh = Mesh.uniform(1.0, 1000)
    ctrl = fam.decode(np.array([0.0, -0.5]), mesh)
    rates = ctrl.beta[:, 1]
    k = int(np.flatnonzero(rates != 0.0)[0])
    assert mesh.nodes[k] == pytest.approx(0.5, abs=2e-3)
    assert math.isclose(rates[-1], -0.5)
