import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sweepctl.dynamics import (
    ControlPath,
    Mesh,
    SweepingProblem,
    catch_up,
    cost,
    hitting_time,
    read_trajectory_csv,
    sup_distance,
)
from sweepctl.errors import BadMesh, EmptyPolyhedron, InfeasiblePoint, InvalidControl
from sweepctl.examples import EX1_COST, EX1_U, ex1_problem, ex2_problem, ex3_problem
from sweepctl.geometry import ACTIVE_TOL, CONE_TOL, FEAS_TOL
from sweepctl.models import AffinePerturbation, QuadraticRunningCost, QuadraticTerminalCost
from sweepctl.optimizer import angle_path
from sweepctl.sets import Ball, Box


def _static_problem(x0, g0=(0.0, 0.0), phi_c=(0.0, 0.0)):
    return SweepingProblem(
        T=1.0, x0=x0, a0=[[1.0, 0.0]], b0=[1.0], U=Box(np.zeros(0), np.zeros(0)),
        A_sets=[Box.point([0.0, 0.0])], B_sets=[Box.point([0.0])],
        g=AffinePerturbation.constant(g0), phi=QuadraticTerminalCost(np.zeros((2, 2)), phi_c),
        ell=QuadraticRunningCost(2, 1, 0))


def _ex1(u, nu=2000):
    p = ex1_problem()
    c = ControlPath.from_rates(p, Mesh.uniform(1.0, nu), np.asarray(u, float),
                               np.zeros((1, 2)), np.zeros(1))
    return p, c, catch_up(p, c)


def _ex3(b0, nu=2000):
    p = ex3_problem()
    c = ControlPath.from_rates(p, Mesh.uniform(1.0, nu), np.zeros(0), np.zeros((2, 2)),
                               np.array([0.0, b0]))
    return p, c, catch_up(p, c)


class TestMesh:

    def test_uniform(self):
        m = Mesh.uniform(2.0, 4)
        np.testing.assert_allclose(m.steps, 0.5)
        assert m.nu == 4 and m.T == 2.0

    @pytest.mark.parametrize("nodes", [[0.0], [0.1, 1.0], [0.0, 0.5, 0.5]])
    def test_bad(self, nodes):
        with pytest.raises(BadMesh):
            Mesh(nodes)

    def test_json(self):
        m = Mesh([0.0, 0.1, 0.5, 1.0])
        np.testing.assert_array_equal(Mesh.from_json(m.to_json()).nodes, m.nodes)
        assert Mesh.uniform(1.0, 8).to_json() == {"T": 1.0, "nu": 8}


class TestProblem:

    def test_infeasible_start(self):
        with pytest.raises(InfeasiblePoint):
            _static_problem([2.0, 0.0])

    def test_bad_dimensions(self):
        with pytest.raises(ValueError):
            SweepingProblem(
                T=1.0, x0=[0.0, 0.0], a0=[[1.0, 0.0]], b0=[1.0], U=Box([0.0], [1.0]),
                A_sets=[Box.point([0.0, 0.0])], B_sets=[Box.point([0.0])],
                g=AffinePerturbation.constant([0.0, 0.0]),
                phi=QuadraticTerminalCost(np.eye(2), [0, 0]), ell=QuadraticRunningCost(2, 1, 1))


class TestCatchUp:

    def test_stationary(self):
        p = _static_problem([0.0, 0.0])
        c = ControlPath.from_rates(p, Mesh.uniform(1.0, 50), np.zeros(0))
        t = catch_up(p, c)
        np.testing.assert_array_equal(t.x, 0.0)
        np.testing.assert_array_equal(t.eta, 0.0)
        assert hitting_time(t, 0) is None

    def test_ex1_optimal_reaches_line_at_end(self):
        _, _, t = _ex1(EX1_U)
        np.testing.assert_allclose(t.x[-1], [2 / 3, 2 / 3], atol=2e-3)
        assert t.x[-1] @ [1.0, 2.0] == pytest.approx(2.0, abs=2e-3)
        assert np.all(t.eta < 1e-9)

    def test_ex3_phase_one_slides(self):
        _, c, t = _ex3(0.0, nu=1000)
        k = 400  # t = 0.4, before the hit at 1/2
        np.testing.assert_allclose(t.velocities[:k], np.tile([-1.0, 1.0], (k, 1)), atol=1e-9)
        np.testing.assert_allclose(t.x[k], [-0.4, 1.4], atol=1e-12)

    def test_nnls_multipliers_agree(self):
        p, c, _ = _ex3(-0.5, nu=200)
        a = catch_up(p, c, multipliers="kkt")
        b = catch_up(p, c, multipliers="nnls")
        np.testing.assert_allclose(a.eta, b.eta, atol=1e-7)

    def test_rejects_invalid_controls(self):
        p = ex1_problem()
        c = ControlPath.from_rates(p, Mesh.uniform(1.0, 10), np.array([2.0, 0.0]))
        with pytest.raises(InvalidControl):
            catch_up(p, c)

    def test_empty_set(self):
        p = SweepingProblem(
            T=1.0, x0=[0.0], a0=[[1.0], [-1.0]], b0=[1.0, 0.0], U=Box(np.zeros(0), np.zeros(0)),
            A_sets=[Box.point([0.0]), Box.point([0.0])],
            B_sets=[Box([-2.0], [0.0]), Box.point([0.0])],
            g=AffinePerturbation.constant([0.0]), phi=QuadraticTerminalCost([[0.0]], [0.0]),
            ell=QuadraticRunningCost(1, 2, 0))
        c = ControlPath.from_rates(p, Mesh.uniform(1.0, 10), np.zeros(0), None, [-2.0, 0.0])
        with pytest.raises(EmptyPolyhedron):
            catch_up(p, c)


class TestHittingTime:

    def test_ex3_formula(self):
        _, c, t = _ex3(0.0)
        assert hitting_time(t, 1) == pytest.approx(0.5, abs=2 * c.mesh.steps[0])

    def test_ex1_formula(self):
        # t* = -3 / (2 (u1 + 2 u2)) = 1 at the optimum
        _, _, t = _ex1(EX1_U)
        assert hitting_time(t, 0) == pytest.approx(1.0, abs=5e-3)

    def test_ex1_early_hit(self):
        _, _, t = _ex1((-1.0, -1.0))
        assert hitting_time(t, 0) == pytest.approx(0.5, abs=1e-3)

    def test_active_from_start(self):
        _, _, t = _ex3(0.0, nu=100)
        assert hitting_time(t, 0) == 0.0


class TestCost:

    def test_ex1_optimal(self):
        p, c, t = _ex1(EX1_U)
        assert cost(p, c, t) == pytest.approx(EX1_COST, abs=5e-3)

    def test_ex3_zero_rates(self):
        # x(1) = (-1/2, 3/2): 1/2 (1/4 + 9/4) = 1.25
        p, c, t = _ex3(0.0)
        np.testing.assert_allclose(t.x[-1], [-0.5, 1.5], atol=1e-9)
        assert cost(p, c, t) == pytest.approx(1.25, abs=1e-9)

    def test_zero_cost(self):
        p = _static_problem([0.0, 0.0], g0=(1.0, 0.5))
        c = ControlPath.from_rates(p, Mesh.uniform(1.0, 20), np.zeros(0))
        assert cost(p, c, catch_up(p, c)) == 0.0


class TestExport:

    def test_csv_columns(self, tmp_path):
        p, c, t = _ex3(-0.5, nu=50)
        t.to_csv(tmp_path / "traj.csv")
        cols = read_trajectory_csv(tmp_path / "traj.csv")
        assert list(cols) == ["t", "x1", "x2", "eta1", "eta2", "slack1", "slack2"]
        np.testing.assert_array_equal(cols["x2"], t.x[:, 1])
        np.testing.assert_array_equal(cols["eta1"][1:], t.eta[:, 0])
        assert cols["eta1"][0] == 0.0

    def test_control_json(self, tmp_path):
        p, c, _ = _ex3(-0.5, nu=50)
        c.save(tmp_path / "c.json")
        d = ControlPath.load(tmp_path / "c.json")
        np.testing.assert_array_equal(d.b, c.b)
        np.testing.assert_array_equal(d.a, c.a)


# --------------------------------------------------------------------------
# invariants


@st.composite
def controlled_runs(draw):
    which = draw(st.sampled_from(["ex1", "ex2", "ex3"]))
    nu = draw(st.integers(20, 300))
    mesh = Mesh.uniform(1.0, nu)
    if which == "ex1":
        p = ex1_problem()
        u = draw(st.lists(st.floats(-1, 1), min_size=2, max_size=2))
        c = ControlPath.from_rates(p, mesh, np.array(u), np.zeros((1, 2)), np.zeros(1))
    elif which == "ex2":
        p = ex2_problem()
        r = draw(st.floats(-math.pi / 2, math.pi / 2))
        c = angle_path(p, mesh, 0, np.full(nu, r))
    else:
        p = ex3_problem()
        r = draw(st.floats(-1, 1))
        c = ControlPath.from_rates(p, mesh, np.zeros(0), np.zeros((2, 2)), np.array([0.0, r]))
    return p, c


class TestInvariants:

    @settings(max_examples=60, deadline=None)
    @given(controlled_runs())
    def test_feasible(self, run):
        p, c = run
        t = catch_up(p, c)
        assert t.slacks.max() <= FEAS_TOL

    @settings(max_examples=60, deadline=None)
    @given(controlled_runs())
    def test_complementarity(self, run):
        p, c = run
        t = catch_up(p, c)
        pos = t.eta > 1e-8
        assert np.all(t.eta >= 0)
        assert np.all(np.abs(t.slacks[1:][pos]) <= ACTIVE_TOL)

    @settings(max_examples=60, deadline=None)
    @given(controlled_runs())
    def test_reconstruction(self, run):
        p, c = run
        t = catch_up(p, c)
        w = -t.velocities + p.g(t.x[:-1], c.u)
        rec = np.einsum("jm,jmn->jn", t.eta, c.a[1:])
        assert np.max(np.abs(w - rec)) <= CONE_TOL

    @settings(max_examples=20, deadline=None)
    @given(controlled_runs())
    def test_deterministic(self, run):
        p, c = run
        np.testing.assert_array_equal(catch_up(p, c).x, catch_up(p, c).x)

    @pytest.mark.parametrize("rate", [0.5, 0.350021, -0.8])
    def test_self_convergence(self, rate):
        p = ex2_problem()
        xs = {nu: catch_up(p, angle_path(p, Mesh.uniform(1.0, nu), 0, np.full(nu, rate))).x
              for nu in (250, 500, 1000, 2000)}
        e = [sup_distance(xs[n], xs[2 * n]) for n in (250, 500, 1000)]
        assert e[0] > e[1] > e[2]
        orders = [math.log2(e[k] / e[k + 1]) for k in range(2)]
        assert min(orders) >= 0.9
