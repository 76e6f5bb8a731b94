import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sweepctl.dynamics import ControlPath, Mesh, SweepingProblem, catch_up, cost
from sweepctl.errors import BadMesh
from sweepctl.examples import EX1_U, ex1_problem, ex3_problem
from sweepctl.geometry import CONE_TOL
from sweepctl.models import AffinePerturbation, QuadraticRunningCost, QuadraticTerminalCost
from sweepctl.sets import Box
from sweepctl.transcription import assemble, discrete_cost, feasibility_residual, pack


def _one_dim():
    return SweepingProblem(
        T=1.0, x0=[0.0], a0=[[1.0]], b0=[1.0], U=Box([-1.0], [1.0]),
        A_sets=[Box.point([0.0])], B_sets=[Box.point([0.0])],
        g=AffinePerturbation([[0.0]], [[1.0]], [0.0]), phi=QuadraticTerminalCost([[0.0]], [1.0]),
        ell=QuadraticRunningCost(1, 1, 1, u_weight=1.0))


def _ex1_run(nu, u=EX1_U):
    p = ex1_problem()
    c = ControlPath.from_rates(p, Mesh.uniform(1.0, nu), np.asarray(u, float),
                               np.zeros((1, 2)), np.zeros(1))
    return p, c, catch_up(p, c)


class TestLayout:

    def test_tiny_count(self):
        # (nu+1) n + (nu+1) m n + (nu+1) m + nu d with nu = 2, n = m = d = 1
        dp = assemble(_one_dim(), 2)
        assert dp.layout.size == 3 + 3 + 3 + 2

    def test_ex1_nu4(self):
        p = ex1_problem()
        dp = assemble(p, 4)
        x, a, b, u = dp.layout.unpack(np.arange(dp.layout.size, dtype=float))
        assert x.shape == (5, 2) and u.shape == (4, 2)
        assert a.shape == (5, 1, 2) and b.shape == (5, 1)
        assert dp.constraint_counts()["endpoint"] == 1

    def test_no_reference(self):
        dp = assemble(ex1_problem(), 4)
        s = dp.summary()
        assert dp.constraint_counts()["proximity"] == 0
        assert s["parameters"]["has_reference"] is False
        json.loads(dp.to_json())

    def test_bad_mesh(self):
        with pytest.raises(BadMesh):
            assemble(ex1_problem(), 1)

    def test_pack_roundtrip(self):
        p, c, t = _ex1_run(8)
        dp = assemble(p, 8)
        z = pack(dp, c, t)
        x, a, b, u = dp.layout.unpack(z)
        np.testing.assert_array_equal(x, t.x)
        np.testing.assert_array_equal(u, c.u)


class TestFeasibility:

    def test_simulated_is_feasible(self):
        p, c, t = _ex1_run(50, (-1.0, -1.0))
        dp = assemble(p, 50)
        res = feasibility_residual(dp, pack(dp, c, t))
        assert max(res.values()) <= CONE_TOL

    def test_control_outside_u(self):
        p, c, t = _ex1_run(10)
        dp = assemble(p, 10)
        z = pack(dp, c, t)
        _, _, _, u = dp.layout.unpack(z)
        u = u.copy()
        u[3] = [1.5, -2.0]
        x, a, b, _ = dp.layout.unpack(z)
        res = feasibility_residual(dp, dp.layout.pack(x, a, b, u))
        assert res["control_u"] == pytest.approx(Box([-1, -1], [1, 1]).distance([1.5, -2.0]))

    def test_a_norm_band(self):
        p, c, t = _ex1_run(10)
        dp = assemble(p, 10)
        x, a, b, u = dp.layout.unpack(pack(dp, c, t))
        a = a.copy()
        delta = 1e-3
        a[4, 0] *= 1.0 + dp.band + delta
        res = feasibility_residual(dp, dp.layout.pack(x, a, b, u))
        assert res["a_norm"] == pytest.approx(delta, rel=1e-6)

    def test_dynamics_violation(self):
        p, c, t = _ex1_run(10)
        dp = assemble(p, 10)
        x, a, b, u = dp.layout.unpack(pack(dp, c, t))
        x = x.copy()
        x[5] += [0.01, 0.0]
        assert feasibility_residual(dp, dp.layout.pack(x, a, b, u))["dynamics"] > 0.1


class TestCost:

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1), st.integers(4, 200))
    def test_matches_simulator(self, u1, u2, nu):
        p, c, t = _ex1_run(nu, (u1, u2))
        dp = assemble(p, nu)
        assert discrete_cost(dp, pack(dp, c, t)) == pytest.approx(cost(p, c, t), abs=1e-12)

    def test_self_reference_adds_nothing(self):
        p = ex3_problem()
        mesh = Mesh.uniform(1.0, 40)
        c = ControlPath.from_rates(p, mesh, np.zeros(0), np.zeros((2, 2)), np.array([0.0, -0.4]))
        t = catch_up(p, c)
        dp = assemble(p, 40, reference=(c, t))
        z = pack(dp, c, t)
        assert discrete_cost(dp, z) == pytest.approx(cost(p, c, t), abs=1e-12)
        res = feasibility_residual(dp, z)
        assert res["proximity_state"] == 0.0 and res["proximity_velocity"] == 0.0

    def test_proximity_budget_overrun(self):
        p = ex3_problem()
        mesh = Mesh.uniform(1.0, 40)
        ref = ControlPath.from_rates(p, mesh, np.zeros(0), np.zeros((2, 2)), np.array([0.0, 1.0]))
        c = ControlPath.from_rates(p, mesh, np.zeros(0), np.zeros((2, 2)), np.array([0.0, -1.0]))
        dp = assemble(p, 40, reference=(ref, catch_up(p, ref)), prox_radius=0.1)
        t = catch_up(p, c)
        z = pack(dp, c, t)
        assert feasibility_residual(dp, z)["proximity_velocity"] > 0
        assert discrete_cost(dp, z) > cost(p, c, t)
