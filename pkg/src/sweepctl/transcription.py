"""The discrete problem over one mesh as an explicit finite-dimensional program.

Decision vector layout, in order: node states ``x`` of shape ``(nu+1, n)``,
node normals ``a`` of shape ``(nu+1, m, n)``, node offsets ``b`` of shape
``(nu+1, m)`` and interval controls ``u`` of shape ``(nu, d)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dynamics import ControlPath, Mesh, SweepingProblem, SweepTrajectory, running_terms
from .errors import BadMesh
from .geometry import ACTIVE_TOL, CONE_TOL, MovingPolyhedron, cone_multipliers

DEFAULT_PROX_RADIUS = 1.0


@dataclass(frozen=True)
class Layout:
    n: int
    m: int
    d: int
    nu: int

    @property
    def sizes(self) -> tuple:
        nu, n, m, d = self.nu, self.n, self.m, self.d
        return ((nu + 1) * n, (nu + 1) * m * n, (nu + 1) * m, nu * d)

    @property
    def size(self) -> int:
        return sum(self.sizes)

    def pack(self, x, a, b, u) -> np.ndarray:
        return np.concatenate([np.ravel(x), np.ravel(a), np.ravel(b), np.ravel(u)])

    def unpack(self, z):
        z = np.asarray(z, dtype=float)
        if z.size != self.size:
            raise ValueError(f"decision vector has {z.size} entries, layout needs {self.size}")
        cuts = np.cumsum(self.sizes)[:-1]
        x, a, b, u = np.split(z, cuts)
        nu, n, m, d = self.nu, self.n, self.m, self.d
        return (x.reshape(nu + 1, n), a.reshape(nu + 1, m, n), b.reshape(nu + 1, m),
                u.reshape(nu, d))


@dataclass(frozen=True, eq=False)
class DiscreteProblem:
    """Cost and constraints of the discretized problem on a uniform mesh."""

    problem: SweepingProblem
    mesh: Mesh
    layout: Layout
    reference: tuple | None
    prox_radius: float
    band: float

    @property
    def nu(self) -> int:
        return self.mesh.nu

    def constraint_counts(self) -> dict:
        nu, n, m, d = self.nu, self.problem.n, self.problem.m, self.problem.d
        counts = {
            "dynamics": nu * n,
            "state": nu * m,
            "initial": n + m * n + m,
            "endpoint": m,
            "control_u": nu if d else 0,
            "rate_a": nu * m,
            "rate_b": nu * m,
            "a_norm": 2 * (nu + 1) * m,
            "proximity": 2 if self.reference is not None else 0,
        }
        return counts

    def summary(self) -> dict:
        p = self.problem
        return {
            "name": p.name,
            "dimensions": {"n": p.n, "m": p.m, "d": p.d, "nu": self.nu},
            "T": self.mesh.T,
            "layout_size": self.layout.size,
            "layout_blocks": dict(zip(("x", "a", "b", "u"), self.layout.sizes)),
            "constraint_counts": self.constraint_counts(),
            "parameters": {
                "a_norm_band": self.band,
                "proximity_radius": self.prox_radius,
                "has_reference": self.reference is not None,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def assemble(problem: SweepingProblem, nu: int, reference=None,
             prox_radius: float = DEFAULT_PROX_RADIUS, mesh: Mesh | None = None) -> DiscreteProblem:
    """Build the discrete problem with ``nu`` uniform intervals.

    ``reference`` is ``None`` or a pair ``(ControlPath, SweepTrajectory)``;
    when given, the cost carries the proximal term and the two proximity
    budgets are monitored.
    """
    if nu < 2:
        raise BadMesh("the discrete problem needs nu >= 2")
    mesh = mesh or Mesh.uniform(problem.T, nu)
    if mesh.nu != nu:
        raise BadMesh("mesh does not have nu intervals")
    layout = Layout(problem.n, problem.m, problem.d, nu)
    if reference is not None:
        ctrl, traj = reference
        if ctrl.mesh.nu != nu or traj.x.shape[0] != nu + 1:
            raise BadMesh("reference lives on a different mesh")
    return DiscreteProblem(problem, mesh, layout, reference, float(prox_radius), problem.band(nu))


def pack(dp: DiscreteProblem, controls: ControlPath, traj: SweepTrajectory) -> np.ndarray:
    return dp.layout.pack(traj.x, controls.a, controls.b, controls.u)


def unpack_controls(dp: DiscreteProblem, z):
    x, a, b, u = dp.layout.unpack(z)
    return x, ControlPath(dp.mesh, u, a, b)


def _proximity(dp: DiscreteProblem, x, ctrl: ControlPath):
    """Budget integrals of the state and velocity deviations from the reference."""
    rc, rt = dp.reference
    h = dp.mesh.steps
    dx = x[:-1] - rt.x[:-1]
    da = (ctrl.a - rc.a)[:-1].reshape(dp.nu, -1)
    db = (ctrl.b - rc.b)[:-1]
    kappa = float(h @ (np.sum(dx**2, 1) + np.sum(da**2, 1) + np.sum(db**2, 1)))
    vx = np.diff(x, axis=0) / h[:, None] - rt.velocities
    va = (ctrl.alpha - rc.alpha).reshape(dp.nu, -1)
    vb = ctrl.beta - rc.beta
    vu = ctrl.u - rc.u
    vel = np.sum(vx**2, 1) + np.sum(va**2, 1) + np.sum(vb**2, 1) + np.sum(vu**2, 1)
    return kappa, float(h @ vel)


def discrete_cost(dp: DiscreteProblem, z) -> float:
    """Terminal cost, left-endpoint running cost and the proximal term."""
    x, ctrl = unpack_controls(dp, z)
    p = dp.problem
    h = dp.mesh.steps
    J = float(p.phi(x[-1]) + h @ p.ell.values(*running_terms(p, ctrl, x)))
    if dp.reference is not None:
        J += 0.5 * _proximity(dp, x, ctrl)[1]
    return J


def feasibility_residual(dp: DiscreteProblem, z, active_tol: float = ACTIVE_TOL) -> dict:
    """Largest violation per constraint group.

    ``dynamics`` is the distance of ``-(x_{j+1}-x_j)/h + g(x_j, u_j)`` to the
    normal cone at ``x_{j+1}``; ``state`` and ``endpoint`` are positive parts
    of facet slacks; the proximity groups exceed zero only when a budget
    ``prox_radius / 2`` is overrun.
    """
    x, ctrl = unpack_controls(dp, z)
    p = dp.problem
    h = dp.mesh.steps
    w = -np.diff(x, axis=0) / h[:, None] + p.g(x[:-1], ctrl.u)
    dyn = 0.0
    for j in range(dp.nu):
        P = MovingPolyhedron(ctrl.a[j + 1], ctrl.b[j + 1], norm_tol=np.inf, check_interior=False)
        _, r = cone_multipliers(P, x[j + 1], w[j], active_tol, np.inf, np.inf,
                                raise_on_residual=False)
        dyn = max(dyn, r)
    slack = np.einsum("jmn,jn->jm", ctrl.a, x) - ctrl.b
    viol = ctrl.violations(p)
    out = {
        "dynamics": dyn,
        "state": float(max(0.0, slack[1:].max(initial=0.0))),
        "initial": max(float(np.max(np.abs(x[0] - p.x0))), viol.pop("initial_a"),
                       viol.pop("initial_b")),
        "endpoint": float(max(0.0, slack[-1].max(initial=0.0))),
    }
    out.update(viol)
    if dp.reference is not None:
        kappa, vel = _proximity(dp, x, ctrl)
        out["proximity_state"] = max(0.0, kappa - dp.prox_radius / 2)
        out["proximity_velocity"] = max(0.0, vel - dp.prox_radius / 2)
    else:
        out["proximity_state"] = 0.0
        out["proximity_velocity"] = 0.0
    return out
