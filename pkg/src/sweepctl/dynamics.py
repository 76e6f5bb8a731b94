"""Catching-up simulation of controlled sweeping processes.

The recursion is implicit in the moving set:

    x_{j+1} = proj_{C(a_{j+1}, b_{j+1})}(x_j + h_j g(x_j, u_j)),

and the interval multiplier ``eta_j`` satisfies
``-(x_{j+1} - x_j)/h_j + g(x_j, u_j) = sum_i eta_ij a_{i,j+1}``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import (
    BadMesh,
    ConeResidual,
    EmptyPolyhedron,
    InfeasiblePoint,
    InvalidControl,
    SimulationFailed,
)
from .geometry import ACTIVE_TOL, CONE_TOL, FEAS_TOL, MovingPolyhedron, cone_multipliers, slater_point
from .models import AffinePerturbation, QuadraticRunningCost, QuadraticTerminalCost
from .sets import Box, ConstraintSet

SET_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Mesh:
    """Nodes ``0 = t_0 < ... < t_nu = T``."""

    nodes: np.ndarray

    def __post_init__(self):
        t = np.array(self.nodes, dtype=float)
        if t.ndim != 1 or t.size < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise BadMesh("mesh nodes must start at 0 and increase strictly")
        t.setflags(write=False)
        object.__setattr__(self, "nodes", t)

    @classmethod
    def uniform(cls, T: float, nu: int) -> "Mesh":
        if nu < 1:
            raise BadMesh("need at least one interval")
        t = np.linspace(0.0, T, nu + 1)
        return cls(t)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def nu(self) -> int:
        return self.nodes.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def to_json(self) -> dict:
        h = self.steps
        if np.allclose(h, h[0], rtol=0, atol=1e-15 * self.T):
            return {"T": self.T, "nu": self.nu}
        return {"nodes": self.nodes.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Mesh":
        if "nodes" in d:
            return cls(d["nodes"])
        return cls.uniform(float(d["T"]), int(d["nu"]))


@dataclass(frozen=True, eq=False)
class SweepingProblem:
    """Data of a controlled sweeping problem over a moving polyhedron.

    ``a0``/``b0`` are the initial facet data; the rates of ``a_i`` and ``b_i``
    are controls constrained to ``A_sets[i]`` and ``B_sets[i]``. A singleton
    rate set freezes the facet. ``a_norm_band`` fixes the half-width of the
    band ``| ||a_i|| - 1 | <= eps``; ``None`` uses ``max(1e-9, 1/nu^2)``.
    """

    T: float
    x0: np.ndarray
    a0: np.ndarray
    b0: np.ndarray
    U: ConstraintSet
    A_sets: tuple
    B_sets: tuple
    g: AffinePerturbation
    phi: QuadraticTerminalCost
    ell: QuadraticRunningCost
    name: str = "problem"
    a_norm_band: float | None = None
    hypotheses: dict = field(default_factory=dict)

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).ravel()
        a0 = np.array(self.a0, dtype=float, ndmin=2)
        b0 = np.array(self.b0, dtype=float, ndmin=1)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "b0", b0)
        object.__setattr__(self, "A_sets", tuple(self.A_sets))
        object.__setattr__(self, "B_sets", tuple(self.B_sets))
        n, m = x0.size, b0.size
        if a0.shape != (m, n):
            raise ValueError(f"a0 has shape {a0.shape}, expected {(m, n)}")
        if len(self.A_sets) != m or len(self.B_sets) != m:
            raise ValueError("one rate set per facet is required")
        if any(s.dim != n for s in self.A_sets) or any(s.dim != 1 for s in self.B_sets):
            raise ValueError("rate sets have the wrong dimension")
        if self.g.n != n or self.g.d != self.U.dim:
            raise ValueError("perturbation dimensions do not match the problem")
        P = MovingPolyhedron(a0, b0)
        s = P.slacks(x0)
        if np.any(s > FEAS_TOL):
            raise InfeasiblePoint(f"x0 violates facet {int(np.argmax(s))} by {s.max():.3g}")
        hyp = {"H2_lipschitz_g": self.g.lipschitz}
        hyp.update(self.hypotheses)
        object.__setattr__(self, "hypotheses", hyp)

    @property
    def n(self) -> int:
        return self.x0.size

    @property
    def m(self) -> int:
        return self.b0.size

    @property
    def d(self) -> int:
        return self.U.dim

    def band(self, nu: int) -> float:
        if self.a_norm_band is not None:
            return float(self.a_norm_band)
        return max(1e-9, 1.0 / nu**2)

    def a_frozen(self, i: int) -> bool:
        s = self.A_sets[i]
        return isinstance(s, Box) and s.is_singleton and not np.any(s.lo)

    def b_frozen(self, i: int) -> bool:
        s = self.B_sets[i]
        return isinstance(s, Box) and s.is_singleton and not np.any(s.lo)


@dataclass(frozen=True, eq=False)
class ControlPath:
    """Piecewise-constant ``u`` and piecewise-linear facet data on a mesh."""

    mesh: Mesh
    u: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        nu = self.mesh.nu
        u = np.array(self.u, dtype=float)
        if u.ndim == 1:
            u = u.reshape(nu, -1)
        a = np.ascontiguousarray(self.a, dtype=float)
        b = np.ascontiguousarray(self.b, dtype=float)
        if u.shape[0] != nu or a.shape[0] != nu + 1 or b.shape[0] != nu + 1:
            raise ValueError("control arrays do not match the mesh")
        if a.ndim != 3 or b.ndim != 2 or a.shape[1] != b.shape[1]:
            raise ValueError("a must be (nu+1, m, n) and b (nu+1, m)")
        for name, v in (("u", np.ascontiguousarray(u)), ("a", a), ("b", b)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def from_rates(cls, problem: SweepingProblem, mesh: Mesh, u, adot=None, bdot=None):
        """Integrate facet rates from the problem's initial facet data.

        ``u`` may be one control (held constant) or one per interval; the
        rates likewise.
        """
        nu, m, n, d = mesh.nu, problem.m, problem.n, problem.d
        if d == 0:
            u = np.zeros((nu, 0))
        else:
            u = np.broadcast_to(np.asarray(u, dtype=float).reshape(-1, d), (nu, d))
        h = mesh.steps
        a = np.empty((nu + 1, m, n))
        b = np.empty((nu + 1, m))
        a[0] = problem.a0
        b[0] = problem.b0
        ad = np.zeros((nu, m, n)) if adot is None else np.broadcast_to(adot, (nu, m, n))
        bd = np.zeros((nu, m)) if bdot is None else np.broadcast_to(bdot, (nu, m))
        a[1:] = problem.a0 + np.cumsum(h[:, None, None] * ad, axis=0)
        b[1:] = problem.b0 + np.cumsum(h[:, None] * bd, axis=0)
        return cls(mesh, u.copy(), a, b)

    @property
    def alpha(self) -> np.ndarray:
        return np.diff(self.a, axis=0) / self.mesh.steps[:, None, None]

    @property
    def beta(self) -> np.ndarray:
        return np.diff(self.b, axis=0) / self.mesh.steps[:, None]

    def violations(self, problem: SweepingProblem) -> dict:
        """Largest violation per constraint group (zero when satisfied)."""
        out = {
            "initial_a": float(np.max(np.abs(self.a[0] - problem.a0), initial=0.0)),
            "initial_b": float(np.max(np.abs(self.b[0] - problem.b0), initial=0.0)),
            "control_u": float(problem.U.distances(self.u).max(initial=0.0)),
        }
        al, be = self.alpha, self.beta
        out["rate_a"] = max(
            (float(problem.A_sets[i].distances(al[:, i]).max(initial=0.0))
             for i in range(problem.m)), default=0.0)
        out["rate_b"] = max(
            (float(problem.B_sets[i].distances(be[:, i]).max(initial=0.0))
             for i in range(problem.m)), default=0.0)
        dev = np.abs(np.linalg.norm(self.a, axis=2) - 1.0)
        out["a_norm"] = float(max(0.0, dev.max() - problem.band(self.mesh.nu)))
        return out

    def validate(self, problem: SweepingProblem, tol: float = SET_TOL) -> None:
        if self.a.shape[1:] != problem.a0.shape or self.u.shape[1] != problem.d:
            raise InvalidControl("control dimensions do not match the problem")
        bad = {k: v for k, v in self.violations(problem).items() if v > tol}
        if bad:
            worst = max(bad, key=bad.get)
            raise InvalidControl(f"control path violates {worst} by {bad[worst]:.3g}")

    def to_json(self) -> dict:
        return {
            "mesh": self.mesh.to_json(),
            "u": self.u.tolist(),
            "a": self.a.tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ControlPath":
        mesh = Mesh.from_json(d["mesh"])
        u = np.array(d["u"], dtype=float).reshape(mesh.nu, -1)
        return cls(mesh, u, np.array(d["a"], dtype=float), np.array(d["b"], dtype=float))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "ControlPath":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class HittingEvent:
    """Facet ``facet`` becomes active inside ``[t_interval, t_{interval+1}]``."""

    facet: int
    interval: int
    time: float


@dataclass(frozen=True, eq=False)
class SweepTrajectory:
    """Node states, interval multipliers and slacks of one simulation.

    ``slacks[j, i] = <a_ij, x_j> - b_ij`` at the nodes and
    ``free_slacks[j, i]`` is the same quantity at node ``j+1`` for the
    unprojected point ``x_j + h_j g(x_j, u_j)``.
    """

    mesh: Mesh
    x: np.ndarray
    eta: np.ndarray
    slacks: np.ndarray
    free_slacks: np.ndarray
    events: tuple
    active_tol: float = ACTIVE_TOL

    @property
    def velocities(self) -> np.ndarray:
        return np.diff(self.x, axis=0) / self.mesh.steps[:, None]

    def to_csv(self, path) -> None:
        """Columns ``t, x1..xn, eta1..etam, slack1..slackm``.

        Row ``j`` carries the multiplier of the step that lands on node ``j``
        (zero on the first row), so that each row pairs ``eta`` with the slack
        it is complementary to.
        """
        n, m = self.x.shape[1], self.slacks.shape[1]
        eta = np.vstack([np.zeros((1, m)), self.eta])
        head = ["t"] + [f"x{k + 1}" for k in range(n)] + [f"eta{i + 1}" for i in range(m)]
        head += [f"slack{i + 1}" for i in range(m)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            for j, t in enumerate(self.mesh.nodes):
                row = [t, *self.x[j], *eta[j], *self.slacks[j]]
                w.writerow([repr(float(v)) for v in row])


def read_trajectory_csv(path) -> dict:
    """Load a trajectory CSV as a dict of column arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], np.array(rows[1:], dtype=float)
    return {k: body[:, i] for i, k in enumerate(head)}


def _node_slacks(a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("jmn,jn->jm", a, x) - b


def _events(slacks: np.ndarray, free: np.ndarray, nodes: np.ndarray, tol: float):
    """Inactive-to-active transitions per facet with interpolated times."""
    out = []
    act = slacks >= -tol
    for i in range(slacks.shape[1]):
        if act[0, i]:
            out.append(HittingEvent(i, 0, float(nodes[0])))
        for j in np.flatnonzero(~act[:-1, i] & act[1:, i]):
            s0, s1 = slacks[j, i], free[j, i]
            theta = 1.0 if s1 <= s0 else float(np.clip(-s0 / (s1 - s0), 0.0, 1.0))
            t = nodes[j] + theta * (nodes[j + 1] - nodes[j])
            out.append(HittingEvent(i, int(j), float(t)))
    out.sort(key=lambda e: (e.time, e.facet))
    return tuple(out)


def catch_up(problem: SweepingProblem, controls: ControlPath, *,
             active_tol: float = ACTIVE_TOL, feas_tol: float = FEAS_TOL,
             cone_tol: float = CONE_TOL, check_controls: bool = True,
             multipliers: str = "kkt", proj_tol: float = 1e-12) -> SweepTrajectory:
    """Simulate the implicit catching-up scheme along ``controls``.

    ``multipliers="kkt"`` takes ``eta`` from the projection's own KKT
    multipliers; ``"nnls"`` recovers it independently at every step with
    :func:`cone_multipliers`. Both are checked against the reconstruction
    identity and a mismatch beyond ``cone_tol`` raises ``ConeResidual``.
    """
    if check_controls:
        controls.validate(problem)
    mesh = controls.mesh
    h = mesh.steps
    g = problem.g
    if isinstance(g, AffinePerturbation):
        x, lam, fail = kernels.catch_up_affine(
            problem.x0, controls.a, controls.b, controls.u, h, g.Gx, g.Gu, g.g0, proj_tol)
    else:
        x, lam, fail = _catch_up_python(problem, controls, proj_tol)
    if fail >= 0:
        _, s = slater_point(controls.a[fail + 1], controls.b[fail + 1])
        if not s > 0:
            raise EmptyPolyhedron(f"moving set is empty at node {fail + 1}")
        raise SimulationFailed(f"projection failed at interval {fail}")
    eta = lam / h[:, None]
    drift = g(x[:-1], controls.u)
    w = -np.diff(x, axis=0) / h[:, None] + drift
    if multipliers == "nnls":
        eta = np.zeros_like(eta)
        for j in range(mesh.nu):
            P = MovingPolyhedron(controls.a[j + 1], controls.b[j + 1], check_interior=False)
            eta[j], _ = cone_multipliers(P, x[j + 1], w[j], active_tol, np.inf, feas_tol)
    elif multipliers != "kkt":
        raise ValueError(f"unknown multiplier mode {multipliers!r}")
    r = w - np.einsum("jm,jmn->jn", eta, controls.a[1:])
    worst = float(np.max(np.linalg.norm(r, axis=1), initial=0.0))
    if worst > cone_tol:
        raise ConeResidual(f"multiplier reconstruction off by {worst:.3g}")
    slacks = _node_slacks(controls.a, controls.b, x)
    if slacks.max(initial=-np.inf) > feas_tol:
        raise SimulationFailed("simulated state left the moving set")
    gram = np.einsum("jin,jkn->jik", controls.a[1:], controls.a[1:])
    free = slacks[1:] + h[:, None] * np.einsum("jik,jk->ji", gram, eta)
    events = _events(slacks, free, mesh.nodes, active_tol)
    return SweepTrajectory(mesh, x, eta, slacks, free, events, active_tol)


def _catch_up_python(problem, controls, tol):
    mesh = controls.mesh
    h = mesh.steps
    x = np.empty((mesh.nu + 1, problem.n))
    lam = np.zeros((mesh.nu, problem.m))
    x[0] = problem.x0
    for j in range(mesh.nu):
        y = x[j] + h[j] * np.asarray(problem.g(x[j], controls.u[j]), dtype=float)
        scale = 1.0 + float(np.max(np.abs(y)))
        xj, lj, ok = kernels.project(controls.a[j + 1], controls.b[j + 1], y, tol * scale)
        if not ok:
            return x, lam, j
        x[j + 1], lam[j] = xj, lj
    return x, lam, -1


def hitting_time(traj: SweepTrajectory, facet: int) -> float | None:
    """First time the facet becomes active, or ``None`` if it never does."""
    for e in traj.events:
        if e.facet == facet:
            return e.time
    return None


def running_terms(problem: SweepingProblem, controls: ControlPath, x: np.ndarray):
    """Left-endpoint arguments of the integrand on every interval."""
    h = controls.mesh.steps
    xd = np.diff(x, axis=0) / h[:, None]
    ad = controls.alpha
    bd = controls.beta
    return (x[:-1], controls.a[:-1], controls.b[:-1], controls.u, xd, ad, bd)


def cost(problem: SweepingProblem, controls: ControlPath, traj: SweepTrajectory) -> float:
    """``phi(x_nu) + sum_j h_j l(x_j, a_j, b_j, u_j, dx_j/h_j, da_j/h_j, db_j/h_j)``."""
    h = controls.mesh.steps
    vals = problem.ell.values(*running_terms(problem, controls, traj.x))
    return float(problem.phi(traj.x[-1]) + h @ vals)


def simulate_cost(problem: SweepingProblem, controls: ControlPath, **kw):
    traj = catch_up(problem, controls, **kw)
    return cost(problem, controls, traj), traj


def sup_distance(x_coarse: np.ndarray, x_fine: np.ndarray) -> float:
    """``max_j ||x^(h)_j - x^(h/2)_{2j}||_inf`` on shared nodes."""
    return float(np.max(np.abs(x_fine[::2] - x_coarse)))


__all__: Sequence[str] = (
    "Mesh", "SweepingProblem", "ControlPath", "HittingEvent", "SweepTrajectory",
    "catch_up", "hitting_time", "cost", "simulate_cost", "read_trajectory_csv",
)
