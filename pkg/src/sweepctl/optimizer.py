"""Single-shooting minimization over low-dimensional control families.

A nested grid search localizes the minimizer, then projected descent with
central finite-difference gradients and a bracketing line search along the
projected arc refines it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar, nnls

from .dynamics import ControlPath, Mesh, SweepingProblem, SweepTrajectory, catch_up, cost
from .sets import Ball, Box


@dataclass(frozen=True, eq=False)
class ControlParameterization:
    """Box-bounded parameters and a decoder into control paths.

    The decoder receives parameters already projected onto the box.
    """

    kind: str
    lower: np.ndarray
    upper: np.ndarray
    decoder: Callable[[np.ndarray, Mesh], ControlPath]
    names: tuple = ()

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).ravel()
        hi = np.array(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("parameter bounds must match and satisfy lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"p{k}" for k in range(lo.size)))

    @property
    def dim(self) -> int:
        return self.lower.size

    def clip(self, p) -> np.ndarray:
        return np.clip(np.asarray(p, dtype=float), self.lower, self.upper)

    def decode(self, p, mesh: Mesh) -> ControlPath:
        return self.decoder(self.clip(p), mesh)


def _rest_rate(s) -> np.ndarray:
    """Rate used for facets the family does not control: the point of the set nearest 0."""
    return s.project(np.zeros(s.dim))


def _box_bounds(s, what: str):
    if isinstance(s, Box):
        return s.lo, s.hi
    if isinstance(s, Ball) and s.dim == 1:
        return s.center - s.radius, s.center + s.radius
    raise ValueError(f"{what} must be a box to parameterize it by coordinates")


def _segment_index(mesh: Mesh, segments: int) -> np.ndarray:
    k = np.floor(mesh.nodes[:-1] / mesh.T * segments + 1e-12).astype(int)
    return np.minimum(k, segments - 1)


def _rest_rates(problem: SweepingProblem):
    ad = np.array([_rest_rate(s) for s in problem.A_sets]).reshape(problem.m, problem.n)
    bd = np.array([_rest_rate(s) for s in problem.B_sets]).reshape(problem.m)
    return ad, bd


def piecewise_constant_u(problem: SweepingProblem, segments: int = 1) -> ControlParameterization:
    """``u`` constant on ``segments`` equal pieces of the horizon; facets at rest."""
    lo, hi = _box_bounds(problem.U, "U")
    d = problem.d
    ad, bd = _rest_rates(problem)

    def decode(p, mesh):
        u = p.reshape(segments, d)[_segment_index(mesh, segments)]
        return ControlPath.from_rates(problem, mesh, u, ad, bd)

    names = tuple(f"u{k + 1}[{s}]" if segments > 1 else f"u{k + 1}"
                  for s in range(segments) for k in range(d))
    return ControlParameterization(
        "piecewise-constant-u", np.tile(lo, segments), np.tile(hi, segments), decode, names)


def _first_active_node(traj: SweepTrajectory, facet: int) -> int | None:
    for e in traj.events:
        if e.facet == facet and e.time > 0.0:
            return e.interval + 1
    return None


def _switched(r0, r1, nu: int, node: int | None) -> np.ndarray:
    """Per-interval rates: ``r0`` before ``node``, ``r1`` from it on."""
    rates = np.empty(nu)
    k = nu if node is None else node
    rates[:k] = r0
    rates[k:] = r1
    return rates


def two_phase_b_rate(problem: SweepingProblem, facet: int, trigger: int | None = None,
                     ) -> ControlParameterization:
    """Offset rate ``r0`` of one facet until the trigger facet is first hit, ``r1`` after.

    The switch happens at the first mesh node where the trigger facet is
    active in a simulation with the first-phase rate held throughout.
    """
    trigger = facet if trigger is None else trigger
    lo, hi = _box_bounds(problem.B_sets[facet], "B")
    ad, bd = _rest_rates(problem)
    u = _rest_rate(problem.U) if problem.d else np.zeros(0)

    def path(mesh, rates):
        b = np.tile(bd, (mesh.nu, 1))
        b[:, facet] = rates
        return ControlPath.from_rates(problem, mesh, u, ad, b)

    def decode(p, mesh):
        trial = path(mesh, np.full(mesh.nu, p[0]))
        node = _first_active_node(catch_up(problem, trial, check_controls=False), trigger)
        return path(mesh, _switched(p[0], p[1], mesh.nu, node))

    return ControlParameterization(
        "two-phase-b-rate", [lo[0], lo[0]], [hi[0], hi[0]], decode,
        (f"bdot{facet + 1}_0", f"bdot{facet + 1}_1"))


def angle_path(problem: SweepingProblem, mesh: Mesh, facet: int, rates) -> ControlPath:
    """Facet normal ``(cos theta, sin theta)`` with per-interval angle rates."""
    if problem.n != 2:
        raise ValueError("angle parameterization needs n = 2")
    ad, bd = _rest_rates(problem)
    a0 = problem.a0[facet]
    theta = math.atan2(a0[1], a0[0]) + np.concatenate([[0.0], np.cumsum(mesh.steps * rates)])
    a = np.repeat(problem.a0[None], mesh.nu + 1, axis=0)
    a[:, facet, 0] = np.cos(theta)
    a[:, facet, 1] = np.sin(theta)
    u = _rest_rate(problem.U) if problem.d else np.zeros(0)
    base = ControlPath.from_rates(problem, mesh, u, None, np.tile(bd, (mesh.nu, 1)))
    return ControlPath(mesh, base.u, a, base.b)


def two_phase_angle_rate(problem: SweepingProblem, facet: int = 0,
                         first_rate: Callable[[float], float] | None = None,
                         first_bounds=None) -> ControlParameterization:
    """Angle rate ``r0`` until the facet is first hit, ``r1`` after.

    Without ``first_rate`` the parameters are ``(r0, r1)``. With it, the
    first parameter is a target switch time ``s`` and ``r0 = first_rate(s)``;
    ``first_bounds`` then bounds ``s``. The switch itself is event driven in
    both cases, as for :func:`two_phase_b_rate`.
    """
    S = problem.A_sets[facet]
    if not isinstance(S, Ball) or np.any(S.center):
        raise ValueError("angle family needs a centered ball of normal rates")
    rmax = S.radius

    def rate0(p0):
        return float(np.clip(first_rate(p0), -rmax, rmax)) if first_rate else p0

    def decode(p, mesh):
        r0 = rate0(p[0])
        trial = angle_path(problem, mesh, facet, np.full(mesh.nu, r0))
        node = _first_active_node(catch_up(problem, trial, check_controls=False), facet)
        return angle_path(problem, mesh, facet, _switched(r0, p[1], mesh.nu, node))

    if first_rate is None:
        lo, hi, names = [-rmax, -rmax], [rmax, rmax], ("theta_rate_0", "theta_rate_1")
    else:
        lo, hi = [first_bounds[0], -rmax], [first_bounds[1], rmax]
        names = ("switch_time", "theta_rate_1")
    fam = ControlParameterization("two-phase-angle-rate", lo, hi, decode, names)
    object.__setattr__(fam, "first_rate", rate0)
    return fam


@dataclass
class SolveOptions:
    levels: int = 4
    ppa: int = 11
    fd_h: float = 1e-6
    g_tol: float = 1e-8
    max_iter: int = 500
    seeds: int = 5
    line_tol: float = 1e-12
    f_tol: float = 1e-13
    stall_window: int = 3


@dataclass(eq=False)
class SolveResult:
    params: np.ndarray
    cost: float
    controls: ControlPath
    trajectory: SweepTrajectory
    n_iter: int
    n_eval: int
    converged: bool
    stop_reason: str
    trail: np.ndarray
    costs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def summary(self, names=()) -> dict:
        names = names or tuple(f"p{k}" for k in range(self.params.size))
        return {
            "params": dict(zip(names, map(float, self.params))),
            "cost": self.cost,
            "iterations": self.n_iter,
            "evaluations": self.n_eval,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
        }


def grid_refine(objective: Callable[[np.ndarray], float], lower, upper,
                levels: int = 4, points_per_axis: int = 11):
    """Nested lattice search.

    Each level evaluates a ``points_per_axis`` lattice over the current box in
    lexicographic order, keeps the first strict minimum, and recentres a box
    of one lattice spacing on each side of it (clipped to the original
    bounds). Ties therefore resolve to the lexicographically smallest point.

    Returns ``(argmin, min)``.
    """
    lo0 = np.array(lower, dtype=float)
    hi0 = np.array(upper, dtype=float)
    if lo0.size > 4:
        raise ValueError("grid_refine is meant for at most 4 parameters")
    lo, hi = lo0.copy(), hi0.copy()
    best_p, best_f = None, math.inf
    for _ in range(max(1, levels)):
        axes = [np.linspace(a, b, points_per_axis) if b > a else np.array([a])
                for a, b in zip(lo, hi)]
        level_p, level_f = None, math.inf
        for pt in itertools.product(*axes):
            p = np.array(pt)
            f = objective(p)
            if f < level_f:
                level_p, level_f = p, f
        if level_f < best_f:
            best_p, best_f = level_p, level_f
        step = (hi - lo) / max(points_per_axis - 1, 1)
        lo = np.maximum(lo0, best_p - step)
        hi = np.minimum(hi0, best_p + step)
    return best_p, best_f


class _Objective:
    """Memoized cost of a parameter vector; counts distinct evaluations."""

    def __init__(self, problem, param, mesh):
        self.problem, self.param, self.mesh = problem, param, mesh
        self.cache = {}
        self.n_eval = 0

    def run(self, p):
        p = self.param.clip(p)
        ctrl = self.param.decode(p, self.mesh)
        traj = catch_up(self.problem, ctrl)
        return ctrl, traj, cost(self.problem, ctrl, traj)

    def __call__(self, p) -> float:
        p = self.param.clip(p)
        key = p.tobytes()
        if key not in self.cache:
            self.cache[key] = self.run(p)[2]
            self.n_eval += 1
        return self.cache[key]


def fd_gradient(f: Callable, p: np.ndarray, lower, upper, fd_h: float = 1e-6) -> np.ndarray:
    """Central differences with step ``fd_h (1 + |p_k|)``; one-sided at bounds."""
    g = np.zeros_like(p)
    for k in range(p.size):
        hk = fd_h * (1.0 + abs(p[k]))
        up, dn = p.copy(), p.copy()
        up[k] = min(p[k] + hk, upper[k])
        dn[k] = max(p[k] - hk, lower[k])
        span = up[k] - dn[k]
        if span > 0:
            g[k] = (f(up) - f(dn)) / span
    return g


def _line_search(F, p, f0, g, clip, tau0, tol):
    """Minimize ``F(clip(p - tau g))`` over ``tau >= 0`` starting from ``tau0``.

    Shrinks until the first decrease, expands by doubling until the value
    rises again, then runs bounded Brent inside the bracket.
    """
    def phi(t):
        return F(clip(p - t * g))

    t = tau0
    ft = phi(t)
    while ft >= f0 and t > 1e-20:
        t *= 0.25
        ft = phi(t)
    if ft >= f0:
        return 0.0, f0
    t_lo, t_hi, f_hi = 0.0, t, ft
    t_right = None
    for _ in range(60):
        t_next = 2.0 * t_hi
        if np.array_equal(clip(p - t_next * g), clip(p - t_hi * g)):
            break
        f_next = phi(t_next)
        if f_next >= f_hi:
            t_right = t_next
            break
        t_lo, t_hi, f_hi = t_hi, t_next, f_next
    if t_right is None:
        return t_hi, f_hi
    res = minimize_scalar(phi, bounds=(t_lo, t_right), method="bounded",
                          options={"xatol": max(tol * t_right, 1e-300)})
    if res.fun < f_hi:
        return float(res.x), float(res.fun)
    return t_hi, f_hi


def _min_norm_combination(G: np.ndarray) -> np.ndarray:
    """Smallest-norm point of the convex hull of the rows of ``G``."""
    k = G.shape[0]
    rho = 1e4 * (1.0 + np.abs(G).max())
    M = np.vstack([G.T, rho * np.ones((1, k))])
    rhs = np.concatenate([np.zeros(G.shape[1]), [rho]])
    lam, _ = nnls(M, rhs)
    lam /= lam.sum()
    return lam @ G


def sampled_gradient(F, p, lower, upper, radius: float, fd_h: float) -> np.ndarray:
    """Min-norm convex combination of gradients sampled around ``p``.

    Near a kink the finite-difference gradients on the two sides differ; the
    min-norm element of their hull points along the kink.
    """
    pts = [p]
    for k in range(p.size):
        for sgn in (1.0, -1.0):
            q = p.copy()
            q[k] = np.clip(q[k] + sgn * radius * (1.0 + abs(p[k])), lower[k], upper[k])
            pts.append(q)
    h = min(fd_h, 0.1 * radius)
    G = np.array([fd_gradient(F, q, lower, upper, h) for q in pts])
    return _min_norm_combination(G)


SAMPLING_RADII = (1e-4, 1e-6, 1e-8)


def descend(F, p0, lower, upper, opts: SolveOptions):
    """Projected descent from ``p0``.

    Each iteration moves along the negative finite-difference gradient with a
    bracketing line search. When that fails (typically on a kink where the
    central difference straddles two smooth pieces) sampled gradients at
    shrinking radii supply the direction. The loop also stops once
    ``stall_window`` consecutive decreases are below ``f_tol (1 + |f|)``. Returns
    ``(p, f, iterations, converged, reason, trail, costs)``.
    """
    def clip(q):
        return np.clip(q, lower, upper)

    p = clip(np.asarray(p0, dtype=float))
    f = F(p)
    trail, costs = [p.copy()], [f]
    tau = 1.0
    reason, converged, iters = "max_iter", False, 0
    flat = 0
    while iters < opts.max_iter:
        g = fd_gradient(F, p, lower, upper, opts.fd_h)
        if np.linalg.norm(p - clip(p - g)) <= opts.g_tol:
            converged, reason = True, "gradient_map"
            break
        t, f_new = _line_search(F, p, f, g, clip, tau, opts.line_tol)
        if not f_new < f:
            span = 0.1 * float(np.linalg.norm(upper - lower))
            for r in SAMPLING_RADII:
                g = sampled_gradient(F, p, lower, upper, r, opts.fd_h)
                gn = float(np.linalg.norm(g))
                if gn == 0.0:
                    continue
                t, f_new = _line_search(F, p, f, g, clip, span / gn, opts.line_tol)
                if f_new < f:
                    break
        if not f_new < f:
            reason = "stalled"
            break
        flat = flat + 1 if f - f_new <= opts.f_tol * (1.0 + abs(f)) else 0
        p, f = clip(p - t * g), f_new
        tau = max(t, 1e-12)
        iters += 1
        trail.append(p.copy())
        costs.append(f)
        if flat >= opts.stall_window:
            reason = "stalled"
            break
    return p, f, iters, converged, reason, np.array(trail), np.array(costs)


def seed_points(lower, upper, count: int) -> list:
    """Box centre followed by its corners in lexicographic order."""
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    pts = [(lower + upper) / 2]
    for c in itertools.product(*zip(lower, upper)):
        pts.append(np.array(c, dtype=float))
    return pts[:count]


def solve(problem: SweepingProblem, param: ControlParameterization, mesh: Mesh,
          opts: SolveOptions | None = None) -> SolveResult:
    """Grid initialization (or multi-start) followed by projected descent."""
    opts = opts or SolveOptions()
    F = _Objective(problem, param, mesh)
    lo, hi = param.lower, param.upper
    if opts.levels > 0:
        starts = [grid_refine(F, lo, hi, opts.levels, opts.ppa)[0]]
    else:
        starts = seed_points(lo, hi, opts.seeds)
    best = None
    for s in starts:
        out = descend(F, s, lo, hi, opts)
        if best is None or out[1] < best[1]:
            best = out
    p, f, iters, converged, reason, trail, costs = best
    ctrl, traj, J = F.run(p)
    return SolveResult(p, J, ctrl, traj, iters, F.n_eval, converged, reason, trail, costs)
