"""Moving polyhedra ``C(a, b) = {x : <a_i, x> <= b_i}`` at a fixed time.

Projection, active sets, normal-cone multipliers and constraint
qualification diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, nnls

from . import kernels
from .errors import DegenerateActiveSystem, EmptyPolyhedron, InfeasiblePoint, NotInCone

ACTIVE_TOL = 1e-8
FEAS_TOL = 1e-8
CONE_TOL = 1e-6
NORM_TOL = 1e-9


def slater_point(a: np.ndarray, b: np.ndarray):
    """Maximize the uniform margin ``s`` with ``<a_i, x> + s <= b_i``.

    Returns ``(x, s)``; the margin is capped at 1 so that unbounded
    polyhedra still give a finite answer.
    """
    m, n = a.shape
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([a, np.ones((m, 1))])
    bounds = [(None, None)] * n + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        return None, -np.inf
    return res.x[:n], float(res.x[-1])


@dataclass(frozen=True, eq=False)
class MovingPolyhedron:
    """Snapshot ``{x : <a_i, x> <= b_i}`` with unit facet normals.

    Parameters
    ----------
    a : (m, n) array of facet normals, each of unit length up to ``norm_tol``.
    b : (m,) offsets.
    check_interior : verify a strictly interior point exists (one small LP).
    """

    a: np.ndarray
    b: np.ndarray
    norm_tol: float = NORM_TOL
    check_interior: bool = True

    def __post_init__(self):
        a = np.array(self.a, dtype=float, ndmin=2)
        b = np.array(self.b, dtype=float, ndmin=1)
        if a.shape[0] != b.size:
            raise ValueError(f"{a.shape[0]} normals but {b.size} offsets")
        dev = np.abs(np.linalg.norm(a, axis=1) - 1.0)
        if np.any(dev > self.norm_tol):
            raise ValueError(f"facet normals must be unit vectors (max deviation {dev.max():.3g})")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if self.check_interior:
            _, s = slater_point(a, b)
            if not s > 0:
                raise EmptyPolyhedron("polyhedron has no strictly interior point")

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def m(self) -> int:
        return self.a.shape[0]

    def slacks(self, x) -> np.ndarray:
        return self.a @ np.asarray(x, dtype=float) - self.b

    def contains(self, x, tol: float = FEAS_TOL) -> bool:
        return bool(np.all(self.slacks(x) <= tol))


@dataclass(frozen=True)
class ActiveSet:
    indices: tuple
    slacks: np.ndarray


def active_set(P: MovingPolyhedron, x, active_tol: float = ACTIVE_TOL,
               feas_tol: float = FEAS_TOL) -> ActiveSet:
    """Facets with ``|<a_i, x> - b_i| <= active_tol``."""
    s = P.slacks(x)
    if np.any(s > feas_tol):
        i = int(np.argmax(s))
        raise InfeasiblePoint(f"facet {i} violated by {s[i]:.3g}")
    idx = tuple(int(i) for i in np.flatnonzero(s >= -active_tol))
    return ActiveSet(idx, s)


def project(P: MovingPolyhedron, y, tol: float = 1e-12):
    """Euclidean projection onto ``P`` with its KKT multipliers.

    Returns ``(x, lam)`` with ``y - x = sum_i lam_i a_i``, ``lam >= 0`` and
    ``lam_i * slack_i = 0``.
    """
    y = np.asarray(y, dtype=float)
    scale = 1.0 + float(np.max(np.abs(y), initial=0.0))
    x, lam, ok = kernels.project(
        np.ascontiguousarray(P.a), np.ascontiguousarray(P.b), y.copy(), tol * scale
    )
    if not ok:
        raise DegenerateActiveSystem("no active subset gave a consistent KKT system")
    return x, lam


def _nnls(M: np.ndarray, w: np.ndarray):
    if M.shape[1] == 0:
        return np.zeros(0), float(np.linalg.norm(w))
    coef, res = nnls(M, w)
    return coef, float(res)


def cone_multipliers(P: MovingPolyhedron, x, w, active_tol: float = ACTIVE_TOL,
                     cone_tol: float = CONE_TOL, feas_tol: float = FEAS_TOL,
                     raise_on_residual: bool = True):
    """Nonnegative ``eta`` on the active facets with ``sum eta_i a_i ~ w``.

    Returns ``(eta, residual)``. When the active normals are linearly
    dependent the least-norm nonnegative solution is returned.
    """
    act = list(active_set(P, x, active_tol, feas_tol).indices)
    w = np.asarray(w, dtype=float)
    eta = np.zeros(P.m)
    M = P.a[act].T
    coef, res = _nnls(M, w)
    if len(act) > 1 and np.linalg.matrix_rank(M) < len(act):
        coef = _least_norm_nonneg(M, M @ coef)
        res = float(np.linalg.norm(M @ coef - w))
    eta[act] = coef
    if raise_on_residual and res > cone_tol:
        raise NotInCone(f"vector is off the normal cone by {res:.3g}")
    return eta, res


def _least_norm_nonneg(M: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Approximately least-norm ``c >= 0`` with ``M c = target``.

    NNLS on the system augmented by ``rho * I``; the weight is small enough
    that the reassembly error stays far below ``cone_tol``.
    """
    k = M.shape[1]
    rho = 1e-7
    Ma = np.vstack([M, rho * np.eye(k)])
    ta = np.concatenate([target, np.zeros(k)])
    coef, _ = nnls(Ma, ta)
    return coef


def check_plicq(P: MovingPolyhedron, x, active_tol: float = ACTIVE_TOL,
                samples: int = 256, seed: int = 0):
    """Positive linear independence of the active normals at ``x``.

    Returns ``(holds, sigma)``. ``holds`` is decided by a feasibility LP:
    PLICQ fails exactly when some convex combination of active normals is
    zero. ``sigma`` is the largest observed ratio
    ``sum lam_i ||a_i|| / ||sum lam_i a_i||`` over sampled ``lam >= 0``
    (vertices of the simplex included); it is ``inf`` when PLICQ fails and
    1 when nothing is active.
    """
    act = list(active_set(P, x, active_tol, np.inf).indices)
    if not act:
        return True, 1.0
    A = P.a[act]
    k = len(act)
    res = linprog(
        np.zeros(k),
        A_eq=np.vstack([A.T, np.ones((1, k))]),
        b_eq=np.concatenate([np.zeros(P.n), [1.0]]),
        bounds=[(0, None)] * k,
        method="highs",
    )
    holds = res.status != 0
    if not holds:
        return False, float("inf")
    rng = np.random.default_rng(seed)
    lam = np.vstack([np.eye(k), rng.exponential(size=(samples, k))])
    num = lam @ np.linalg.norm(A, axis=1)
    den = np.linalg.norm(lam @ A, axis=1)
    return True, float(np.max(num / den))
