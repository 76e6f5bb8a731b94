"""Closed convex constraint sets for controls and rates.

Each set offers membership, Euclidean projection, distance, the distance of a
vector to the normal cone at a point, and the support function. Singletons are
boxes with ``lo == hi``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, nnls

from . import kernels
from .errors import UnsupportedSet


def _vec(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=float))


def _rows(V, dim: int) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.ndim == 2:
        return V
    return V.reshape(-1, dim) if dim else V.reshape(V.shape[0] if V.ndim else 0, 0)


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box ``lo <= s <= hi``."""

    lo: np.ndarray
    hi: np.ndarray
    kind = "box"

    def __post_init__(self):
        lo, hi = _vec(self.lo), _vec(self.hi)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("box needs matching shapes and lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, v) -> "Box":
        v = _vec(v)
        return cls(v, v.copy())

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def is_singleton(self) -> bool:
        return bool(np.all(self.lo == self.hi))

    def contains(self, v, tol: float = 1e-12) -> bool:
        v = _vec(v)
        return bool(np.all(v >= self.lo - tol) and np.all(v <= self.hi + tol))

    def project(self, v) -> np.ndarray:
        return np.clip(_vec(v), self.lo, self.hi)

    def distance(self, v) -> float:
        v = _vec(v)
        return float(np.linalg.norm(v - self.project(v)))

    def distances(self, V) -> np.ndarray:
        """Row-wise distances for a stack of points of shape ``(k, dim)``."""
        V = _rows(V, self.dim)
        return np.linalg.norm(V - np.clip(V, self.lo, self.hi), axis=1)

    def cone_generators(self, v, tol: float = 1e-9):
        """Generators and sign pattern of the normal cone at ``v``.

        Returns ``(K, sign)`` where the cone is ``{K @ k}`` with ``k_i >= 0``
        for ``sign_i = 1``, ``k_i <= 0`` for ``sign_i = -1`` and ``k_i`` free
        for ``sign_i = 0``. Components strictly inside contribute nothing.
        """
        v = _vec(v)
        cols, sign = [], []
        for i in range(self.dim):
            at_lo = v[i] <= self.lo[i] + tol
            at_hi = v[i] >= self.hi[i] - tol
            if at_lo and at_hi:
                cols.append(i)
                sign.append(0)
            elif at_hi:
                cols.append(i)
                sign.append(1)
            elif at_lo:
                cols.append(i)
                sign.append(-1)
        K = np.zeros((self.dim, len(cols)))
        K[cols, np.arange(len(cols))] = 1.0
        return K, np.array(sign, dtype=int)

    def normal_cone_distance(self, psi, v, tol: float = 1e-9) -> float:
        """Distance from ``psi`` to ``N(v; box)``."""
        psi, v = _vec(psi), _vec(v)
        at_lo = v <= self.lo + tol
        at_hi = v >= self.hi - tol
        r = np.where(at_lo & at_hi, 0.0, psi)
        r = np.where(at_hi & ~at_lo, np.minimum(psi, 0.0), r)
        r = np.where(at_lo & ~at_hi, np.maximum(psi, 0.0), r)
        return float(np.linalg.norm(r))

    def support(self, psi) -> float:
        psi = _vec(psi)
        return float(np.sum(np.where(psi > 0, psi * self.hi, psi * self.lo)))

    def to_json(self) -> dict:
        return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class Ball:
    """Closed Euclidean ball ``||s - center|| <= radius``."""

    center: np.ndarray
    radius: float
    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def is_singleton(self) -> bool:
        return self.radius == 0.0

    def contains(self, v, tol: float = 1e-12) -> bool:
        return bool(np.linalg.norm(_vec(v) - self.center) <= self.radius + tol)

    def project(self, v) -> np.ndarray:
        v = _vec(v)
        d = v - self.center
        r = np.linalg.norm(d)
        if r <= self.radius:
            return v.copy()
        return self.center + d * (self.radius / r)

    def distance(self, v) -> float:
        return float(max(0.0, np.linalg.norm(_vec(v) - self.center) - self.radius))

    def distances(self, V) -> np.ndarray:
        V = _rows(V, self.dim)
        return np.maximum(0.0, np.linalg.norm(V - self.center, axis=1) - self.radius)

    def cone_generators(self, v, tol: float = 1e-9):
        v = _vec(v)
        d = v - self.center
        r = np.linalg.norm(d)
        if self.radius == 0.0:
            return np.eye(self.dim), np.zeros(self.dim, dtype=int)
        if r >= self.radius - tol:
            return (d / r).reshape(-1, 1), np.array([1])
        return np.zeros((self.dim, 0)), np.zeros(0, dtype=int)

    def normal_cone_distance(self, psi, v, tol: float = 1e-9) -> float:
        psi, v = _vec(psi), _vec(v)
        if self.radius == 0.0:
            return 0.0
        d = v - self.center
        r = np.linalg.norm(d)
        if r < self.radius - tol:
            return float(np.linalg.norm(psi))
        e = d / r
        t = max(float(psi @ e), 0.0)
        return float(np.linalg.norm(psi - t * e))

    def support(self, psi) -> float:
        psi = _vec(psi)
        return float(psi @ self.center + self.radius * np.linalg.norm(psi))

    def to_json(self) -> dict:
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Halfspaces:
    """Polyhedron ``G s <= k`` given by an explicit list of halfspaces."""

    G: np.ndarray
    k: np.ndarray
    kind = "halfspaces"

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        k = _vec(self.k)
        if G.shape[0] != k.size:
            raise ValueError("G rows must match k")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "k", k)

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    @property
    def is_singleton(self) -> bool:
        return False

    def contains(self, v, tol: float = 1e-12) -> bool:
        return bool(np.all(self.G @ _vec(v) - self.k <= tol))

    def project(self, v) -> np.ndarray:
        nrm = np.linalg.norm(self.G, axis=1)
        x, _, ok = kernels.project(self.G / nrm[:, None], self.k / nrm, _vec(v), 1e-12)
        if not ok:
            raise UnsupportedSet("projection onto halfspace list failed")
        return x

    def distance(self, v) -> float:
        v = _vec(v)
        return float(np.linalg.norm(v - self.project(v)))

    def distances(self, V) -> np.ndarray:
        V = _rows(V, self.dim)
        return np.array([self.distance(v) for v in V])

    def cone_generators(self, v, tol: float = 1e-9):
        act = np.flatnonzero(self.G @ _vec(v) - self.k >= -tol)
        return self.G[act].T.copy(), np.ones(act.size, dtype=int)

    def normal_cone_distance(self, psi, v, tol: float = 1e-9) -> float:
        K, _ = self.cone_generators(v, tol)
        psi = _vec(psi)
        if K.shape[1] == 0:
            return float(np.linalg.norm(psi))
        _, res = nnls(K, psi)
        return float(res)

    def support(self, psi) -> float:
        psi = _vec(psi)
        res = linprog(-psi, A_ub=self.G, b_ub=self.k, bounds=[(None, None)] * self.dim)
        if res.status == 3:
            return float("inf")
        if res.status != 0:
            raise UnsupportedSet(f"support LP failed: {res.message}")
        return float(-res.fun)

    def to_json(self) -> dict:
        return {"kind": "halfspaces", "G": self.G.tolist(), "k": self.k.tolist()}


ConstraintSet = Box | Ball | Halfspaces


def from_json(d: dict) -> ConstraintSet:
    kind = d.get("kind", "box")
    if kind == "box":
        return Box(d["lo"], d["hi"])
    if kind == "point":
        return Box.point(d["value"])
    if kind == "ball":
        return Ball(d.get("center", [0.0] * int(d.get("dim", 1))), d["radius"])
    if kind == "halfspaces":
        return Halfspaces(d["G"], d["k"])
    raise UnsupportedSet(f"unknown set kind {kind!r}")
