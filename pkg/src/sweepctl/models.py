"""Perturbations and cost functions used to describe a sweeping problem."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _arr(v, shape=None) -> np.ndarray:
    a = np.array(v, dtype=float)
    if shape is not None:
        a = np.broadcast_to(a, shape).copy()
    return a


@dataclass(frozen=True, eq=False)
class AffinePerturbation:
    """Drift ``g(x, u) = Gx x + Gu u + g0``."""

    Gx: np.ndarray
    Gu: np.ndarray
    g0: np.ndarray

    def __post_init__(self):
        g0 = _arr(self.g0).ravel()
        n = g0.size
        Gx = _arr(self.Gx).reshape(n, n)
        Gu = _arr(self.Gu).reshape(n, -1) if np.size(self.Gu) else np.zeros((n, 0))
        for name, v in (("Gx", Gx), ("Gu", Gu), ("g0", g0)):
            object.__setattr__(self, name, np.ascontiguousarray(v))

    @classmethod
    def constant(cls, g0, d: int = 0) -> "AffinePerturbation":
        g0 = _arr(g0).ravel()
        return cls(np.zeros((g0.size, g0.size)), np.zeros((g0.size, d)), g0)

    @property
    def n(self) -> int:
        return self.g0.size

    @property
    def d(self) -> int:
        return self.Gu.shape[1]

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.Gx, 2)) if self.n else 0.0

    def __call__(self, x, u) -> np.ndarray:
        """Evaluate at one point or row-wise on stacked ``(k, n)``/``(k, d)`` inputs."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return x @ self.Gx.T + u @ self.Gu.T + self.g0

    def jac_x(self, x, u) -> np.ndarray:
        return self.Gx

    def jac_u(self, x, u) -> np.ndarray:
        return self.Gu

    def to_json(self) -> dict:
        return {"kind": "affine", "Gx": self.Gx.tolist(), "Gu": self.Gu.tolist(),
                "g0": self.g0.tolist()}


@dataclass(frozen=True, eq=False)
class QuadraticTerminalCost:
    """``phi(x) = 1/2 x^T Q x + c^T x + const``."""

    Q: np.ndarray
    c: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        c = _arr(self.c).ravel()
        Q = _arr(self.Q).reshape(c.size, c.size)
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "c", c)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.c @ x + self.const)

    def grad(self, x) -> np.ndarray:
        return self.Q @ np.asarray(x, dtype=float) + self.c

    def to_json(self) -> dict:
        return {"kind": "quadratic", "Q": self.Q.tolist(), "c": self.c.tolist(),
                "const": self.const}


@dataclass(frozen=True, eq=False)
class QuadraticRunningCost:
    """Separable quadratic integrand.

    ``l = 1/2 sum u_weight u^2 + u_linear . u
          + 1/2 sum x_weight x^2 + x_linear . x
          + 1/2 sum xdot_weight xdot^2
          + 1/2 sum_i adot_weight_i ||adot_i||^2
          + 1/2 sum_i bdot_weight_i bdot_i^2``

    All weights are diagonal. Arrays are broadcast from scalars.
    """

    n: int
    m: int
    d: int
    u_weight: np.ndarray = field(default=0.0)
    u_linear: np.ndarray = field(default=0.0)
    x_weight: np.ndarray = field(default=0.0)
    x_linear: np.ndarray = field(default=0.0)
    xdot_weight: np.ndarray = field(default=0.0)
    adot_weight: np.ndarray = field(default=0.0)
    bdot_weight: np.ndarray = field(default=0.0)

    def __post_init__(self):
        shapes = {
            "u_weight": self.d, "u_linear": self.d, "x_weight": self.n,
            "x_linear": self.n, "xdot_weight": self.n, "adot_weight": self.m,
            "bdot_weight": self.m,
        }
        for name, k in shapes.items():
            object.__setattr__(self, name, _arr(getattr(self, name), (k,)))

    def values(self, x, a, b, u, xd, ad, bd) -> np.ndarray:
        """Integrand on stacked per-interval arguments, shape ``(nu,)``."""
        return (
            0.5 * (u * u) @ self.u_weight + u @ self.u_linear
            + 0.5 * (x * x) @ self.x_weight + x @ self.x_linear
            + 0.5 * (xd * xd) @ self.xdot_weight
            + 0.5 * np.einsum("jmn,jmn->jm", ad, ad) @ self.adot_weight
            + 0.5 * (bd * bd) @ self.bdot_weight
        )

    def gradients(self, x, a, b, u, xd, ad, bd) -> dict:
        """Partial derivatives per argument, stacked over intervals.

        Keys ``wx, wa, wb, wu`` are derivatives in the state-like arguments
        and ``vx, va, vb`` in the velocity arguments.
        """
        return {
            "wx": x * self.x_weight + self.x_linear,
            "wa": np.zeros_like(a),
            "wb": np.zeros_like(b),
            "wu": u * self.u_weight + self.u_linear,
            "vx": xd * self.xdot_weight,
            "va": ad * self.adot_weight[None, :, None],
            "vb": bd * self.bdot_weight,
        }

    def to_json(self) -> dict:
        keys = ("u_weight", "u_linear", "x_weight", "x_linear", "xdot_weight",
                "adot_weight", "bdot_weight")
        return {"kind": "quadratic", **{k: getattr(self, k).tolist() for k in keys}}
