"""Discrete necessary optimality conditions: fitting and checking multipliers.

The simulator uses the implicit catching-up step, so the multiplier ``eta_j``
of interval ``j`` lives at node ``j+1``. The dual system below is derived for
that scheme. Node-indexed coderivative atoms ``gamma[k]`` pair with
``eta[k-1]``, and ``y_j = p^x_{j+1} - lam (v^x_j + theta^x_j/h)`` is the
adjoint velocity seen by the drift. With ``Jx, Ju`` the drift Jacobians:

    (p^x_{j+1} - p^x_j)/h - lam w^x_j + Jx^T y_j - sum_i gamma_ij a_ij = 0
    (p^a_{j+1} - p^a_j)/h - lam w^a_j - (2/h) alpha_j a_j
        - gamma_j x_j - eta_{j-1} y_{j-1} = 0
    (p^b_{j+1} - p^b_j)/h - lam w^b_j + gamma_j = 0
    Ju^T y_j - lam w^u_j - psi^u_j / h = 0,   psi^u_j in N(u_j; U)
    psi^a_j = p^a_{j+1} - lam v^a_j in N(adot_j; A)   (same for b)
    eta_{i,j} > 0  =>  <a_{i,j+1}, y_j> = 0

and at the final node, with ``e = xi + h gamma_nu`` the endpoint multiplier,

    p^x_nu + lam grad phi(x_nu) + sum_i e_i a_i = 0
    p^a_nu + 2 alpha_nu a_nu + e x_nu + h eta_{nu-1} y_{nu-1} = 0
    p^b_nu - e = 0.

The fit solves this linear system by sign-constrained sparse least squares
and rescales the result so that the nontriviality sum equals one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .dynamics import ControlPath, SweepTrajectory, running_terms
from .errors import NoCertificate, UnsupportedSet
from .geometry import ACTIVE_TOL
from .sets import Ball, Box
from .transcription import DiscreteProblem

FIT_TOL = 1e-6
COMP_TOL = 1e-8

GROUPS = (
    "primal", "adjoint_x", "adjoint_a", "adjoint_b", "q_link", "coderivative",
    "control_u", "normal_cones", "transversality", "complementarity",
    "maximization", "nontriviality",
)

# groups that scale linearly with the dual variables
HOMOGENEOUS = tuple(g for g in GROUPS if g not in ("primal", "nontriviality"))


# --------------------------------------------------------------------------
# data


@dataclass(frozen=True, eq=False)
class OptimalityCertificate:
    """Multipliers for one candidate on one mesh.

    ``gamma`` and ``alpha`` are node indexed with shape ``(nu+1, m)``;
    ``gamma[0]`` and ``alpha[0]`` are zero because the initial data are
    fixed. ``eta`` holds the primal interval multipliers of the candidate and
    is not rescaled with the duals. ``scale`` is the nontriviality sum before
    normalization.
    """

    lam: float
    px: np.ndarray
    pa: np.ndarray
    pb: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray
    psi_u: np.ndarray
    psi_a: np.ndarray
    psi_b: np.ndarray
    eta: np.ndarray
    mode: str = "normal"
    scale: float = 1.0
    normalization: str = "ntc0"
    meta: dict = field(default_factory=dict)

    @property
    def nu(self) -> int:
        return self.eta.shape[0]

    @property
    def alpha1(self) -> np.ndarray:
        return np.maximum(self.alpha, 0.0)

    @property
    def alpha2(self) -> np.ndarray:
        return np.minimum(self.alpha, 0.0)

    def eta_end(self, h_last: float) -> np.ndarray:
        """Endpoint multiplier ``xi + h gamma_nu``."""
        return self.xi + h_last * self.gamma[-1]

    def scaled(self, c: float) -> "OptimalityCertificate":
        """All dual quantities multiplied by ``c``; ``eta`` is primal and stays."""
        return replace(
            self, lam=c * self.lam, px=c * self.px, pa=c * self.pa, pb=c * self.pb,
            gamma=c * self.gamma, alpha=c * self.alpha, xi=c * self.xi,
            psi_u=c * self.psi_u, psi_a=c * self.psi_a, psi_b=c * self.psi_b,
            scale=self.scale / c if c else float("inf"))

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "lambda": self.lam,
            "scale": self.scale,
            "normalization": self.normalization,
            "px": self.px.tolist(),
            "pa": self.pa.tolist(),
            "pb": self.pb.tolist(),
            "gamma": self.gamma.tolist(),
            "alpha": self.alpha.tolist(),
            "xi": self.xi.tolist(),
            "psi_u": self.psi_u.tolist(),
            "psi_a": self.psi_a.tolist(),
            "psi_b": self.psi_b.tolist(),
        }


@dataclass(eq=False)
class ResidualReport:
    """Largest residual per condition group, with the tolerance used."""

    groups: dict
    tolerances: dict
    details: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.groups[g] <= self.tolerances[g] for g in self.groups)

    def failing(self) -> list:
        return [g for g in self.groups if self.groups[g] > self.tolerances[g]]

    @property
    def total(self) -> float:
        return float(sum(self.groups.values()))

    def to_json(self) -> str:
        return json.dumps({
            "passed": self.passed,
            "groups": self.groups,
            "tolerances": self.tolerances,
            "details": self.details,
            "flags": self.flags,
        }, indent=2, default=float)

    def table(self) -> str:
        head = f"{'group':<16}{'residual':>14}{'tolerance':>12}  status"
        lines = [head, "-" * len(head)]
        for g, v in self.groups.items():
            ok = "ok" if v <= self.tolerances[g] else "FAIL"
            lines.append(f"{g:<16}{v:>14.3e}{self.tolerances[g]:>12.1e}  {ok}")
        for k, v in self.flags.items():
            lines.append(f"{k}: {v}")
        return "\n".join(lines)


# --------------------------------------------------------------------------
# candidate data shared by the fit and the checker


@dataclass(frozen=True, eq=False)
class _Data:
    h: np.ndarray
    x: np.ndarray
    u: np.ndarray
    a: np.ndarray
    b: np.ndarray
    rate_a: np.ndarray
    rate_b: np.ndarray
    eta: np.ndarray
    slack: np.ndarray
    sel: dict
    grad_phi: np.ndarray
    Jx: np.ndarray
    Ju: np.ndarray


def _candidate(candidate):
    if isinstance(candidate, dict):
        return candidate["controls"], candidate["trajectory"]
    ctrl, traj = candidate
    if not isinstance(ctrl, ControlPath) or not isinstance(traj, SweepTrajectory):
        raise TypeError("candidate must be a (ControlPath, SweepTrajectory) pair")
    return ctrl, traj


def _data(dp: DiscreteProblem, candidate) -> _Data:
    ctrl, traj = _candidate(candidate)
    p = dp.problem
    nu = dp.nu
    if ctrl.mesh.nu != nu or traj.x.shape[0] != nu + 1:
        raise ValueError("candidate does not live on the discrete problem's mesh")
    h = dp.mesh.steps
    x = traj.x
    args = running_terms(p, ctrl, x)
    sel = {k: np.array(v, dtype=float) for k, v in p.ell.gradients(*args).items()}
    if dp.reference is not None:
        rc, rt = dp.reference
        if rc is not ctrl:
            # theta_j / h terms of the proximal cost
            sel["vx"] = sel["vx"] + (traj.velocities - rt.velocities)
            sel["va"] = sel["va"] + (ctrl.alpha - rc.alpha)
            sel["vb"] = sel["vb"] + (ctrl.beta - rc.beta)
            sel["wu"] = sel["wu"] + (ctrl.u - rc.u)
    Jx = np.broadcast_to(np.asarray(p.g.jac_x(x[:-1], ctrl.u), dtype=float), (nu, p.n, p.n))
    Ju = np.broadcast_to(np.asarray(p.g.jac_u(x[:-1], ctrl.u), dtype=float), (nu, p.n, p.d))
    slack = np.einsum("jmn,jn->jm", ctrl.a, x) - ctrl.b
    return _Data(h, x, ctrl.u, ctrl.a, ctrl.b, ctrl.alpha, ctrl.beta, traj.eta, slack,
                 sel, p.phi.grad(x[-1]), Jx, Ju)


def _y(cert: OptimalityCertificate, D: _Data) -> np.ndarray:
    return cert.px[1:] - cert.lam * D.sel["vx"]


def _normal_cone_distance(s, psi, v) -> float:
    return s.normal_cone_distance(psi, v)


def _band_cone_distance(alpha: float, norm: float, band: float, tol: float) -> float:
    """Distance of ``alpha`` to ``N([1-band, 1+band]; ||a||)`` on the real line."""
    if band == 0.0:
        return 0.0
    at_hi = norm >= 1.0 + band - tol
    at_lo = norm <= 1.0 - band + tol
    if at_hi and at_lo:
        return 0.0
    if at_hi:
        return max(0.0, -alpha)
    if at_lo:
        return max(0.0, alpha)
    return abs(alpha)


def nontriviality_sum(cert: OptimalityCertificate, h_last: float) -> float:
    """``lam + ||alpha|| + ||eta_nu|| + sum ||p^x_j|| + ||p^a_0|| + ||p^b_0|| + sum ||psi_j||``."""
    nu = cert.nu
    psi = np.concatenate([cert.psi_a.reshape(nu, -1), cert.psi_b.reshape(nu, -1),
                          cert.psi_u.reshape(nu, -1)], axis=1)
    return float(
        cert.lam + np.linalg.norm(cert.alpha) + np.linalg.norm(cert.eta_end(h_last))
        + np.linalg.norm(cert.px[:-1], axis=1).sum() + np.linalg.norm(cert.pa[0])
        + np.linalg.norm(cert.pb[0]) + np.linalg.norm(psi, axis=1).sum())


# --------------------------------------------------------------------------
# maximization gap


def maximization_gap(psi, value, s) -> float:
    """``max_{v in s} <psi, v> - <psi, value>`` for a box or a ball."""
    if not isinstance(s, (Box, Ball)):
        raise UnsupportedSet(f"maximization gap needs a box or a ball, got {type(s).__name__}")
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return max(0.0, s.support(psi) - float(psi @ value))


# --------------------------------------------------------------------------
# residuals


def _coderivative_violation(gam: float, z: float) -> float:
    """Distance of ``(gamma, z)`` to the coderivative graph at an active, zero-multiplier facet."""
    return min(abs(z),
               float(np.hypot(min(gam, 0.0), min(z, 0.0))),
               float(np.hypot(gam, max(z, 0.0))))


def residuals(dp: DiscreteProblem, candidate, cert: OptimalityCertificate, *,
              fit_tol: float = FIT_TOL, comp_tol: float = COMP_TOL,
              active_tol: float = ACTIVE_TOL) -> ResidualReport:
    """Evaluate every condition group at the mesh level."""
    D = _data(dp, candidate)
    p = dp.problem
    nu, n, m = dp.nu, p.n, p.m
    if cert.px.shape != (nu + 1, n) or cert.gamma.shape != (nu + 1, m):
        raise ValueError("certificate dimensions do not match the discrete problem")
    lam, h, sel = cert.lam, D.h, D.sel
    hc = h[:, None]
    y = _y(cert, D)
    G, al = cert.gamma, cert.alpha
    eta_prev = np.vstack([np.zeros((1, m)), D.eta[:-1]])
    y_prev = np.vstack([np.zeros((1, n)), y[:-1]])
    details: dict = {}

    # primal: the discrete inclusion, set membership and complementarity of eta
    w = -np.diff(D.x, axis=0) / hc + p.g(D.x[:-1], D.u)
    r87 = w - np.einsum("jm,jmn->jn", D.eta, D.a[1:])
    viol = ControlPath(dp.mesh, D.u, D.a, D.b).violations(p)
    comp_eta = np.maximum(0.0, np.minimum(D.eta, -D.slack[1:]))
    details["primal"] = {
        "inclusion_87": float(np.abs(r87).max(initial=0.0)),
        "state": float(max(0.0, D.slack.max(initial=-np.inf))),
        "eta_sign": float(max(0.0, -D.eta.min(initial=0.0))),
        "eta_complementarity": float(comp_eta.max(initial=0.0)),
        **{k: float(v) for k, v in viol.items()},
    }

    conx = (np.diff(cert.px, axis=0) / hc - lam * sel["wx"] + np.einsum("jkn,jk->jn", D.Jx, y)
            - np.einsum("jm,jmn->jn", G[:-1], D.a[:-1]))
    details["adjoint_x"] = {"conx": float(np.abs(conx).max(initial=0.0))}

    cona = (np.diff(cert.pa, axis=0) / hc[:, :, None] - lam * sel["wa"]
            - 2.0 / hc[:, :, None] * al[:-1, :, None] * D.a[:-1]
            - G[:-1, :, None] * D.x[:-1, None, :]
            - eta_prev[:, :, None] * y_prev[:, None, :])
    details["adjoint_a"] = {"cona": float(np.abs(cona).max(initial=0.0))}

    conb = np.diff(cert.pb, axis=0) / hc - lam * sel["wb"] + G[:-1]
    details["adjoint_b"] = {"conb": float(np.abs(conb).max(initial=0.0))}

    link_a = cert.pa[1:] - lam * sel["va"] - cert.psi_a
    link_b = cert.pb[1:] - lam * sel["vb"] - cert.psi_b
    details["q_link"] = {"a": float(np.abs(link_a).max(initial=0.0)),
                         "b": float(np.abs(link_b).max(initial=0.0))}

    # coderivative case analysis per node and facet
    z = np.einsum("jmn,jn->jm", D.a[1:], y)
    cod = 0.0
    for k in range(1, nu + 1):
        for i in range(m):
            gam = G[k, i]
            if D.slack[k, i] < -active_tol:
                v = abs(gam)
            elif D.eta[k - 1, i] > comp_tol:
                v = abs(z[k - 1, i])
            else:
                v = _coderivative_violation(gam, z[k - 1, i])
            cod = max(cod, v)
    details["coderivative"] = {"congg1": cod}

    cony = (np.einsum("jnd,jn->jd", D.Ju, y) - lam * sel["wu"] - cert.psi_u / hc)
    details["control_u"] = {"cony": float(np.abs(cony).max(initial=0.0))}

    nc_u = max((_normal_cone_distance(p.U, cert.psi_u[j], D.u[j]) for j in range(nu)),
               default=0.0) if p.d else 0.0
    nc_a = max((_normal_cone_distance(p.A_sets[i], cert.psi_a[j, i], D.rate_a[j, i])
                for j in range(nu) for i in range(m)), default=0.0)
    nc_b = max((_normal_cone_distance(p.B_sets[i], cert.psi_b[j, i], D.rate_b[j, i])
                for j in range(nu) for i in range(m)), default=0.0)
    norms = np.linalg.norm(D.a, axis=2)
    band = dp.band
    nc_alpha = max((_band_cone_distance(al[k, i], norms[k, i], band, 1e-12)
                    for k in range(1, nu + 1) for i in range(m)), default=0.0)
    details["normal_cones"] = {"psi_u": nc_u, "psi_a": nc_a, "psi_b": nc_b, "alpha": nc_alpha}

    hl = h[-1]
    e_end = cert.eta_end(hl)
    nmutx = cert.px[-1] + lam * D.grad_phi + e_end @ D.a[-1]
    nmuta = (cert.pa[-1] + 2.0 * al[-1, :, None] * D.a[-1] + e_end[:, None] * D.x[-1][None]
             + hl * D.eta[-1][:, None] * y[-1][None])
    nmutb = cert.pb[-1] - e_end
    details["transversality"] = {
        "nmutx": float(np.abs(nmutx).max(initial=0.0)),
        "nmuta": float(np.abs(nmuta).max(initial=0.0)),
        "nmutb": float(np.abs(nmutb).max(initial=0.0)),
        "endpoint_sign": float(max(0.0, -cert.xi.min(initial=0.0))),
        "alpha_band_end": max((_band_cone_distance(al[-1, i], norms[-1, i], band, 1e-12)
                               for i in range(m)), default=0.0),
    }

    inactive = D.slack < -active_tol
    strong = D.eta > comp_tol
    details["complementarity"] = {
        "gamma_inactive_94": float(np.abs(G[1:][inactive[1:]]).max(initial=0.0)),
        "endpoint_inactive_94": float(np.abs(e_end[inactive[-1]]).max(initial=0.0)),
        "orthogonality_96": float(np.abs(z[strong]).max(initial=0.0)),
    }

    gaps = {"u": 0.0, "a": 0.0, "b": 0.0}
    skipped = []
    for key, sets, psi, val in (("u", [p.U] if p.d else [], cert.psi_u[:, None], D.u[:, None]),
                                ("a", p.A_sets, cert.psi_a, D.rate_a),
                                ("b", p.B_sets, cert.psi_b, D.rate_b[..., None])):
        for i, s in enumerate(sets):
            try:
                gaps[key] = max(gaps[key], max(
                    (maximization_gap(psi[j, i], val[j, i], s) for j in range(nu)), default=0.0))
            except UnsupportedSet:
                skipped.append(f"{key}{i + 1}")
    details["maximization"] = gaps

    S = nontriviality_sum(cert, hl)
    ntc1 = lam + float(np.linalg.norm(al)) + float(np.linalg.norm(G))
    details["nontriviality"] = {"ntc0_sum": S, "ntc1_sum": ntc1}

    groups = {
        "primal": max(details["primal"].values()),
        "adjoint_x": details["adjoint_x"]["conx"],
        "adjoint_a": details["adjoint_a"]["cona"],
        "adjoint_b": details["adjoint_b"]["conb"],
        "q_link": max(details["q_link"].values()),
        "coderivative": cod,
        "control_u": details["control_u"]["cony"],
        "normal_cones": max(details["normal_cones"].values()),
        "transversality": max(details["transversality"].values()),
        "complementarity": max(details["complementarity"].values()),
        "maximization": max(gaps.values()),
        "nontriviality": max(abs(S - 1.0), 1.0 if ntc1 <= 0.0 else 0.0),
    }
    groups = {k: float(v) for k, v in groups.items()}
    flags = {
        "mode": cert.mode,
        "lambda_zero": cert.lam == 0.0,
        "nontriviality_tier": "general (ntc0, ntc1)",
        "skipped_maximization": skipped,
    }
    return ResidualReport(groups, {g: fit_tol for g in groups}, details, flags)


# --------------------------------------------------------------------------
# fit


class _Index:
    """Column allocator for the sparse dual system."""

    def __init__(self):
        self.size = 0
        self.sign: list = []

    def block(self, shape, sign=0) -> np.ndarray:
        k = int(np.prod(shape))
        idx = np.arange(self.size, self.size + k).reshape(shape)
        self.size += k
        self.sign.extend([sign] * k)
        return idx


class _Rows:
    """Triplet accumulator; columns equal to -1 are dropped."""

    def __init__(self):
        self.n = 0
        self.r, self.c, self.v, self.rhs = [], [], [], []

    def new(self, shape) -> np.ndarray:
        k = int(np.prod(shape))
        idx = np.arange(self.n, self.n + k).reshape(shape)
        self.n += k
        self.rhs.append(np.zeros(k))
        return idx

    def add(self, rows, cols, vals) -> None:
        rows, cols, vals = np.broadcast_arrays(rows, cols, np.asarray(vals, dtype=float))
        keep = cols.ravel() >= 0
        self.r.append(rows.ravel()[keep])
        self.c.append(cols.ravel()[keep])
        self.v.append(vals.ravel()[keep])

    def set_rhs(self, rows, vals) -> None:
        rhs = np.concatenate(self.rhs) if len(self.rhs) > 1 else self.rhs[0]
        rows, vals = np.broadcast_arrays(rows, np.asarray(vals, dtype=float))
        rhs[rows.ravel()] += vals.ravel()
        self.rhs = [rhs]

    def matrix(self, ncols):
        M = sp.csc_matrix((np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
                          shape=(self.n, ncols))
        rhs = np.concatenate(self.rhs) if len(self.rhs) > 1 else self.rhs[0]
        return M, rhs


def _lsq(M, r, cols, delta):
    """Min ``||M z - r||^2 + delta ||z||^2`` over the given columns (others zero)."""
    A = M[:, cols]
    k, nr = A.shape[1], A.shape[0]
    K = sp.bmat([[sp.identity(nr, format="csc"), A],
                 [A.T, -delta * sp.identity(k, format="csc")]], format="csc")
    rhs = np.concatenate([r, np.zeros(k)])
    sol = spsolve(K, rhs)
    # one step of iterative refinement
    sol = sol + spsolve(K, rhs - K @ sol)
    z = np.zeros(M.shape[1])
    z[cols] = sol[nr:]
    return z


def sign_constrained_lsq(M, r, sign, *, delta: float = 1e-14, max_iter: int = 60,
                         tol: float = 1e-12):
    """Least squares with ``sign_k z_k >= 0`` for ``sign_k = +-1`` and ``z_k`` free for 0.

    Block principal pivoting on the sign-constrained coordinates, each
    subproblem solved through the regularized augmented system.
    """
    sign = np.asarray(sign)
    ncol = M.shape[1]
    con = np.flatnonzero(sign != 0)
    passive = np.ones(ncol, dtype=bool)
    best_bad, stuck, z = np.inf, 0, None
    scale = max(1.0, float(np.abs(r).max(initial=0.0)))
    for _ in range(max_iter):
        cols = np.flatnonzero(passive)
        z = _lsq(M, r, cols, delta)
        g = M.T @ (M @ z - r) + delta * z
        sz = sign[con] * z[con]
        sg = sign[con] * g[con]
        bad_in = con[passive[con] & (sz < -tol * scale)]
        bad_out = con[~passive[con] & (sg < -tol * scale)]
        nbad = bad_in.size + bad_out.size
        if nbad == 0:
            break
        if nbad < best_bad:
            best_bad, stuck = nbad, 0
            passive[bad_in] = False
            passive[bad_out] = True
        else:
            stuck += 1
            if stuck >= 3:
                k = max(np.concatenate([bad_in, bad_out]))
                passive[k] = not passive[k]
            else:
                passive[bad_in] = False
                passive[bad_out] = True
    z[con] = np.where(sign[con] * z[con] < 0, 0.0, z[con])
    return z


def _sign_of_band(norm: float, band: float, tol: float) -> int | None:
    """Sign pattern of the band multiplier; ``None`` means fixed at zero."""
    if band == 0.0:
        return 0
    at_hi = norm >= 1.0 + band - tol
    at_lo = norm <= 1.0 - band + tol
    if at_hi and at_lo:
        return 0
    if at_hi:
        return 1
    if at_lo:
        return -1
    return None


def _fit_once(dp: DiscreteProblem, D: _Data, lam: float, normalization, *,
              comp_tol: float, active_tol: float):
    p = dp.problem
    nu, n, m, d = dp.nu, p.n, p.m, p.d
    h, sel = D.h, D.sel
    ix = _Index()
    Px = ix.block((nu + 1, n))
    Pa = ix.block((nu + 1, m, n))
    Pb = ix.block((nu + 1, m))

    # gamma atoms and band multipliers on nodes 1..nu with their sign patterns
    Gi = -np.ones((nu + 1, m), dtype=int)
    Ai = -np.ones((nu + 1, m), dtype=int)
    norms = np.linalg.norm(D.a, axis=2)
    for k in range(1, nu + 1):
        for i in range(m):
            if D.slack[k, i] >= -active_tol:
                s = 0 if D.eta[k - 1, i] > comp_tol else 1
                Gi[k, i] = ix.block((), s)
            sb = _sign_of_band(norms[k, i], dp.band, 1e-12)
            if sb is not None:
                Ai[k, i] = ix.block((), sb)
    Xi = -np.ones(m, dtype=int)
    for i in range(m):
        if D.slack[-1, i] >= -active_tol:
            Xi[i] = ix.block((), 1)

    # normal-cone parameters for u, adot, bdot on every interval
    def cone_block(s, v):
        K, sg = s.cone_generators(v)
        cols = np.array([ix.block((), int(t)) for t in sg], dtype=int)
        return K, cols

    cones_u = [cone_block(p.U, D.u[j]) for j in range(nu)] if d else []
    cones_a = [[cone_block(p.A_sets[i], D.rate_a[j, i]) for i in range(m)] for j in range(nu)]
    cones_b = [[cone_block(p.B_sets[i], D.rate_b[j, i:i + 1]) for i in range(m)]
               for j in range(nu)]

    R = _Rows()
    hj = h[:, None]
    eta_prev = np.vstack([np.zeros((1, m)), D.eta[:-1]])
    vx_prev = np.vstack([np.zeros((1, n)), sel["vx"][:-1]])

    # adjoint x, scaled by h
    r = R.new((nu, n))
    R.add(r, Px[1:], 1.0)
    R.add(r, Px[:-1], -1.0)
    for c in range(n):
        R.add(r[:, c:c + 1], Px[1:], h[:, None] * D.Jx[:, :, c])
    R.add(r[:, None, :], Gi[:-1, :, None], -h[:, None, None] * D.a[:-1])
    R.set_rhs(r, h[:, None] * lam * (sel["wx"] + np.einsum("jkn,jk->jn", D.Jx, sel["vx"])))

    # adjoint a
    r = R.new((nu, m, n))
    R.add(r, Pa[1:], 1.0)
    R.add(r, Pa[:-1], -1.0)
    R.add(r, Ai[:-1, :, None], -2.0 * D.a[:-1])
    R.add(r, Gi[:-1, :, None], -h[:, None, None] * D.x[:-1, None, :])
    R.add(r, Px[:-1, None, :], -h[:, None, None] * eta_prev[:, :, None])
    R.set_rhs(r, h[:, None, None] * lam * (sel["wa"] - eta_prev[:, :, None] * vx_prev[:, None, :]))

    # adjoint b
    r = R.new((nu, m))
    R.add(r, Pb[1:], 1.0)
    R.add(r, Pb[:-1], -1.0)
    R.add(r, Gi[:-1], hj)
    R.set_rhs(r, hj * lam * sel["wb"])

    # control u, scaled by h
    if d:
        r = R.new((nu, d))
        for k in range(d):
            R.add(r[:, k:k + 1], Px[1:], h[:, None] * D.Ju[:, :, k])
        for j in range(nu):
            K, cols = cones_u[j]
            if cols.size:
                R.add(r[j][:, None], cols[None, :], -K)
        R.set_rhs(r, hj * lam * (sel["wu"] + np.einsum("jnd,jn->jd", D.Ju, sel["vx"])))

    # rate normal cones
    r = R.new((nu, m, n))
    R.add(r, Pa[1:], 1.0)
    rb = R.new((nu, m))
    R.add(rb, Pb[1:], 1.0)
    for j in range(nu):
        for i in range(m):
            K, cols = cones_a[j][i]
            if cols.size:
                R.add(r[j, i][:, None], cols[None, :], -K)
            K, cols = cones_b[j][i]
            if cols.size:
                R.add(rb[j, i], cols, -K[0])
    R.set_rhs(r, lam * sel["va"])
    R.set_rhs(rb, lam * sel["vb"])

    # orthogonality where the step multiplier is positive
    jj, ii = np.nonzero(D.eta > comp_tol)
    if jj.size:
        r = R.new((jj.size,))
        R.add(r[:, None], Px[jj + 1], D.a[jj + 1, ii])
        R.set_rhs(r, lam * np.einsum("kn,kn->k", D.a[jj + 1, ii], sel["vx"][jj]))

    # endpoint
    hl = h[-1]
    r = R.new((n,))
    R.add(r, Px[-1], 1.0)
    R.add(r[:, None], Xi[None, :], D.a[-1].T)
    R.add(r[:, None], Gi[-1][None, :], hl * D.a[-1].T)
    R.set_rhs(r, -lam * D.grad_phi)

    r = R.new((m, n))
    R.add(r, Pa[-1], 1.0)
    R.add(r, Ai[-1][:, None], 2.0 * D.a[-1])
    R.add(r, Xi[:, None], D.x[-1][None, :])
    R.add(r, Gi[-1][:, None], hl * D.x[-1][None, :])
    R.add(r, Px[-1][None, :], hl * D.eta[-1][:, None])
    R.set_rhs(r, hl * lam * D.eta[-1][:, None] * sel["vx"][-1][None, :])

    r = R.new((m,))
    R.add(r, Pb[-1], 1.0)
    R.add(r, Xi, -1.0)
    R.add(r, Gi[-1], -hl)

    if normalization is not None:
        kind, k = normalization
        W = 1e3
        r = R.new((1,))
        if kind == "endpoint":
            R.add(r, Xi, W)
            R.add(r, Gi[-1], W * hl)
            R.set_rhs(r, W)
        else:
            R.add(r, Px[-1, k], W)
            R.set_rhs(r, W * (1.0 if kind == "px+" else -1.0))

    M, rhs = R.matrix(ix.size)
    z = sign_constrained_lsq(M, rhs, np.array(ix.sign))

    def take(idx):
        out = np.where(idx >= 0, z[np.maximum(idx, 0)], 0.0)
        return out

    psi_u = np.zeros((nu, d))
    for j in range(nu if d else 0):
        K, cols = cones_u[j]
        if cols.size:
            psi_u[j] = K @ z[cols]
    psi_a = np.zeros((nu, m, n))
    psi_b = np.zeros((nu, m))
    for j in range(nu):
        for i in range(m):
            K, cols = cones_a[j][i]
            if cols.size:
                psi_a[j, i] = K @ z[cols]
            K, cols = cones_b[j][i]
            if cols.size:
                psi_b[j, i] = (K @ z[cols])[0]
    return OptimalityCertificate(
        lam=float(lam), px=take(Px), pa=take(Pa), pb=take(Pb), gamma=take(Gi),
        alpha=take(Ai), xi=take(Xi), psi_u=psi_u, psi_a=psi_a, psi_b=psi_b,
        eta=np.array(D.eta), mode="normal" if lam else "abnormal",
        normalization="ntc0" if normalization is None else f"{normalization[0]}{normalization[1]}",
    )


def _normalize(cert: OptimalityCertificate, h_last: float) -> OptimalityCertificate:
    S = nontriviality_sum(cert, h_last)
    if S <= 0.0:
        return replace(cert, scale=0.0)
    out = cert.scaled(1.0 / S)
    return replace(out, scale=S)


def fit_certificate(dp: DiscreteProblem, candidate, lambda_mode: str = "auto", *,
                    fit_tol: float = FIT_TOL, comp_tol: float = COMP_TOL,
                    active_tol: float = ACTIVE_TOL, strict: bool = True,
                    ) -> OptimalityCertificate:
    """Fit multipliers for ``candidate`` and normalize them.

    ``lambda_mode`` is ``"normal"`` (cost multiplier one before scaling),
    ``"abnormal"`` (zero, with several linear normalizations tried) or
    ``"auto"`` (both; the smaller total residual wins). With ``strict`` a
    certificate whose report exceeds ``fit_tol`` in some group raises
    :class:`NoCertificate` carrying the best certificate and its report.
    """
    if lambda_mode not in ("normal", "abnormal", "auto"):
        raise ValueError(f"unknown lambda mode {lambda_mode!r}")
    D = _data(dp, candidate)
    n = dp.problem.n
    hl = float(D.h[-1])
    trials = []
    if lambda_mode in ("normal", "auto"):
        trials.append((1.0, None))
    if lambda_mode in ("abnormal", "auto"):
        trials.append((0.0, ("endpoint", 0)))
        for k in range(n):
            trials.extend([(0.0, ("px+", k)), (0.0, ("px-", k))])
    best = None
    for lam, norm in trials:
        cert = _normalize(_fit_once(dp, D, lam, norm, comp_tol=comp_tol, active_tol=active_tol), hl)
        rep = residuals(dp, candidate, cert, fit_tol=fit_tol, comp_tol=comp_tol,
                        active_tol=active_tol)
        if best is None or rep.total < best[1].total:
            best = (cert, rep)
        if lambda_mode == "auto" and lam and rep.passed:
            break
    cert, rep = best
    if strict and not rep.passed:
        raise NoCertificate(
            f"no certificate within tolerance; failing groups: {', '.join(rep.failing())}",
            certificate=cert, report=rep)
    return cert


def zero_certificate(dp: DiscreteProblem, candidate) -> OptimalityCertificate:
    """All dual quantities zero (rejected by nontriviality)."""
    p = dp.problem
    nu, n, m, d = dp.nu, p.n, p.m, p.d
    _, traj = _candidate(candidate)
    return OptimalityCertificate(
        0.0, np.zeros((nu + 1, n)), np.zeros((nu + 1, m, n)), np.zeros((nu + 1, m)),
        np.zeros((nu + 1, m)), np.zeros((nu + 1, m)), np.zeros(m), np.zeros((nu, d)),
        np.zeros((nu, m, n)), np.zeros((nu, m)), np.array(traj.eta), mode="abnormal",
        scale=0.0)
