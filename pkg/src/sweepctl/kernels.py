"""Hot loops: polyhedral projection and the catch-up recursion.

Everything here works on raw float64 arrays so it can be compiled by numba.
Set ``SWEEPCTL_PYTHON=1`` to run the same code interpreted.
"""

from __future__ import annotations

import numpy as np

from ._jit import jit

ENUM_MAX_FACETS = 6
_GRAM_DET_MIN = 1e-13


@jit
def _popcount(mask):
    c = 0
    while mask:
        c += mask & 1
        mask >>= 1
    return c


@jit
def _dot(u, v):
    s = 0.0
    for k in range(u.shape[0]):
        s += u[k] * v[k]
    return s


@jit
def kkt_ok(A, b, y, x, lam, tol):
    """True when (x, lam) satisfies the projection KKT system up to ``tol``."""
    m, n = A.shape
    for i in range(m):
        s = 0.0
        for k in range(n):
            s += A[i, k] * x[k]
        s -= b[i]
        if s > tol or lam[i] < -tol:
            return False
        if lam[i] * abs(s) > tol:
            return False
    for k in range(n):
        r = y[k] - x[k]
        for i in range(m):
            r -= lam[i] * A[i, k]
        if abs(r) > tol:
            return False
    return True


@jit
def project_enum_into(A, b, y, tol, x, lam):
    """Exact projection by enumerating active subsets in order of size.

    The first subset whose equality-constrained projection is primal feasible
    with nonnegative multipliers is a KKT point, hence the projection. Subsets
    with a singular Gram matrix are skipped; a linearly independent one always
    exists by Caratheodory's theorem. Writes into ``x`` and ``lam`` and returns
    a success flag.
    """
    m, n = A.shape
    x[:] = y
    lam[:] = 0.0
    feasible = True
    for i in range(m):
        if _dot(A[i], y) - b[i] > tol:
            feasible = False
            break
    if feasible:
        return True
    # single facets first, without any allocation
    for i in range(m):
        nn = _dot(A[i], A[i])
        if nn < _GRAM_DET_MIN:
            continue
        mu = (_dot(A[i], y) - b[i]) / nn
        if mu < -tol:
            continue
        ok = True
        for k in range(m):
            if k == i:
                continue
            s = -b[k]
            for l in range(n):
                s += A[k, l] * (y[l] - mu * A[i, l])
            if s > tol:
                ok = False
                break
        if ok:
            for l in range(n):
                x[l] = y[l] - mu * A[i, l]
            lam[i] = max(mu, 0.0)
            return True
    full = 1 << m
    for size in range(2, min(m, n) + 1):
        for mask in range(1, full):
            if _popcount(mask) != size:
                continue
            idx = np.empty(size, dtype=np.int64)
            c = 0
            for i in range(m):
                if mask & (1 << i):
                    idx[c] = i
                    c += 1
            As = A[idx]
            G = As @ As.T
            if np.linalg.det(G) < _GRAM_DET_MIN:
                continue
            mu = np.linalg.solve(G, As @ y - b[idx])
            if np.min(mu) < -tol:
                continue
            xs = y - As.T @ mu
            ok = True
            for i in range(m):
                if _dot(A[i], xs) - b[i] > tol:
                    ok = False
                    break
            if not ok:
                continue
            x[:] = xs
            for k in range(size):
                lam[idx[k]] = max(mu[k], 0.0)
            return True
    return False


@jit
def project_enum(A, b, y, tol):
    """Allocating wrapper of :func:`project_enum_into`; returns ``(x, lam, ok)``."""
    x = np.empty(y.shape[0])
    lam = np.zeros(A.shape[0])
    ok = project_enum_into(A, b, y, tol, x, lam)
    return x, lam, ok


@jit
def project_dual(A, b, y, tol, max_iter):
    """Hildreth's dual coordinate ascent followed by an active-set polish.

    Returns ``(x, lam, ok)``.
    """
    m, n = A.shape
    nn = np.empty(m)
    for i in range(m):
        nn[i] = _dot(A[i], A[i])
    lam = np.zeros(m)
    x = y.copy()
    for _ in range(max_iter):
        change = 0.0
        for i in range(m):
            d = (_dot(A[i], x) - b[i]) / nn[i]
            if d < -lam[i]:
                d = -lam[i]
            lam[i] += d
            x -= d * A[i]
            if abs(d) > change:
                change = abs(d)
        if change < tol * 1e-3:
            break
    # polish on the support of the dual iterate
    cnt = 0
    for i in range(m):
        if lam[i] > tol:
            cnt += 1
    if 0 < cnt <= n:
        idx = np.empty(cnt, dtype=np.int64)
        c = 0
        for i in range(m):
            if lam[i] > tol:
                idx[c] = i
                c += 1
        As = A[idx]
        G = As @ As.T
        if np.linalg.det(G) >= _GRAM_DET_MIN:
            mu = np.linalg.solve(G, As @ y - b[idx])
            xs = y - As.T @ mu
            lp = np.zeros(m)
            for k in range(cnt):
                lp[idx[k]] = mu[k]
            if kkt_ok(A, b, y, xs, lp, tol):
                return xs, lp, True
    return x, lam, kkt_ok(A, b, y, x, lam, 1e3 * tol)


@jit
def project(A, b, y, tol):
    """Project ``y`` onto ``{x : A x <= b}``; returns ``(x, lam, ok)``."""
    if A.shape[0] <= ENUM_MAX_FACETS:
        x, lam, ok = project_enum(A, b, y, tol)
        if ok:
            return x, lam, ok
    return project_dual(A, b, y, tol, 100000)


@jit
def catch_up_affine(x0, a, b, u, h, Gx, Gu, g0, tol):
    """Implicit catching-up recursion with affine drift ``Gx x + Gu u + g0``.

    Parameters
    ----------
    x0 : (n,) initial state
    a : (nu+1, m, n) facet normals at the nodes
    b : (nu+1, m) offsets at the nodes
    u : (nu, d) interval controls
    h : (nu,) step sizes
    tol : absolute KKT tolerance for each projection

    Returns
    -------
    x : (nu+1, n) node states
    lam : (nu, m) projection multipliers (``eta * h``)
    fail : index of the first interval whose projection failed, or -1
    """
    nu = h.shape[0]
    n = x0.shape[0]
    m = b.shape[1]
    x = np.empty((nu + 1, n))
    lam = np.zeros((nu, m))
    x[0] = x0
    d = u.shape[1]
    y = np.empty(n)
    for j in range(nu):
        for k in range(n):
            s = g0[k]
            for l in range(n):
                s += Gx[k, l] * x[j, l]
            for l in range(d):
                s += Gu[k, l] * u[j, l]
            y[k] = x[j, k] + h[j] * s
        scale = 1.0
        for k in range(n):
            scale = max(scale, 1.0 + abs(y[k]))
        if m <= ENUM_MAX_FACETS and project_enum_into(
            a[j + 1], b[j + 1], y, tol * scale, x[j + 1], lam[j]
        ):
            continue
        xj, lj, ok = project_dual(a[j + 1], b[j + 1], y, tol * scale, 100000)
        if not ok:
            return x, lam, j
        x[j + 1] = xj
        lam[j] = lj
    return x, lam, -1
