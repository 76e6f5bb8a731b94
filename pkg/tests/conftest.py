import itertools
import time

import numpy as np
import pytest

from sweepctl.dynamics import Mesh, catch_up
from sweepctl.examples import EXAMPLES


def brute_force_projection(A, b, y, tol=1e-10):
    """Projection onto ``{A x <= b}`` by enumerating every active subset.

    For each subset the equality-constrained least-squares problem is solved
    through the pseudo-inverse of its Gram matrix; the closest candidate that
    is feasible with nonnegative multipliers wins.
    """
    m = A.shape[0]
    best = None
    for k in range(m + 1):
        for S in itertools.combinations(range(m), k):
            S = list(S)
            lam = np.zeros(m)
            if S:
                As = A[S]
                mu = np.linalg.pinv(As @ As.T) @ (As @ y - b[S])
                x = y - As.T @ mu
                lam[S] = mu
            else:
                x = y.copy()
            if np.all(A @ x - b <= tol) and np.all(lam >= -tol):
                d = np.linalg.norm(x - y)
                if best is None or d < best[0] - 1e-13:
                    best = (d, x, lam)
    return best[1], best[2]


def random_polyhedron(rng, n=None, m=None):
    """Unit normals around a Slater point; the queries land anywhere nearby."""
    n = n or int(rng.integers(1, 4))
    m = m or int(rng.integers(1, 5))
    A = rng.normal(size=(m, n))
    A /= np.linalg.norm(A, axis=1)[:, None]
    center = rng.normal(size=n)
    b = A @ center + rng.uniform(0.05, 1.0, size=m)
    return A, b, center


@pytest.fixture(scope="session")
def warm():
    """Compile the kernels once so timed sections exclude JIT compilation."""
    for ex in EXAMPLES.values():
        fam = ex.parameterization()
        catch_up(ex.problem, fam.decode((fam.lower + fam.upper) / 2, Mesh.uniform(1.0, 20)))
    return True


class Solved:
    def __init__(self, name, nu=2000):
        from sweepctl.optimizer import solve

        ex = EXAMPLES[name]
        self.example = ex
        self.family = ex.parameterization()
        self.mesh = Mesh.uniform(ex.problem.T, nu)
        t0 = time.perf_counter()
        self.result = solve(ex.problem, self.family, self.mesh)
        self.seconds = time.perf_counter() - t0

    @property
    def candidate(self):
        return self.result.controls, self.result.trajectory


@pytest.fixture(scope="session")
def solved(warm):
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = Solved(name)
        return cache[name]

    return get


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
