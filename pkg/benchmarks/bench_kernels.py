"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because ``SWEEPCTL_PYTHON`` is read
at import time. Usage::

    python benchmarks/bench_kernels.py [--nu 2000] [--repeat 5]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

WORKER = "--worker"


def _workloads(nu: int):
    import numpy as np

    from sweepctl import kernels
    from sweepctl.dynamics import Mesh, catch_up
    from sweepctl.examples import EXAMPLES

    rng = np.random.default_rng(0)
    polys = []
    for _ in range(200):
        n, m = int(rng.integers(2, 4)), int(rng.integers(1, 5))
        A = rng.normal(size=(m, n))
        A /= np.linalg.norm(A, axis=1)[:, None]
        b = rng.uniform(0.1, 1.0, m)
        polys.append((A, b, 3.0 * rng.normal(size=n)))

    def projections():
        for A, b, y in polys:
            kernels.project(A, b, y, 1e-12)

    out = {"project x200": projections}
    for name, ex in EXAMPLES.items():
        mesh = Mesh.uniform(ex.problem.T, nu)
        ctrl = ex.parameterization().decode(np.asarray(ex.optimum_params, float), mesh)
        out[f"catch_up {name}"] = lambda p=ex.problem, c=ctrl: catch_up(p, c)
    return out


def worker(nu: int, repeat: int) -> None:
    from sweepctl import JIT_ENABLED

    res = {}
    for label, fn in _workloads(nu).items():
        fn()  # compile or warm caches
        res[label] = min(timeit.repeat(fn, number=1, repeat=repeat))
    print(json.dumps({"jit": JIT_ENABLED, "times": res}))


def run(backend_python: bool, nu: int, repeat: int) -> dict:
    env = dict(os.environ, SWEEPCTL_PYTHON="1" if backend_python else "0")
    out = subprocess.run([sys.executable, __file__, WORKER, str(nu), str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nu", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    fast = run(False, args.nu, args.repeat)
    slow = run(True, args.nu, args.repeat)
    print(f"{'workload':<18}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for label, t in fast["times"].items():
        s = slow["times"][label]
        print(f"{label:<18}{1e3 * t:>12.2f}{1e3 * s:>12.2f}{s / t:>10.1f}")


if __name__ == "__main__":
    if len(sys.argv) > 1 and sys.argv[1] == WORKER:
        worker(int(sys.argv[2]), int(sys.argv[3]))
    else:
        main()
