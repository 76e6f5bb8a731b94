"""Command-line front end.

Exit codes: 0 success, 2 a tolerance check failed, 3 infeasible input,
1 unreadable or malformed input files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .certificates import FIT_TOL, fit_certificate, residuals
from .dynamics import Mesh, SweepingProblem, catch_up, cost, hitting_time
from .errors import EmptyPolyhedron, InfeasiblePoint, InvalidControl, SimulationFailed
from .examples import EXAMPLES, converge, run_example
from .io import constant_controls, load_candidate, load_problem
from .optimizer import (
    SolveOptions,
    piecewise_constant_u,
    solve,
    two_phase_angle_rate,
    two_phase_b_rate,
)
from .sets import Ball
from .transcription import assemble

OK, BAD_INPUT, TOLERANCE, INFEASIBLE = 0, 1, 2, 3


def _problem(target: str) -> SweepingProblem:
    if target in EXAMPLES:
        return EXAMPLES[target].problem
    return load_problem(target)[0]


def _default_family(p: SweepingProblem):
    """A family for a problem file: controls first, then offsets, then normals."""
    if p.d:
        return piecewise_constant_u(p)
    for i in range(p.m):
        if not p.b_frozen(i):
            return two_phase_b_rate(p, i)
    for i in range(p.m):
        if isinstance(p.A_sets[i], Ball) and p.n == 2:
            return two_phase_angle_rate(p, i)
    raise SystemExit("problem has no free controls to optimize")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, default=float)


def cmd_simulate(args) -> int:
    p, raw = load_problem(args.problem)
    mesh = Mesh.uniform(p.T, args.nu)
    if args.controls:
        ctrl = load_candidate(args.controls)
        if ctrl.mesh.nu != args.nu:
            raise SystemExit("control path lives on a different mesh than --nu")
    else:
        ctrl = constant_controls(p, mesh, raw.get("controls"))
    traj = catch_up(p, ctrl)
    traj.to_csv(args.out)
    print(f"cost {cost(p, ctrl, traj):.6f}")
    for e in traj.events:
        print(f"facet {e.facet + 1} hit at t = {e.time:.6f} (interval {e.interval})")
    return OK


def _opts(args) -> SolveOptions:
    return SolveOptions(levels=args.levels, ppa=args.ppa, fd_h=args.fd_h, g_tol=args.g_tol,
                        max_iter=args.max_iter, seeds=args.seeds)


def cmd_solve(args) -> int:
    opts = _opts(args)
    if args.target in EXAMPLES:
        rep = run_example(args.target, args.nu, opts, args.out_dir, certify=False)
        print(f"cost {rep['cost']:.6f}")
        print(_dump(rep))
        ok = all(v["ok"] for v in rep["comparison"].values())
        return OK if ok else TOLERANCE
    p = _problem(args.target)
    fam = _default_family(p)
    res = solve(p, fam, Mesh.uniform(p.T, args.nu), opts)
    out = {
        "result": res.summary(fam.names),
        "discrete_problem": assemble(p, args.nu).summary(),
        "hitting_times": {f"facet{i + 1}": hitting_time(res.trajectory, i) for i in range(p.m)},
    }
    if args.out_dir:
        d = Path(args.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        res.controls.save(d / "controls.json")
        res.trajectory.to_csv(d / "trajectory.csv")
    print(f"cost {res.cost:.6f}")
    print(_dump(out))
    return OK


def cmd_certify(args) -> int:
    p = _problem(args.problem)
    ctrl = load_candidate(args.candidate)
    traj = catch_up(p, ctrl)
    dp = assemble(p, ctrl.mesh.nu, mesh=ctrl.mesh)
    cand = (ctrl, traj)
    cert = fit_certificate(dp, cand, args.lambda_mode, fit_tol=args.fit_tol, strict=False)
    rep = residuals(dp, cand, cert, fit_tol=args.fit_tol)
    print(f"cost {cost(p, ctrl, traj):.6f}")
    print(rep.table())
    if args.json:
        Path(args.json).write_text(rep.to_json())
    return OK if rep.passed else TOLERANCE


def cmd_converge(args) -> int:
    nus = [int(v) for v in args.nus.split(",")]
    params = [float(v) for v in args.params.split(",")] if args.params else None
    rows = converge(args.example, nus, params)
    print(f"{'nu':>6}{'cost':>12}{'sup diff':>14}{'order':>8}")
    for r in rows:
        order = "" if r["order"] is None else f"{r['order']:.3f}"
        print(f"{r['nu']:>6}{r['cost']:>12.6f}{r['sup_diff']:>14.3e}{order:>8}")
    diffs = [r["sup_diff"] for r in rows]
    orders = [r["order"] for r in rows[1:]]
    decreasing = all(b < a for a, b in zip(diffs, diffs[1:]))
    ok = decreasing and all(o is not None and o >= args.min_order for o in orders)
    if not ok:
        print("differences are not strictly decreasing at the required order")
    return OK if ok else TOLERANCE


def cmd_example(args) -> int:
    rep = run_example(args.name, args.nu, None, args.out_dir, certify=not args.no_certify)
    print(f"{args.name}: cost {rep['cost']:.6f} (reference {EXAMPLES[args.name].references['cost']:.6f})")
    for k, v in rep["parameters"].items():
        print(f"  {k} = {v:.6f}")
    if rep["hitting_time"] is not None:
        print(f"  hitting time {rep['hitting_time']:.6f}")
    for k, v in rep["comparison"].items():
        print(f"  {k:<13} error {v['error']:.2e}  tol {v['tol']:.1e}  {'ok' if v['ok'] else 'FAIL'}")
    ok = all(v["ok"] for v in rep["comparison"].values())
    if "certificate" in rep:
        c = rep["certificate"]
        status = "ok" if c["passed"] else "FAIL (" + ", ".join(c["failing"]) + ")"
        print(f"  certificate ({c['mode']}) {status}")
        ok = ok and c["passed"]
    return OK if ok else TOLERANCE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sweepctl",
                                 description="Optimal control of sweeping processes over moving polyhedra")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a problem file and write the trajectory CSV")
    s.add_argument("problem")
    s.add_argument("--nu", type=int, default=1000)
    s.add_argument("--out", default="traj.csv")
    s.add_argument("--controls", help="control path JSON on the same mesh")
    s.set_defaults(func=cmd_simulate)

    d = SolveOptions()
    s = sub.add_parser("solve", help="optimize over a control family")
    s.add_argument("target", help="example name or problem JSON")
    s.add_argument("--nu", type=int, default=2000)
    s.add_argument("--levels", type=int, default=d.levels)
    s.add_argument("--ppa", type=int, default=d.ppa)
    s.add_argument("--fd-h", type=float, default=d.fd_h)
    s.add_argument("--g-tol", type=float, default=d.g_tol)
    s.add_argument("--max-iter", type=int, default=d.max_iter)
    s.add_argument("--seeds", type=int, default=d.seeds)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("certify", help="fit and check discrete optimality conditions")
    s.add_argument("problem", help="example name or problem JSON")
    s.add_argument("candidate", help="control path JSON")
    s.add_argument("--lambda-mode", choices=("normal", "abnormal", "auto"), default="auto")
    s.add_argument("--fit-tol", type=float, default=FIT_TOL)
    s.add_argument("--json", help="write the residual report here")
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("converge", help="self-convergence table for a fixed control")
    s.add_argument("example", choices=sorted(EXAMPLES))
    s.add_argument("--nus", default="250,500,1000,2000")
    s.add_argument("--params", help="comma-separated family parameters (default: reported optimum)")
    s.add_argument("--min-order", type=float, default=0.9)
    s.set_defaults(func=cmd_converge)

    s = sub.add_parser("example", help="solve, certify and compare one worked example")
    s.add_argument("name", choices=sorted(EXAMPLES))
    s.add_argument("--nu", type=int, default=2000)
    s.add_argument("--out-dir")
    s.add_argument("--no-certify", action="store_true")
    s.set_defaults(func=cmd_example)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InfeasiblePoint, EmptyPolyhedron, InvalidControl, SimulationFailed) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return INFEASIBLE
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
