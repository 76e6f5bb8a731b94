"""JSON descriptions of problems and candidates.

A problem file looks like::

    {
      "name": "wedge",
      "T": 1.0,
      "x0": [0.0, 1.0],
      "facets": {"a": [[0.7071, 0.7071], [0.0, 1.0]], "b": [0.7071, 1.5]},
      "U": {"kind": "box", "lo": [], "hi": []},
      "A": [{"kind": "point", "value": [0, 0]}, {"kind": "point", "value": [0, 0]}],
      "B": [{"kind": "point", "value": [0]}, {"kind": "box", "lo": [-1], "hi": [1]}],
      "perturbation": {"kind": "constant", "value": [0.0, 2.0]},
      "terminal_cost": {"kind": "quadratic", "Q": [[1, 0], [0, 1]], "c": [0, 0]},
      "running_cost": {"kind": "quadratic", "bdot_weight": [0, 1]},
      "controls": {"u": [], "bdot": [0, -0.5]}
    }

``controls`` is optional and gives constant rates used by ``simulate`` when no
control path is supplied. Set descriptors follow :func:`sets.from_json`.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dynamics import ControlPath, Mesh, SweepingProblem
from .errors import UnsupportedSet
from .models import AffinePerturbation, QuadraticRunningCost, QuadraticTerminalCost
from .sets import from_json as set_from_json
from .sets import Box


def _perturbation(d: dict, n: int, dim_u: int) -> AffinePerturbation:
    kind = d.get("kind", "affine")
    if kind == "constant":
        return AffinePerturbation.constant(d["value"], dim_u)
    if kind == "affine":
        Gx = d.get("Gx", np.zeros((n, n)))
        Gu = d.get("Gu", np.zeros((n, dim_u)))
        return AffinePerturbation(Gx, Gu, d.get("g0", np.zeros(n)))
    raise UnsupportedSet(f"unknown perturbation kind {kind!r}")


def _terminal(d: dict, n: int) -> QuadraticTerminalCost:
    kind = d.get("kind", "quadratic")
    if kind == "linear":
        return QuadraticTerminalCost(np.zeros((n, n)), d["c"], d.get("const", 0.0))
    if kind == "quadratic":
        return QuadraticTerminalCost(d.get("Q", np.zeros((n, n))), d.get("c", np.zeros(n)),
                                     d.get("const", 0.0))
    raise ValueError(f"unknown terminal cost kind {kind!r}")


def _running(d: dict, n: int, m: int, dim_u: int) -> QuadraticRunningCost:
    if d.get("kind", "quadratic") != "quadratic":
        raise ValueError(f"unknown running cost kind {d['kind']!r}")
    keys = ("u_weight", "u_linear", "x_weight", "x_linear", "xdot_weight",
            "adot_weight", "bdot_weight")
    return QuadraticRunningCost(n, m, dim_u, **{k: d[k] for k in keys if k in d})


def problem_from_json(d: dict) -> SweepingProblem:
    x0 = np.array(d["x0"], dtype=float)
    a0 = np.array(d["facets"]["a"], dtype=float, ndmin=2)
    b0 = np.array(d["facets"]["b"], dtype=float, ndmin=1)
    n, m = x0.size, b0.size
    U = set_from_json(d["U"]) if "U" in d else Box(np.zeros(0), np.zeros(0))
    A = [set_from_json(s) for s in d.get("A", [{"kind": "point", "value": [0.0] * n}] * m)]
    B = [set_from_json(s) for s in d.get("B", [{"kind": "point", "value": [0.0]}] * m)]
    return SweepingProblem(
        T=float(d.get("T", 1.0)), x0=x0, a0=a0, b0=b0, U=U, A_sets=A, B_sets=B,
        g=_perturbation(d.get("perturbation", {"kind": "constant", "value": [0.0] * n}),
                        n, U.dim),
        phi=_terminal(d.get("terminal_cost", {"kind": "linear", "c": [0.0] * n}), n),
        ell=_running(d.get("running_cost", {}), n, m, U.dim),
        name=d.get("name", "problem"),
        a_norm_band=d.get("a_norm_band"),
    )


def problem_to_json(p: SweepingProblem) -> dict:
    return {
        "name": p.name,
        "T": p.T,
        "x0": p.x0.tolist(),
        "facets": {"a": p.a0.tolist(), "b": p.b0.tolist()},
        "U": p.U.to_json(),
        "A": [s.to_json() for s in p.A_sets],
        "B": [s.to_json() for s in p.B_sets],
        "perturbation": p.g.to_json(),
        "terminal_cost": p.phi.to_json(),
        "running_cost": p.ell.to_json(),
        "a_norm_band": p.a_norm_band,
    }


def load_problem(path) -> tuple:
    """Problem and its raw JSON dict (for the optional ``controls`` entry)."""
    d = json.loads(Path(path).read_text())
    return problem_from_json(d), d


def save_problem(p: SweepingProblem, path, controls: dict | None = None) -> None:
    d = problem_to_json(p)
    if controls is not None:
        d["controls"] = controls
    Path(path).write_text(json.dumps(d, indent=2))


def constant_controls(p: SweepingProblem, mesh: Mesh, spec: dict | None) -> ControlPath:
    """Control path with constant rates from a ``controls`` entry.

    Missing entries default to the point of each set nearest the origin.
    """
    spec = spec or {}
    u = np.array(spec["u"], dtype=float) if "u" in spec else p.U.project(np.zeros(p.d))
    if "adot" in spec:
        ad = np.array(spec["adot"], dtype=float).reshape(p.m, p.n)
    else:
        ad = np.array([s.project(np.zeros(p.n)) for s in p.A_sets]).reshape(p.m, p.n)
    if "bdot" in spec:
        bd = np.array(spec["bdot"], dtype=float).reshape(p.m)
    else:
        bd = np.array([s.project(np.zeros(1)) for s in p.B_sets]).reshape(p.m)
    return ControlPath.from_rates(p, mesh, u, ad, bd)


def load_candidate(path) -> ControlPath:
    """Control path from a JSON file; a solve report's ``controls`` entry is accepted."""
    d = json.loads(Path(path).read_text())
    if "controls" in d and "mesh" not in d:
        d = d["controls"]
    return ControlPath.from_json(d)
