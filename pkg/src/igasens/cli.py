"""Command-line driver.

Every command reads a geometry JSON file and writes one CSV (or JSON)
artifact to ``--out`` or standard output.  Exit codes: 0 success,
2 geometry problem, 3 solver problem, 4 multiple eigenvalue, 5 tracking
match failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field

import numpy as np

from . import shapes
from .analysis import (ProblemSetup, TaylorModel, reparametrize, taylor_eval, track,
                       uniform_expectation)
from .assembly import assemble, assemble_direct, build_space
from .eigensolve import frequency, solve_gevp
from .errors import (GeometryError, IgaError, MultiplicityError, NoMatchError)
from .geometry import load_geometry, save_geometry
from .jets import (A_jet, C_jet, closed_form_first, closed_form_second_C, closed_form_third_C,
                   jet_det, jet_from_affine)
from .quadrature import QuadratureRule
from .sensitivity import eigenpair_derivatives

EXIT_GEOMETRY, EXIT_SOLVER, EXIT_MULTIPLICITY, EXIT_NOMATCH = 2, 3, 4, 5


def fmt(x) -> str:
    return format(float(x), ".17g")


def parse_int_list(text):
    """'1,3,5' or '1-3' or '1-3,6' -> [1, 2, 3, 6]."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


@dataclass
class RunConfig:
    """Validated options shared by all commands."""

    command: str
    geometry: str | None = None
    problem: str = "h1"
    degree: list | None = None
    refine: int = 1
    quad: list | None = None
    t0: float = 0.0
    order: int = 1
    modes: list = field(default_factory=lambda: [1])
    a: float = 0.0
    b: float = 1.0
    steps: int = 10
    threshold: float = 0.8
    out: str | None = None
    seed: int = 0
    dump_matrices: bool = False
    count: int | None = None
    samples: int = 5
    solver: str = "dense"
    reference: float | None = None
    shape: str | None = None
    params: list = field(default_factory=list)

    def validate(self):
        if self.problem not in ("h1", "hcurl"):
            raise ValueError("--problem must be h1 or hcurl")
        if self.refine < 1:
            raise ValueError("--refine must be >= 1")
        if self.order < 0:
            raise ValueError("--order must be >= 0")
        if not self.modes or min(self.modes) < 1:
            raise ValueError("--modes are 1-based")
        if self.steps < 1:
            raise ValueError("--steps must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("--threshold must lie in [0, 1]")
        if self.samples < 1:
            raise ValueError("--samples must be >= 1")
        if self.solver not in ("dense", "shift-invert"):
            raise ValueError("--solver must be dense or shift-invert")
        if self.command != "geometry" and self.command != "check-derivatives" and not self.geometry:
            raise ValueError("--geometry is required")
        return self

    def setup(self, dim):
        quad = None
        if self.quad:
            quad = QuadratureRule(tuple(np.broadcast_to(self.quad, (dim,))))
        return ProblemSetup(self.problem, None if not self.degree else tuple(self.degree),
                            self.refine, quad, skip_zero=self.problem == "hcurl")


def _write(config, text):
    if config.out:
        with open(config.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv(header, rows):
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else fmt(v))
                              for v in r))
    return "\n".join(lines) + "\n"


def _prepare(config, order, t):
    geom = load_geometry(config.geometry)
    setup = config.setup(geom.dim)
    space = build_space(geom, setup.kind, setup.degrees, setup.refine)
    system = assemble(space, geom, t, order, setup.quad)
    if config.dump_matrices:
        stem = (config.out.rsplit(".", 1)[0] if config.out else "matrices")
        system.dump(stem)
    count = config.count or max(config.modes) + 1
    count = min(count, space.n_dof) if space.n_dof else count
    sol = solve_gevp(system.K_stack[0], system.M_stack[0], count, solver=config.solver,
                     skip_zero=setup.skip_zero)
    if setup.skip_zero and sol.n_zero:
        print(f"note: {sol.n_zero} numerically zero eigenvalues skipped", file=sys.stderr)
    return geom, setup, space, system, sol


def cmd_validate(config):
    geom = load_geometry(config.geometry)
    ts = np.linspace(0.0, 1.0, config.steps + 1)
    reps = [geom.validate_mapping(t, config.samples) for t in ts]
    valid = all(r.valid for r in reps)
    doc = {"t": [float(t) for t in ts], "min_det": [r.min_det for r in reps], "valid": valid}
    _write(config, json.dumps(doc) + "\n")
    return 0 if valid else EXIT_GEOMETRY


def cmd_eig(config):
    _, _, _, _, sol = _prepare(config, 0, config.t0)
    rows = []
    for m in config.modes:
        lam, _ = sol.mode(m)
        rows.append((m, lam, frequency(max(lam, 0.0))))
    _write(config, _csv(["mode", "lambda", "frequency_hz"], rows))
    return 0


def cmd_sens(config):
    _, _, _, system, sol = _prepare(config, config.order, config.t0)
    rows = []
    for m in config.modes:
        jet = eigenpair_derivatives(system, sol, m, config.order)
        rows.extend((m, k, v) for k, v in enumerate(jet.lambda_derivs))
    _write(config, _csv(["mode", "order", "lambda_deriv"], rows))
    return 0


def cmd_taylor(config):
    geom, setup, space, system, sol = _prepare(config, config.order, config.t0)
    m = config.modes[0]
    jet = eigenpair_derivatives(system, sol, m, config.order)
    model = TaylorModel(config.t0, jet.lambda_derivs)
    rows = []
    for t in np.linspace(0.0, 1.0, config.steps + 1):
        vals = [taylor_eval(model, t, n) for n in range(config.order + 1)]
        K, M = assemble_direct(space, geom, t, setup.quad)
        solved = solve_gevp(K, M, sol.count, skip_zero=setup.skip_zero).eigenvalues[m - 1]
        rows.append([t, *vals, solved])
    header = ["t"] + [f"lambda_taylor_n{n}" for n in range(config.order + 1)] + ["lambda_solved"]
    _write(config, _csv(header, rows))
    return 0


def cmd_uq(config):
    _, _, _, system, sol = _prepare(config, config.order, config.t0)
    jet = eigenpair_derivatives(system, sol, config.modes[0], config.order)
    model = reparametrize(TaylorModel(config.t0, jet.lambda_derivs), config.a, config.b)
    rows = []
    for n in range(config.order + 1):
        e = uniform_expectation(model.truncated(n), config.a, config.b)
        row = [n, e]
        if config.reference is not None:
            row.append(abs(e - config.reference) / abs(config.reference))
        rows.append(row)
    header = ["order", "expectation"]
    if config.reference is not None:
        header.append("rel_error_vs_closed_form")
    _write(config, _csv(header, rows))
    return 0


def cmd_track(config):
    geom = load_geometry(config.geometry)
    run = track(geom, config.setup(geom.dim), config.modes, config.steps, config.order,
                config.threshold, config.count, solver=config.solver)
    _write(config, _csv(["step", "t", "mode", "lambda", "correlation"], run.rows()))
    return 0


def cmd_check_derivatives(config):
    """Randomized comparison of closed-form derivatives with jet arithmetic."""
    rng = np.random.default_rng(config.seed)
    rows = []
    for case in range(config.count or 200):
        d = int(rng.integers(2, 4))
        G0 = np.eye(d) + 0.1 * rng.uniform(-1, 1, (d, d))
        V = rng.uniform(-1, 1, (d, d))
        V *= 0.4 * rng.uniform() / max(np.linalg.norm(V, 2), 1e-300)
        t = float(rng.uniform())
        G = jet_from_affine(G0, V, t, 3)
        C = C_jet(G)
        A = A_jet(G)
        det = jet_det(G)
        f = closed_form_first(G0, V, t)
        rel = lambda x, y: float(np.abs(x - y).max() / max(np.abs(y).max(), 1e-300))
        err = max(rel(f["dC"], C[1]), rel(f["dA"], A[1]), rel(f["d_det"], det[1]),
                  rel(closed_form_second_C(G0, V, t), C[2]),
                  rel(closed_form_third_C(G0, V, t), C[3]))
        rows.append((case, d, t, err))
    _write(config, _csv(["case", "dim", "t", "max_rel_err"], rows))
    return 0


SHAPES = {
    "disk": lambda p: shapes.disk(*(p or [0.2, 0.8])),
    "ellipse": lambda p: shapes.disk_to_ellipse(p[0] if p else 0.5, tuple(p[1:3]) if len(p) >= 3 else (0.6, 0.45)),
    "square": lambda p: shapes.unit_box(2, *(p or [1.0])),
    "cube": lambda p: shapes.unit_box(3, *(p or [1.0])),
    "interval": lambda p: shapes.interval(*(p or [1.0])),
    "quarter-annulus": lambda p: shapes.quarter_annulus(*(p or [1.0, 2.0])),
}


def cmd_geometry(config):
    if config.shape not in SHAPES:
        raise ValueError(f"--shape must be one of {sorted(SHAPES)}")
    geom = SHAPES[config.shape](config.params)
    if not config.out:
        raise ValueError("--out is required for the geometry command")
    save_geometry(geom, config.out)
    return 0


COMMANDS = {
    "validate": cmd_validate, "eig": cmd_eig, "sens": cmd_sens, "taylor": cmd_taylor,
    "uq": cmd_uq, "track": cmd_track, "geometry": cmd_geometry, "check-derivatives": cmd_check_derivatives,
}


def build_parser():
    p = argparse.ArgumentParser(prog="igasens", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--geometry", help="geometry JSON file")
    p.add_argument("--problem", default="h1", choices=["h1", "hcurl"])
    p.add_argument("--degree", type=parse_int_list, help="solution degree(s), default: geometry degrees")
    p.add_argument("--refine", type=int, default=1, help="subdivisions per geometry element")
    p.add_argument("--quad", type=parse_int_list, help="Gauss points per direction (default degree+1)")
    p.add_argument("--t0", type=float, default=0.0, help="expansion / evaluation point")
    p.add_argument("--order", type=int, default=1, help="highest derivative order")
    p.add_argument("--modes", type=parse_int_list, default=[1], help="1-based modes, e.g. 1,3 or 1-3")
    p.add_argument("--a", type=float, default=0.0, help="lower parameter bound (t=0)")
    p.add_argument("--b", type=float, default=1.0, help="upper parameter bound (t=1)")
    p.add_argument("--steps", type=int, default=10, help="number of t steps")
    p.add_argument("--threshold", type=float, default=0.8, help="tracking correlation threshold")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-matrices", action="store_true",
                   help="write K_k, M_k as 'i j value' files next to --out")
    p.add_argument("--count", type=int, help="number of eigenpairs to compute / random cases")
    p.add_argument("--samples", type=int, default=5, help="validity samples per element and direction")
    p.add_argument("--solver", default="dense", choices=["dense", "shift-invert"])
    p.add_argument("--reference", type=float, help="reference value for relative errors (uq)")
    p.add_argument("--shape", help="geometry command: " + ", ".join(sorted(SHAPES)))
    p.add_argument("--params", type=lambda s: [float(x) for x in s.split(",") if x], default=[],
                   help="geometry command: comma-separated shape parameters")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig(**{k: v for k, v in vars(args).items()}).validate()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    try:
        return COMMANDS[config.command](config)
    except GeometryError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except MultiplicityError as exc:
        print(f"multiplicity error: {exc}", file=sys.stderr)
        return EXIT_MULTIPLICITY
    except NoMatchError as exc:
        print(f"tracking error: {exc}", file=sys.stderr)
        return EXIT_NOMATCH
    except (IgaError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY


if __name__ == "__main__":
    sys.exit(main())
