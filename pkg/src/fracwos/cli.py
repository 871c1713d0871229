"""Experiment driver: solve, eigenvalue, variance/cost studies, checks.

Every run writes a plain-text manifest of all parameters (re-runnable via
--config), plus CSV outputs.  All output files are fully determined by
(config, seed); wall-clock timing goes to a separate timing.txt so the
deterministic artifacts stay byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import ast
import os
import re
import sys
import time
from dataclasses import dataclass, fields as dfields

import numpy as np

from . import __version__, assumptions, eigen, mlmc
from .geometry import Ball, ConvexPolygon, Domain, box, unit_ball
from .mesh import MeshHierarchy, build_hierarchy, make_base, square_ball_base, \
    write_field_csv
from .problems import BY_NAME, Problem, by_name
from .sampling import _check_alpha

_EPS_SCHEDULE = [2.0 ** -12, 2.0 ** -14, 2.0 ** -16, 2.0 ** -18]


@dataclass
class RunConfig:
    """Validated parameters of one CLI run."""

    command: str
    alpha: float = 1.0
    problem: str = "example1"
    f_expr: str | None = None
    g_expr: str | None = None
    domain: str | None = None
    l0: int = 4
    L: int = 6
    eps: float = 1e-2
    tol: float = 1e-2
    B: float = 3.0
    m: int = 5
    seed: int = 0
    workers: int = 1
    out: str = "."
    pilot: int = 32
    samples: int = 256
    eps_list: str = ""
    which: str = "I2"
    mu: float = 1.0
    t: float = 1.0
    A: float = 1e4
    M: int = 10 ** 6
    J: int = 20
    max_cost: float = 0.0
    fixed_accuracy: bool = False

    def validate(self):
        _check_alpha(self.alpha)
        if self.eps <= 0 or self.tol <= 0:
            raise ValueError("eps and tol must be positive")
        if not 1 <= self.l0 <= self.L:
            raise ValueError("need 1 <= l0 <= L")
        if self.m < 2 or self.B <= 1:
            raise ValueError("need m >= 2 and B > 1")
        if self.problem not in BY_NAME and self.problem != "custom":
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.problem == "custom" and not (self.f_expr and self.g_expr):
            raise ValueError("custom problem needs f-expr and g-expr")
        if self.which not in ("I1", "I2"):
            raise ValueError("which must be I1 or I2")
        return self


_NUM = r"[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?"


def parse_domain(spec: str) -> Domain:
    """Parse `ball(cx, cy, r)`, `box(x0, y0, x1, y1)`, `polygon((x, y), ...)`."""
    s = spec.strip().replace(" ", "")
    m = re.fullmatch(rf"ball\(({_NUM}),({_NUM}),({_NUM})\)", s)
    if m:
        cx, cy, r = map(float, m.groups())
        return Ball((cx, cy), r)
    m = re.fullmatch(rf"box\(({_NUM}),({_NUM}),({_NUM}),({_NUM})\)", s)
    if m:
        return box(*map(float, m.groups()))
    m = re.fullmatch(r"polygon\((.*)\)", s)
    if m:
        pts = re.findall(rf"\(({_NUM}),({_NUM})\)", m.group(1))
        if len(pts) < 3:
            raise ValueError(f"polygon needs at least 3 vertices: {spec!r}")
        return ConvexPolygon(np.array(pts, dtype=float))
    raise ValueError(f"cannot parse domain spec {spec!r}")


class ExprField:
    """Scalar field compiled from an expression in x, y, r2 (numpy namespace)."""

    _ALLOWED = {"sin", "cos", "exp", "log", "sqrt", "abs", "tanh", "pi",
                "maximum", "minimum", "where"}

    def __init__(self, expr: str):
        tree = ast.parse(expr, mode="eval")
        for node in ast.walk(tree):
            if isinstance(node, ast.Name) and node.id not in self._ALLOWED | {"x", "y", "r2"}:
                raise ValueError(f"name {node.id!r} not allowed in field expression")
            if isinstance(node, ast.Attribute):
                raise ValueError("attribute access not allowed in field expression")
        self.expr = expr
        self._code = compile(tree, "<field>", "eval")

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        x, y = pts[..., 0], pts[..., 1]
        ns = {name: getattr(np, name) for name in self._ALLOWED}
        ns.update(x=x, y=y, r2=x * x + y * y)
        return np.asarray(eval(self._code, {"__builtins__": {}}, ns), dtype=np.float64)

    def __reduce__(self):
        return (ExprField, (self.expr,))


def base_mesh_for(domain: Domain):
    """Base triangulation covering the domain: the 4-triangle diagonal split
    of the bounding square for balls, a centroid fan for convex polygons."""
    if isinstance(domain, Ball):
        cx, cy = domain.center
        r = domain.radius
        v = np.array([[cx - r, cy - r], [cx + r, cy - r], [cx + r, cy + r],
                      [cx - r, cy + r], [cx, cy]])
        t = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
        return make_base(v, t, level=1, domain=domain)
    verts = domain.vertices
    centroid = verts.mean(axis=0)
    v = np.vstack([verts, centroid])
    n = verts.shape[0]
    t = np.array([[i, (i + 1) % n, n] for i in range(n)])
    return make_base(v, t, level=1, domain=domain)


def build_problem(cfg: RunConfig) -> Problem:
    if cfg.problem != "custom":
        return by_name(cfg.problem, cfg.alpha)
    domain = parse_domain(cfg.domain) if cfg.domain else unit_ball()
    return Problem(alpha=cfg.alpha, domain=domain, f=ExprField(cfg.f_expr),
                   g=ExprField(cfg.g_expr), name="custom")


def build_mesh(cfg: RunConfig, domain: Domain) -> MeshHierarchy:
    if cfg.domain is None and isinstance(domain, Ball) \
            and domain.center == (0.0, 0.0) and domain.radius == 1.0:
        base = square_ball_base(domain)
    else:
        base = base_mesh_for(domain)
    return build_hierarchy(base, cfg.L, domain=domain)


def fit_slope(pairs) -> float:
    """Least-squares slope of log2 V against log2 h over (h, V) pairs."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError("need at least 3 (h, V) pairs")
    h = np.array([p[0] for p in pairs], dtype=float)
    v = np.array([p[1] for p in pairs], dtype=float)
    if np.any(h <= 0) or np.any(v <= 0):
        raise ValueError("slope fit needs positive h and V")
    x, y = np.log2(h), np.log2(v)
    xc = x - x.mean()
    return float((xc @ (y - y.mean())) / (xc @ xc))


# ---------------------------------------------------------------------------
# manifest / config plumbing

_MANIFEST_KEYS = [f.name for f in dfields(RunConfig) if f.name != "out"]


def read_config(path: str) -> dict:
    """Parse `key = value` lines; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {raw.rstrip()}")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key] = val
    return out


def write_manifest(path: str, cfg: RunConfig, info: dict) -> None:
    with open(path, "w") as fh:
        for key in _MANIFEST_KEYS:
            val = getattr(cfg, key)
            if val is None or val == "":
                continue
            fh.write(f"{key} = {val}\n")
        fh.write(f"# fracwos {__version__}, numpy {np.__version__}\n")
        for key, val in info.items():
            fh.write(f"# {key} = {val}\n")


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_solve(cfg: RunConfig) -> dict:
    problem = build_problem(cfg)
    hier = build_mesh(cfg, problem.domain)
    res = mlmc.run(hier, problem, cfg.eps, cfg.l0, cfg.seed,
                   pilot_M=cfg.pilot, workers=cfg.workers,
                   max_cost=cfg.max_cost or None)
    level = hier.level(res.solution.level)
    write_field_csv(os.path.join(cfg.out, "solution.csv"), level,
                    res.solution, cfg.alpha, cfg.seed)
    info = {"levels": f"{res.plan.coarsest}..{res.plan.finest}",
            "V_per_level": [float(v) for v in res.plan.V],
            "C_per_level": [float(c) for c in res.plan.C],
            "M_per_level": [int(m) for m in res.plan.M],
            "samples": [int(x) for x in res.samples_used],
            "total_cost": res.total_cost,
            "stat_error_est": res.stat_error_est, "c1_hat": res.plan.c1_hat}
    if problem.exact is not None:
        abs_err, rel_err = mlmc.error_vs_exact(res, problem.exact, hier)
        info["abs_error"] = abs_err
        info["rel_error"] = rel_err
    return info


def cmd_eig(cfg: RunConfig) -> dict:
    domain = parse_domain(cfg.domain) if cfg.domain else unit_ball()
    hier = build_mesh(cfg, domain)
    res = eigen.smallest_eigenvalue(
        cfg.alpha, hier, cfg.tol, cfg.B, cfg.m, cfg.seed, l0=cfg.l0,
        workers=cfg.workers, variable_accuracy=not cfg.fixed_accuracy,
        pilot_M=cfg.pilot)
    rows = [(r["k"], r["theta"], r["lambda"], r["residual"],
             r["gap"], r["wos_tol"], r["cost"]) for r in res.history]
    _write_csv(os.path.join(cfg.out, "iters.csv"),
               ["k", "theta", "lambda", "residual", "gap", "wos_tol", "cost"],
               rows)
    return {"lambda": res.lam, "theta": res.theta, "residual": res.residual,
            "iterations": res.iterations, "total_cost": res.total_cost}


def cmd_variance_study(cfg: RunConfig) -> dict:
    problem = build_problem(cfg)
    hier = build_mesh(cfg, problem.domain)
    stats = mlmc.level_statistics(hier, problem, cfg.l0, cfg.L, cfg.samples,
                                  cfg.seed, workers=cfg.workers)
    rows = []
    for ell in range(cfg.l0, cfg.L):
        mom = stats.trans[ell]
        rows.append((ell, hier.level(ell).mesh_width, mom.variance,
                     mom.mean_cost, mom.count))
    slope = fit_slope([(r[1], r[2]) for r in rows]) if len(rows) >= 3 else None
    _write_csv(os.path.join(cfg.out, "study.csv"),
               ["level", "h", "V", "C", "M"], rows)
    with open(os.path.join(cfg.out, "study.csv"), "a") as fh:
        fh.write(f"# slope = {slope}\n")
    return {"slope": slope, "levels": [r[0] for r in rows],
            "V": [r[2] for r in rows]}


def cmd_cost_study(cfg: RunConfig) -> dict:
    problem = build_problem(cfg)
    hier = build_mesh(cfg, problem.domain)
    eps_list = ([float(s) for s in cfg.eps_list.split(",") if s]
                if cfg.eps_list else _EPS_SCHEDULE)
    rows = mlmc.cost_comparison(hier, problem, eps_list, cfg.l0, cfg.seed,
                                pilot_M=cfg.pilot, workers=cfg.workers,
                                execute_budget=cfg.max_cost)
    _write_csv(os.path.join(cfg.out, "study.csv"),
               ["eps", "L", "mlmc_cost", "vanilla_cost", "executed_cost"],
               [(r["eps"], r["L"], r["mlmc_cost"], r["vanilla_cost"],
                 r["executed_cost"]) for r in rows])
    return {"rows": [(r["eps"], r["mlmc_cost"], r["vanilla_cost"]) for r in rows]}


def cmd_check_assumptions(cfg: RunConfig) -> dict:
    domain = parse_domain(cfg.domain) if cfg.domain else box(0.0, 0.0, 1.0, 1.0)
    template = assumptions.AssumptionConfig(
        alpha=cfg.alpha, mu=cfg.mu, t=cfg.t, A=cfg.A, samples_M=cfg.M,
        start_points_J=cfg.J, domain=domain, seed=cfg.seed)
    if cfg.which == "I2":
        rows = assumptions.sweep("I2", [(cfg.alpha, cfg.mu)], template)
    else:
        rows = assumptions.sweep("I1", [(cfg.alpha, cfg.A, cfg.t)], template)
    _write_csv(os.path.join(cfg.out, "study.csv"),
               ["alpha", "mu_or_t", "A", "max_I", "stderr"],
               [(r["alpha"], r["mu_or_t"], r["A"], r["max_I"], r["stderr"])
                for r in rows])
    return {"max_I": rows[0]["max_I"], "stderr": rows[0]["stderr"]}


_COMMANDS = {"solve": cmd_solve, "eig": cmd_eig,
             "variance-study": cmd_variance_study,
             "cost-study": cmd_cost_study,
             "check-assumptions": cmd_check_assumptions}


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracwos",
                                 description="Walk-outside-spheres field and "
                                             "eigenvalue solver")
    sub = ap.add_subparsers(dest="command", required=True)
    descriptions = {
        "solve": "multilevel field solve; writes solution.csv",
        "eig": "smallest eigenvalue by inexact Arnoldi; writes iters.csv",
        "variance-study": "coupling-variance decay per level; writes study.csv",
        "cost-study": "multilevel vs single-level planned costs; writes study.csv",
        "check-assumptions": "one-step contraction/boundary functionals",
    }
    for name in _COMMANDS:
        p = sub.add_parser(name, description=descriptions[name])
        p.add_argument("--config", help="key = value file overriding defaults")
        p.add_argument("--alpha", type=float, help="fractional order in (0, 2)")
        p.add_argument("--problem", choices=[*BY_NAME, "custom"])
        p.add_argument("--f-expr", dest="f_expr",
                       help="source expression in x, y, r2 (custom problem)")
        p.add_argument("--g-expr", dest="g_expr",
                       help="exterior-data expression (custom problem)")
        p.add_argument("--domain",
                       help="ball(cx,cy,r) | box(x0,y0,x1,y1) | polygon((x,y),...)")
        p.add_argument("--l0", type=int, help="coarsest mesh level")
        p.add_argument("--L", type=int, help="finest mesh level")
        p.add_argument("--eps", type=float, help="field-solve L2 tolerance")
        p.add_argument("--tol", type=float, help="eigenvalue-residual tolerance")
        p.add_argument("--B", type=float, help="eigenvalue confidence factor (> 1)")
        p.add_argument("--m", type=int, help="Arnoldi iteration count")
        p.add_argument("--seed", type=int,
                       help="master seed (falls back to $FRACWOS_SEED)")
        p.add_argument("--workers", type=int,
                       help="sampling processes; 0 = all cores")
        p.add_argument("--out", help="output directory")
        p.add_argument("--pilot", type=int, help="pilot samples per level")
        p.add_argument("--samples", type=int,
                       help="samples per level (variance-study)")
        p.add_argument("--eps-list", dest="eps_list",
                       help="comma-separated decreasing tolerances (cost-study)")
        p.add_argument("--which", choices=["I1", "I2"],
                       help="assumption functional to check")
        p.add_argument("--mu", type=float, help="contraction exponent")
        p.add_argument("--t", type=float, help="boundary-functional exponent")
        p.add_argument("--A", type=float, help="boundary-functional cap")
        p.add_argument("--M", type=int, help="samples per start point")
        p.add_argument("--J", type=int, help="number of start points")
        p.add_argument("--max-cost", dest="max_cost", type=float,
                       help="walk-step budget cap (solve) / execute budget "
                            "(cost-study)")
        p.add_argument("--fixed-accuracy", dest="fixed_accuracy",
                       action="store_const", const=True,
                       help="disable the variable solve-tolerance rule (eig)")
    return ap


_FIELD_TYPES = {f.name: f.type for f in dfields(RunConfig)}


def _coerce(key: str, val: str):
    typ = _FIELD_TYPES.get(key, "str")
    if typ == "int":
        return int(val)
    if typ == "float":
        return float(val)
    if typ == "bool":
        return val.lower() in ("1", "true", "yes")
    return val


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command)
    if args.config:
        for key, val in read_config(args.config).items():
            if key == "command":
                if val != args.command:
                    raise ValueError(f"config is for command {val!r}, "
                                     f"not {args.command!r}")
                continue
            if key not in _FIELD_TYPES:
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(key, val))
    for key in _FIELD_TYPES:
        val = getattr(args, key, None)
        if val is not None and key != "command":
            setattr(cfg, key, val)
    if args.seed is None and "seed" not in (read_config(args.config) if args.config else {}):
        env = os.environ.get("FRACWOS_SEED")
        if env is not None:
            cfg.seed = int(env)
    if cfg.workers <= 0:
        cfg.workers = os.cpu_count() or 1
    return cfg.validate()


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        os.makedirs(cfg.out, exist_ok=True)
        t0 = time.time()
        info = _COMMANDS[cfg.command](cfg)
        wall = time.time() - t0
        write_manifest(os.path.join(cfg.out, "manifest.txt"), cfg, info)
        with open(os.path.join(cfg.out, "timing.txt"), "w") as fh:
            fh.write(f"wall_seconds = {wall:.3f}\n")
        for key, val in info.items():
            print(f"{key}: {val}")
        return 0
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"fracwos: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
