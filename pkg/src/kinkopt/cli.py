"""Command-line front end: scenario configs in, JSON/CSV reports out.

Usage::

    kinkopt <command> --config <path|scenario> --out <dir> [--levels N] [--seed N]
    kinkopt convergence-study <command> --config ... --out ...
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .curvature import (an_experiment, an_tilde_experiment, combined_limit, compute_Q2_explicit,
                        compute_Q_total, q2_liminf_estimate)
from .green import GreenHypothesisError, green_residual
from .levelset import NeighborhoodOverlapError, extract_level_set, jump_functional
from .mesh import MeshError, NodalField, PolygonDomain, l2_error, mesh_levels
from .optimize import (NotStationaryError, OptimizerParams, adjoint_state, check_soc,
                       min_curvature, projected_gradient_solve)
from .pde import CoefficientError, ControlProblem, SolverError, solve_linearized, solve_state
from .scenarios import SCENARIO_NAMES, get_scenario

logger = logging.getLogger("kinkopt")

EXIT_OK, EXIT_UNKNOWN, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, message, fields=()):
        self.fields = tuple(fields)
        super().__init__(message + (f": {', '.join(self.fields)}" if self.fields else ""))


class SolverFailure(RuntimeError):
    pass


# ------------------------------------------------------------------ config

def load_config(source: str) -> dict:
    """A JSON file path or the name of a built-in scenario."""
    if os.path.isfile(source):
        try:
            with open(source, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON ({err})") from err
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        return cfg
    if source in SCENARIO_NAMES:
        return get_scenario(source)
    raise ConfigError(f"no config file or scenario named {source!r}")


def _get(cfg, path, default=None):
    node = cfg
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            return default
        node = node[key]
    return node


PROBLEM_FIELDS = ("problem.a0", "problem.a1", "problem.t_bar", "problem.nu",
                  "problem.alpha", "problem.beta")
BASE_FIELDS = ("domain", "mesh.target_h")

REQUIRED = {
    "solve-state": PROBLEM_FIELDS,
    "solve-ocp": PROBLEM_FIELDS,
    "extract-levelset": ("fields.y_bar",),
    "verify-green": ("fields.y1", "fields.y2", "fields.v", "fields.phi", "params.t"),
    "jump-functional": ("fields.y_bar", "params.r_list", "problem.a0", "problem.a1", "problem.t_bar"),
    "an-limits": ("fields.y_bar", "fields.w", "fields.phi", "problem.t_bar", "params.epsilon",
                  "params.s_list"),
    "curvature": PROBLEM_FIELDS,
    "check-soc": PROBLEM_FIELDS,
}
EXPRESSION_FIELDS = ("problem.b", "problem.a0", "problem.a1", "problem.L", "problem.dL_dy",
                     "problem.d2L_dy2")


def validate(cfg: dict, command: str) -> None:
    missing = [f for f in BASE_FIELDS + REQUIRED[command] if _get(cfg, f) is None]
    if missing:
        raise ConfigError("missing required fields", missing)
    bad = []
    paths = list(EXPRESSION_FIELDS) + [f"fields.{k}" for k in (_get(cfg, "fields") or {})]
    for path in paths:
        value = _get(cfg, path)
        if value is None:
            continue
        try:
            ex.parse_expr(str(value))
        except ex.ParseError as err:
            bad.append(f"{path} ({err})")
    if bad:
        raise ConfigError("expressions do not parse", bad)
    if _get(cfg, "problem") is not None and all(_get(cfg, f) is not None for f in PROBLEM_FIELDS):
        if not float(cfg["problem"]["nu"]) > 0:
            raise ConfigError("nu must be positive", ["problem.nu"])
        if not float(cfg["problem"]["alpha"]) < float(cfg["problem"]["beta"]):
            raise ConfigError("alpha must be smaller than beta", ["problem.alpha", "problem.beta"])
    h = _get(cfg, "mesh.target_h")
    if not (isinstance(h, (int, float)) and h > 0):
        raise ConfigError("target_h must be a positive number", ["mesh.target_h"])


def build_domain(cfg) -> PolygonDomain:
    d = cfg["domain"]
    try:
        if isinstance(d, dict) and d.get("type") == "rectangle":
            return PolygonDomain.rectangle(*map(float, d["bounds"]))
        verts = d["vertices"] if isinstance(d, dict) else d
        return PolygonDomain(np.asarray(verts, dtype=float))
    except (KeyError, TypeError, ValueError, MeshError) as err:
        raise ConfigError(f"invalid domain ({err})", ["domain"]) from err


def build_problem(cfg) -> ControlProblem:
    p = cfg.get("problem", {})
    try:
        return ControlProblem.from_strings(
            b=str(p.get("b", "1")), a0=str(p["a0"]), a1=str(p["a1"]), t_bar=float(p["t_bar"]),
            L=str(p.get("L", "0")), dL_dy=p.get("dL_dy"), d2L_dy2=p.get("d2L_dy2"),
            nu=float(p.get("nu", 1.0)), alpha=float(p.get("alpha", -math.inf)),
            beta=float(p.get("beta", math.inf)))
    except (CoefficientError, ex.ExprError) as err:
        raise ConfigError(f"invalid problem ({err})", ["problem"]) from err


def _field(cfg, name, default=None) -> ex.DiffExpr:
    value = _get(cfg, f"fields.{name}", default)
    if value is None:
        raise ConfigError("missing required fields", [f"fields.{name}"])
    return ex.field(str(value))


def _param(cfg, name, default=None):
    value = _get(cfg, f"params.{name}", default)
    if value is None:
        raise ConfigError("missing required fields", [f"params.{name}"])
    return value


# ---------------------------------------------------------------- outputs

@dataclass
class Table:
    header: list
    rows: list

    def render(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([_fmt(x) for x in r])
        return buf.getvalue()


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_outputs(out_dir: str, files: dict) -> None:
    """Write each file to a temporary name in ``out_dir`` and rename it into place."""
    os.makedirs(out_dir, exist_ok=True)
    for name, content in files.items():
        if isinstance(content, Table):
            text = content.render()
        elif isinstance(content, str):
            text = content
        else:
            text = json.dumps(_jsonable(content), indent=2, sort_keys=True) + "\n"
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, os.path.join(out_dir, name))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


# ---------------------------------------------------------------- commands
#
# Each command has a per-mesh ``metrics`` function (used by the refinement
# study) and a ``run`` function producing its output files on one mesh.

def _solve_state(cfg, problem, mesh, control):
    y, stats = solve_state(problem, mesh, NodalField.interpolate(mesh, control), tol=1e-12)
    if not stats.converged:
        raise SolverFailure(f"state iteration did not converge (increment "
                            f"{stats.fixed_point_increments[-1]:.3e})")
    return y, stats


def _solve_ocp(cfg, problem, mesh):
    params = OptimizerParams(tol_kkt=float(_get(cfg, "params.tol_kkt", 1e-8)),
                             max_iter=int(_get(cfg, "params.max_iter", 500)))
    u0 = _field(cfg, "u0", "0")
    u, stats = projected_gradient_solve(problem, mesh, NodalField.interpolate(mesh, u0), params)
    if not stats.converged:
        raise SolverFailure(f"optimizer stopped with kkt residual {stats.kkt_residual:.3e}")
    return u, stats


def state_metrics(cfg, mesh, seed):
    problem = build_problem(cfg)
    y, stats = _solve_state(cfg, problem, mesh, _field(cfg, "u", "0"))
    out = {"iterations": stats.iterations, "max_abs": y.max_abs()}
    if _get(cfg, "fields.y_exact") is not None:
        out["l2_error"] = l2_error(mesh, y.values, _field(cfg, "y_exact"))
    return out, {"y": y, "stats": stats}


def run_solve_state(cfg, mesh, seed):
    m, extra = state_metrics(cfg, mesh, seed)
    st = extra["stats"]
    return {"state.json": {"h_max": mesh.h_max, "values": extra["y"].values,
                           "iterations": st.iterations, "converged": st.converged,
                           "final_residual": st.final_residual,
                           "l2_error": m.get("l2_error")},
            "mesh.json": mesh.to_json()}


def ocp_metrics(cfg, mesh, seed):
    problem = build_problem(cfg)
    u, stats = _solve_ocp(cfg, problem, mesh)
    return ({"j": stats.j_history[-1], "kkt_residual": stats.kkt_residual,
             "iterations": stats.iterations}, {"u": u, "stats": stats})


def run_solve_ocp(cfg, mesh, seed):
    m, extra = ocp_metrics(cfg, mesh, seed)
    st = extra["stats"]
    hist = Table(["iteration", "j", "kkt_residual"],
                 [(k, j, r) for k, (j, r) in enumerate(zip(st.j_history, st.kkt_history))])
    return {"ocp.json": {"u_bar": extra["u"].values, "j": m["j"], "kkt_residual": m["kkt_residual"],
                         "iterations": m["iterations"], "converged": st.converged},
            "history.csv": hist, "mesh.json": mesh.to_json()}


def _level(cfg):
    t = _get(cfg, "params.t")
    if t is None:
        t = _get(cfg, "problem.t_bar")
    if t is None:
        raise ConfigError("missing required fields", ["params.t"])
    return float(t)


def levelset_metrics(cfg, mesh, seed):
    y = NodalField.interpolate(mesh, _field(cfg, "y_bar"))
    dec = extract_level_set(y, _level(cfg))
    return ({"components": len(dec), "length": dec.length,
             "min_grad": min((c.min_grad for c in dec), default=float("nan"))}, {"dec": dec})


def run_extract_levelset(cfg, mesh, seed):
    _, extra = levelset_metrics(cfg, mesh, seed)
    return {"levelset.json": extra["dec"].to_json()}


def green_metrics(cfg, mesh, seed):
    f1, f2 = _field(cfg, "y1"), _field(cfg, "y2")
    y1, y2 = NodalField.interpolate(mesh, f1), NodalField.interpolate(mesh, f2)
    normals = None if _get(cfg, "params.normals", "analytic") == "discrete" else (f1, f2)
    window = _get(cfg, "params.window")
    r = green_residual(y1, y2, float(_param(cfg, "t")), _field(cfg, "v"), _field(cfg, "phi"),
                       window=window, normal_fields=normals)
    return {"lhs": r.lhs, "rhs": r.rhs, "residual": r.residual}, {}


def run_verify_green(cfg, mesh, seed):
    m, _ = green_metrics(cfg, mesh, seed)
    return {"green.csv": Table(["h_max", "lhs", "rhs", "residual"],
                               [(mesh.h_max, m["lhs"], m["rhs"], m["residual"])])}


def _sigma0(cfg):
    s = _get(cfg, "params.sigma0")
    return float(s) if s is not None else build_problem(cfg).a.sigma0


def jump_metrics(cfg, mesh, seed):
    y = NodalField.interpolate(mesh, _field(cfg, "y_bar"))
    t_bar = float(_get(cfg, "params.t_bar", _get(cfg, "problem.t_bar")))
    res = jump_functional(y, t_bar, _sigma0(cfg), _param(cfg, "r_list"))
    return {"extrapolated": res.extrapolated}, {"res": res}


def run_jump_functional(cfg, mesh, seed):
    m, extra = jump_metrics(cfg, mesh, seed)
    res = extra["res"]
    return {"jump.csv": Table(["r", "estimate"], list(zip(res.r_list, res.estimates))),
            "jump.json": {"extrapolated": res.extrapolated, "r_list": res.r_list,
                          "estimates": res.estimates}}


def _geometry_fields(cfg, mesh):
    y = NodalField.interpolate(mesh, _field(cfg, "y_bar"))
    w = NodalField.interpolate(mesh, _field(cfg, "w"))
    return y, w, _field(cfg, "phi")


def an_metrics(cfg, mesh, seed):
    y, w, phi = _geometry_fields(cfg, mesh)
    args = (y, w, phi, float(cfg["problem"]["t_bar"]), int(_get(cfg, "params.component_index", 0)),
            float(_param(cfg, "epsilon")), _param(cfg, "s_list"))
    exps = {"an": an_experiment(*args), "an_tilde": an_tilde_experiment(*args),
            "combined": combined_limit(*args)}
    m = {"target": exps["an"].target}
    for k, e in exps.items():
        m[f"{k}_final"] = e.values[-1]
    return m, exps


def run_an_limits(cfg, mesh, seed):
    _, exps = an_metrics(cfg, mesh, seed)
    files = {}
    for k, e in exps.items():
        files[f"{k}.csv"] = Table(["s", "value", "target", "abs_error"], e.rows())
    return files


def curvature_metrics(cfg, mesh, seed):
    problem = build_problem(cfg)
    if _get(cfg, "fields.u0") is None:
        # geometry mode: the level-set part for given fields, z_v = w
        y, w, phi = _geometry_fields(cfg, mesh)
        q2, detail = compute_Q2_explicit(problem, y, phi, w)
        return {"q_2": q2}, {"detail": detail}
    u, _ = _solve_ocp(cfg, problem, mesh)
    v = NodalField.interpolate(mesh, _field(cfg, "v"))
    rep = compute_Q_total(problem, mesh, u, v)
    est = q2_liminf_estimate(problem, mesh, u, v, _param(cfg, "s_list"))
    y, _ = solve_state(problem, mesh, u, tol=1e-12)
    phi = adjoint_state(problem, mesh, y)
    z = solve_linearized(problem, mesh, y, v)
    sigma = jump_functional(y, problem.a.t_bar, problem.a.sigma0,
                            _get(cfg, "params.r_list", [0.02, 0.01, 0.005, 0.0025])).extrapolated
    bound = sigma * float(np.abs(phi.gradient()).max()) * z.max_abs() ** 2
    m = {"q_s": rep.q_s, "q_1": rep.q_1, "q_2": rep.q_2, "total": rep.total,
         "q2_estimate": est.final, "sigma": sigma, "sigma_bound": bound}
    return m, {"report": rep, "estimate": est}


def run_curvature(cfg, mesh, seed):
    m, extra = curvature_metrics(cfg, mesh, seed)
    if "report" not in extra:
        return {"curvature.json": {"q_2": m["q_2"], "detail": extra["detail"]}}
    est = extra["estimate"]
    return {"curvature.json": dict(extra["report"].to_json(), q2_estimate=est.final,
                                   sigma=m["sigma"], sigma_bound=m["sigma_bound"]),
            "q2_estimate.csv": Table(["s", "value"], list(zip(est.s_list, est.values)))}


def soc_metrics(cfg, mesh, seed):
    problem = build_problem(cfg)
    u, stats = _solve_ocp(cfg, problem, mesh)
    reports = check_soc(problem, mesh, u, int(_get(cfg, "params.n_directions", 20)),
                        mode=str(_get(cfg, "params.mode", "necessary")), seed=seed,
                        tol_kkt=float(_get(cfg, "params.tol_kkt", 1e-8)))
    return ({"min_q": min_curvature(reports),
             "violations": sum(r.verdict == "violated" for r in reports)}, {"reports": reports})


def run_check_soc(cfg, mesh, seed):
    m, extra = soc_metrics(cfg, mesh, seed)
    reports = extra["reports"]
    return {"soc.csv": Table(["direction_id", "q_s", "q_1", "q_2", "q_total", "cone_violation"],
                             [r.row() for r in reports]),
            "soc.json": {"min_q": m["min_q"], "violations": m["violations"],
                         "verdicts": [r.verdict for r in reports],
                         "notes": [r.note for r in reports]}}


COMMANDS = {
    "solve-state": (run_solve_state, state_metrics, "l2_error"),
    "solve-ocp": (run_solve_ocp, ocp_metrics, "kkt_residual"),
    "extract-levelset": (run_extract_levelset, levelset_metrics, None),
    "verify-green": (run_verify_green, green_metrics, "residual"),
    "jump-functional": (run_jump_functional, jump_metrics, None),
    "an-limits": (run_an_limits, an_metrics, None),
    "curvature": (run_curvature, curvature_metrics, None),
    "check-soc": (run_check_soc, soc_metrics, None),
}


def observed_orders(h, values, is_error: bool):
    """Orders from consecutive errors, or from consecutive differences of a
    converging quantity (one fewer entry)."""
    h = np.asarray(h, dtype=float)
    v = np.asarray(values, dtype=float)
    orders = [float("nan")] * len(v)
    if is_error:
        for k in range(1, len(v)):
            if v[k] > 0 and v[k - 1] > 0:
                orders[k] = math.log(v[k - 1] / v[k]) / math.log(h[k - 1] / h[k])
    else:
        d = np.abs(np.diff(v))
        for k in range(1, len(d)):
            if d[k] > 0 and d[k - 1] > 0:
                orders[k + 1] = math.log(d[k - 1] / d[k]) / math.log(h[k] / h[k + 1])
    return orders


def convergence_study(cfg, meshes, command, seed):
    _, metrics, primary = COMMANDS[command]
    rows, keys = [], None
    for k, mesh in enumerate(meshes):
        m, _ = metrics(cfg, mesh, seed)
        keys = keys or list(m)
        rows.append([k, mesh.h_max] + [m[x] for x in keys])
    key = primary or keys[0]
    col = [r[2 + keys.index(key)] for r in rows]
    orders = observed_orders([r[1] for r in rows], col, primary is not None)
    for r, o in zip(rows, orders):
        r.append(o)
    table = Table(["level", "h_max"] + keys + [f"order_{key}"], rows)
    return {"study.csv": table,
            "study.json": {"command": command, "metric": key, "orders": orders,
                           "values": col, "h_max": [r[1] for r in rows]}}


# --------------------------------------------------------------------- main

def run(command: str, config, out_dir: str, levels: int = None, seed: int = 0,
        study_target: str = None) -> int:
    try:
        if command != "convergence-study" and command not in COMMANDS:
            logger.error("unknown command %r; known: %s", command,
                         ", ".join(list(COMMANDS) + ["convergence-study"]))
            return EXIT_UNKNOWN
        if command == "convergence-study" and study_target not in COMMANDS:
            logger.error("convergence-study needs a command, one of: %s", ", ".join(COMMANDS))
            return EXIT_UNKNOWN
        cfg = load_config(config) if isinstance(config, str) else config
        target = study_target if command == "convergence-study" else command
        validate(cfg, target)
        n_levels = int(levels if levels is not None else _get(cfg, "mesh.levels", 1))
        if n_levels < 1:
            raise ConfigError("levels must be at least 1", ["mesh.levels"])
        meshes = mesh_levels(build_domain(cfg), float(cfg["mesh"]["target_h"]), n_levels)
        if command == "convergence-study":
            files = convergence_study(cfg, meshes, target, seed)
        else:
            files = COMMANDS[target][0](cfg, meshes[-1], seed)
    except (ConfigError, GreenHypothesisError, NeighborhoodOverlapError, ex.ExprError) as err:
        logger.error("invalid configuration: %s", err)
        return EXIT_INVALID
    except (SolverError, SolverFailure, CoefficientError, NotStationaryError) as err:
        logger.error("solver failure: %s", err)
        return EXIT_SOLVER
    write_outputs(out_dir, files)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kinkopt", description=__doc__.split("\n\n")[0])
    parser.add_argument("command")
    parser.add_argument("target", nargs="?", help="command to study (convergence-study only)")
    parser.add_argument("--config", required=True, help="JSON config path or scenario name")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--levels", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    return run(args.command, args.config, args.out, args.levels, args.seed, args.target)


if __name__ == "__main__":
    sys.exit(main())
