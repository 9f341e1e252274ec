"""Built-in scenario configurations, addressable by name from the CLI."""

from __future__ import annotations

import copy

from . import expr as ex

SINE = "sin(pi*x1)*sin(pi*x2)"
RADIAL = "(1-x1^2)*(1-x2^2)"


def manufactured_control(y_exact: str, b: str, a_of_y: str) -> str:
    """``-div[(b + a(y*)) grad y*]`` as an expression string."""
    ye = ex.parse_expr(y_exact)
    k = ex.add(ex.parse_expr(b), ex.substitute(ex.parse_expr(a_of_y), {"y": ye}))
    div = ex.add(ex.differentiate(ex.mul(k, ex.differentiate(ye, "x1")), "x1"),
                 ex.differentiate(ex.mul(k, ex.differentiate(ye, "x2")), "x2"))
    return ex.to_string(ex.neg(div))


UNIT_SQUARE = {"type": "rectangle", "bounds": [0.0, 0.0, 1.0, 1.0]}
BOX = {"type": "rectangle", "bounds": [-1.0, -1.0, 1.0, 1.0]}

_SCENARIOS = {
    "smooth-manufactured": {
        "domain": UNIT_SQUARE,
        "mesh": {"target_h": 0.125, "levels": 4},
        "problem": {"b": "1", "a0": "y^2", "a1": "y^2", "t_bar": 10.0, "L": "0",
                    "nu": 1.0, "alpha": -1.0, "beta": 1.0},
        "fields": {"u": manufactured_control(SINE, "1", "y^2"), "y_exact": SINE},
        "params": {"tol_kkt": 1e-8},
    },
    "kinked-manufactured": {
        "domain": UNIT_SQUARE,
        "mesh": {"target_h": 0.125, "levels": 4},
        "problem": {"b": "1", "a0": "0.5-y", "a1": "y-0.5", "t_bar": 0.5, "L": "0",
                    "nu": 1.0, "alpha": 0.5, "beta": 1.0},
        "fields": {"u": manufactured_control(SINE, "1", "abs(y-0.5)"), "y_exact": SINE},
        "params": {"tol_kkt": 1e-8},
    },
    "radial-geometry": {
        "domain": BOX,
        "mesh": {"target_h": 0.15, "levels": 4},
        "problem": {"b": "1", "a0": "0.5-y", "a1": "y-0.5", "t_bar": 0.5, "L": "0",
                    "nu": 1.0, "alpha": -1.0, "beta": 1.0},
        "fields": {"y_bar": RADIAL, "w": RADIAL, "phi": "x1^2+x2^2", "v": "x1^2",
                   "y1": RADIAL, "y2": "0.9*" + RADIAL, "perturbation": "x1+0.5*x2"},
        "params": {"t": 0.45, "epsilon": 0.2, "component_index": 0,
                   "s_list": [0.1, 0.03, 0.01], "r_list": [0.1, 0.05, 0.02, 0.01],
                   "deltas": [0.1, 0.01, 0.001]},
    },
    "strip-geometry": {
        "domain": UNIT_SQUARE,
        "mesh": {"target_h": 0.1, "levels": 3},
        "problem": {"b": "1", "a0": "0.5-y", "a1": "y-0.5", "t_bar": 0.5, "L": "0",
                    "nu": 1.0, "alpha": -1.0, "beta": 1.0},
        "fields": {"y_bar": "x1", "w": "x1*(1-x1)*x2*(1-x2)", "phi": "x1^2+x2^2",
                   "v": "x2*(1-x2)", "y1": "x1", "y2": "x1-0.2"},
        "params": {"t": 0.5, "epsilon": 0.1, "component_index": 0,
                   "s_list": [0.1, 0.03, 0.01], "r_list": [0.5, 0.25, 0.1, 0.01]},
    },
    "tracking-ocp": {
        "domain": UNIT_SQUARE,
        "mesh": {"target_h": 0.0625, "levels": 3},
        "problem": {"b": "1", "a0": "0.1-y", "a1": "y-0.1", "t_bar": 0.1,
                    "L": "0.5*(y-1.5*" + SINE + ")^2",
                    "nu": 0.01, "alpha": 0.0, "beta": 5.0},
        "fields": {"u0": "0", "v": "exp(-10*((x1-0.3)^2+(x2-0.4)^2))"},
        "params": {"tol_kkt": 1e-8, "max_iter": 500, "s_list": [0.1, 0.01, 0.001],
                   "r_list": [0.02, 0.01, 0.005, 0.0025], "n_directions": 20, "mode": "necessary",
                   "epsilon": 0.05, "component_index": 0},
    },
    "cusp-green": {
        "domain": BOX,
        "mesh": {"target_h": 0.2, "levels": 4},
        "problem": {"b": "1", "a0": "0.5-y", "a1": "y-0.5", "t_bar": 0.5, "L": "0",
                    "nu": 1.0, "alpha": -1.0, "beta": 1.0},
        "fields": {"y1": "x2+0.5", "y2": "x2+0.5-0.5*x1^2", "v": "1-x1^2", "phi": "x1^2+x2^2",
                   "y_bar": "x2+0.5"},
        "params": {"t": 0.5},
    },
}

SCENARIO_NAMES = tuple(_SCENARIOS)


def get_scenario(name: str) -> dict:
    """A deep copy of a registered scenario config (with its ``name``)."""
    if name not in _SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(SCENARIO_NAMES)}")
    cfg = copy.deepcopy(_SCENARIOS[name])
    cfg["name"] = name
    return cfg
