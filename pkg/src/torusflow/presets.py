"""Named scenarios with pinned seeds and grids, stored as plain config dicts."""

from __future__ import annotations

import copy

from .errors import ConfigError

_MANUFACTURED_TARGET = {
    "kind": "modes",
    "terms": [
        {"amplitude": 0.02, "func": "cos", "axis": "x1"},
        {"amplitude": 0.02, "func": "cos", "axis": "y1"},
        {"amplitude": 0.02, "func": "cos", "axis": "x2"},
        {"amplitude": 0.02, "func": "cos", "axis": "y2"},
    ],
}

_SIGMA2_GEOMETRY = {"n": 3, "K": 2, "resolutions": [16, 16, 16, 16, 1, 1]}

_MANUFACTURED_FLOW = {
    "integrator": "euler",
    "c_cfl": 1.0,
    "t_max": 2.0,
    "tol_osc": 1e-8,
    "sample_interval": 0.025,
    "a_target": 0.0,
    "residual_tol": 1e-6,
}

_HARNACK = {
    "alpha": 1.5,
    "t1": 0.5,
    "t2": 1.0,
    "snapshot_t": 0.1,
    "u0": {"kind": "bump", "offset": 1.0, "amplitude": 0.9, "width": 0.6},
    "t_end": 1.0,
    "sample_interval": 0.05,
    "c_cfl": 1.0,
    "li_yau_t_min": 0.05,
}

PRESETS = {
    "heat_baseline": {
        "pipeline": "flow",
        "seed": 0,
        "geometry": {"n": 2, "K": 2, "resolutions": [32, 32, 1, 1]},
        "operator": {"family": "sigma_k_root", "k": 1, "cone_order": 0},
        "data": {"X": {"kind": "zero"}, "psi": {"kind": "constant", "value": 0.0}},
        "initial": {"kind": "modes", "terms": [{"amplitude": 0.1, "func": "sin", "axis": "x1"}]},
        "flow": {
            "integrator": "euler",
            "c_cfl": 1.0,
            "t_max": 3.0,
            "tol_osc": 1e-6,
            "sample_interval": 0.025,
            "symbol_oracle": True,
        },
    },
    "gauduchon_sigma2": {
        "pipeline": "flow",
        "seed": 0,
        "geometry": {"n": 3, "K": 2, "resolutions": [8, 8, 8, 8, 1, 1]},
        "operator": {"family": "sigma_k_root", "k": 2},
        "data": {"X": {"kind": "gradient_coupled", "c": 1.0}, "psi": {"kind": "constant", "value": 1.0}},
        "initial": {
            "kind": "modes",
            "terms": [
                {"amplitude": 0.02, "func": "cos", "axis": "x1"},
                {"amplitude": 0.01, "func": "sin", "axis": "y2"},
            ],
        },
        "flow": {"integrator": "rk4", "c_cfl": 1.0, "t_max": 3.0, "tol_osc": 1e-8, "sample_interval": 0.0125},
    },
    "manufactured_sigma2": {
        "pipeline": "flow",
        "seed": 0,
        "geometry": _SIGMA2_GEOMETRY,
        "operator": {"family": "sigma_k_root", "k": 2},
        "data": {"X": {"kind": "scaled_identity", "c": 1.0}, "psi": {"kind": "manufactured", "target": _MANUFACTURED_TARGET}},
        "initial": {"kind": "zero"},
        "flow": _MANUFACTURED_FLOW,
        "harnack": _HARNACK,
    },
    "harnack_heat_bump": {
        "pipeline": "harnack",
        "seed": 0,
        "geometry": _SIGMA2_GEOMETRY,
        "operator": {"family": "sigma_k_root", "k": 2},
        "data": {"X": {"kind": "scaled_identity", "c": 1.0}, "psi": {"kind": "manufactured", "target": _MANUFACTURED_TARGET}},
        "initial": {"kind": "zero"},
        "flow": _MANUFACTURED_FLOW,
        "harnack": _HARNACK,
    },
    "cone_sigma2_report": {
        "pipeline": "cone",
        "seed": 12345,
        "geometry": {"n": 3, "K": 2, "resolutions": [1, 1, 1, 1, 1, 1]},
        "operator": {"family": "sigma_k_root", "k": 2},
        "cone": {"samples": 100000, "sigma": 1.0},
    },
}


def preset_names() -> tuple[str, ...]:
    return tuple(PRESETS)


def preset(name: str) -> dict:
    """Deep copy of a preset config dict."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    return copy.deepcopy(PRESETS[name])
