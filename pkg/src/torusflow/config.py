"""JSON run configuration: schema checks, defaults and construction of run objects.

Top-level sections: pipeline, seed, geometry, operator, data, initial, flow,
harnack, cone, output. Unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cone import LambdaStructure, OperatorSpec, index_sets, rank_condition_s02
from .errors import ConfigError, InvalidStructureError
from .flow import DataSpec, FlowConfig
from .torus import HermitianField, ScalarField, TorusGrid, read_snapshot

log = logging.getLogger(__name__)

PIPELINES = ("flow", "harnack", "cone")

FLOW_DEFAULTS = {
    "integrator": "rk4",
    "c_cfl": 0.2,
    "t_max": 1.0,
    "tol_osc": 1e-8,
    "sample_interval": 0.05,
    "method": "spectral",
    "a_target": None,
    "decay_window": None,
    "residual_tol": None,
    "symbol_oracle": False,
}
HARNACK_DEFAULTS = {
    "alpha": 1.5,
    "t1": 0.5,
    "t2": 1.0,
    "snapshot_t": 0.1,
    "u0": None,
    "t_end": 1.0,
    "sample_interval": 0.05,
    "c_cfl": 0.2,
    "li_yau_t_min": 0.05,
}
CONE_DEFAULTS = {"samples": 100000, "sigma": 1.0, "psi_bounds": None}
OUTPUT_DEFAULTS = {"dir": None, "formats": ["csv", "json", "svg"]}


def _check_keys(section: dict, allowed, path: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected an object, got {type(section).__name__}")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")


def _get(section: dict, key: str, path: str, kind=None, required=False, default=None):
    if key not in section:
        if required:
            raise ConfigError(f"{path}.{key}: required")
        return default
    value = section[key]
    if kind is not None and value is not None:
        ok = isinstance(value, kind) and not (kind in (int, (int, float)) and isinstance(value, bool))
        if not ok:
            raise ConfigError(f"{path}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


def _with_defaults(section, defaults: dict, path: str) -> dict:
    section = {} if section is None else section
    _check_keys(section, defaults, path)
    out = copy.deepcopy(defaults)
    out.update(section)
    return out


NUM = (int, float)


# ---------------------------------------------------------------------------
# scalar field specifications


def _axis_index(name: str, grid: TorusGrid, path: str) -> int:
    names = grid.axis_names
    if name not in names:
        raise ConfigError(f"{path}: unknown axis {name!r}, expected one of {names}")
    return names.index(name)


def build_field(spec, grid: TorusGrid, path: str, base_dir: Path | None = None) -> ScalarField:
    """Scalar field from a spec: zero, constant, modes, bump or file."""
    if spec is None:
        spec = {"kind": "zero"}
    if not isinstance(spec, dict):
        raise ConfigError(f"{path}: expected an object")
    kind = _get(spec, "kind", path, str, required=True)
    coords = np.broadcast_arrays(*grid.coordinates())
    if kind == "zero":
        _check_keys(spec, {"kind"}, path)
        return ScalarField(grid, np.zeros(grid.shape))
    if kind == "constant":
        _check_keys(spec, {"kind", "value"}, path)
        return ScalarField(grid, np.full(grid.shape, float(_get(spec, "value", path, NUM, required=True))))
    if kind == "modes":
        _check_keys(spec, {"kind", "terms", "offset"}, path)
        total = np.full(grid.shape, float(_get(spec, "offset", path, NUM, default=0.0)))
        terms = _get(spec, "terms", path, list, required=True)
        for i, term in enumerate(terms):
            tp = f"{path}.terms[{i}]"
            _check_keys(term, {"amplitude", "func", "axis", "k"}, tp)
            amp = float(_get(term, "amplitude", tp, NUM, required=True))
            func = _get(term, "func", tp, str, default="cos")
            if func not in ("sin", "cos"):
                raise ConfigError(f"{tp}.func: expected sin or cos")
            a = _axis_index(_get(term, "axis", tp, str, required=True), grid, f"{tp}.axis")
            k = _get(term, "k", tp, int, default=1)
            arg = 2.0 * math.pi * k * coords[a] / grid.periods[a]
            total = total + amp * (np.sin(arg) if func == "sin" else np.cos(arg))
        return ScalarField(grid, total)
    if kind == "bump":
        _check_keys(spec, {"kind", "center", "width", "amplitude", "offset"}, path)
        width = float(_get(spec, "width", path, NUM, default=0.6))
        amp = float(_get(spec, "amplitude", path, NUM, default=1.0))
        offset = float(_get(spec, "offset", path, NUM, default=0.0))
        center = _get(spec, "center", path, dict, default={})
        for name in center:
            _axis_index(name, grid, f"{path}.center")
        expo = np.zeros(grid.shape)
        for a in grid.active_axes:
            c = float(center.get(grid.axis_names[a], 0.5))
            expo = expo + np.sin(math.pi * (coords[a] - c) / grid.periods[a]) ** 2
        return ScalarField(grid, offset + amp * np.exp(-expo / width**2))
    if kind == "file":
        _check_keys(spec, {"kind", "path"}, path)
        p = Path(_get(spec, "path", path, str, required=True))
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        try:
            f = read_snapshot(p)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{path}.path: {exc}") from None
        if f.grid != grid:
            raise ConfigError(f"{path}.path: snapshot grid does not match geometry")
        return f
    raise ConfigError(f"{path}.kind: unknown field kind {kind!r}")


# ---------------------------------------------------------------------------
# sections


def parse_geometry(sec, path="geometry") -> TorusGrid:
    _check_keys(sec, {"n", "K", "resolutions", "periods"}, path)
    n = _get(sec, "n", path, int, required=True)
    res = _get(sec, "resolutions", path, list, required=True)
    if len(res) != 2 * n:
        raise ConfigError(f"{path}.resolutions: need 2n = {2 * n} entries, got {len(res)}")
    periods = _get(sec, "periods", path, list, default=[1.0] * (2 * n))
    if len(periods) != 2 * n:
        raise ConfigError(f"{path}.periods: need 2n = {2 * n} entries, got {len(periods)}")
    try:
        return TorusGrid(n, tuple(int(r) for r in res), tuple(float(p) for p in periods))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_operator(sec, ls: LambdaStructure, path="operator") -> OperatorSpec:
    _check_keys(sec, {"family", "k", "weights", "cone_order"}, path)
    family = _get(sec, "family", path, str, default="sigma_k_root")
    weights = _get(sec, "weights", path, list)
    k = _get(sec, "k", path, int)
    if family == "sigma_k_root" and k is None:
        k = 1
    cone_order = _get(sec, "cone_order", path, int)
    if cone_order is None and (family == "linear_weights" or k == 1):
        # a linear operator needs no cone constraint
        cone_order = 0
    try:
        op = OperatorSpec(
            ls,
            family,
            k=k,
            weights=None if weights is None else tuple(float(w) for w in weights),
            cone_order=cone_order,
        )
    except InvalidStructureError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if op.family == "sigma_k_root":
        ok, required, actual = rank_condition_s02(ls, op.k)
        if not ok:
            log.warning(
                "WARNING: rank condition (S0.2) fails: rank %d < N(n-K)/n + 1 = %.3f; the run is outside the "
                "assumptions of the convergence theory",
                actual,
                required,
            )
    return op


def parse_data(sec, grid: TorusGrid, path="data", base_dir=None) -> DataSpec:
    sec = {} if sec is None else sec
    _check_keys(sec, {"X", "psi"}, path)
    X = _get(sec, "X", path, dict, default={"kind": "zero"})
    xp = f"{path}.X"
    xkind = _get(X, "kind", xp, str, required=True)
    X_c, X_field = 0.0, None
    if xkind == "zero":
        _check_keys(X, {"kind"}, xp)
    elif xkind in ("scaled_identity", "gradient_coupled"):
        _check_keys(X, {"kind", "c"}, xp)
        X_c = float(_get(X, "c", xp, NUM, required=True))
    elif xkind == "prescribed_field":
        _check_keys(X, {"kind", "diagonal"}, xp)
        diag = _get(X, "diagonal", xp, list, required=True)
        if len(diag) != grid.n:
            raise ConfigError(f"{xp}.diagonal: need {grid.n} field specs")
        vals = np.zeros(grid.shape + (grid.n, grid.n), dtype=complex)
        for i, d in enumerate(diag):
            vals[..., i, i] = build_field(d, grid, f"{xp}.diagonal[{i}]", base_dir).values
        X_field = HermitianField(grid, vals)
    else:
        raise ConfigError(f"{xp}.kind: unknown X kind {xkind!r}")
    psi = _get(sec, "psi", path, dict, default={"kind": "constant", "value": 0.0})
    pp = f"{path}.psi"
    pkind = _get(psi, "kind", pp, str, required=True)
    slope = 0.0
    value, pfield = 0.0, None
    if pkind == "constant":
        _check_keys(psi, {"kind", "value", "slope"}, pp)
        value = float(_get(psi, "value", pp, NUM, default=0.0))
    elif pkind == "prescribed_field":
        _check_keys(psi, {"kind", "field", "slope"}, pp)
        pfield = build_field(_get(psi, "field", pp, dict, required=True), grid, f"{pp}.field", base_dir)
    elif pkind == "manufactured":
        _check_keys(psi, {"kind", "target", "slope"}, pp)
        pfield = build_field(_get(psi, "target", pp, dict, required=True), grid, f"{pp}.target", base_dir)
    else:
        raise ConfigError(f"{pp}.kind: unknown psi kind {pkind!r}")
    slope = float(_get(psi, "slope", pp, NUM, default=0.0))
    return DataSpec(xkind, X_c, X_field, pkind, value, pfield, slope)


@dataclass(eq=False)
class RunConfig:
    pipeline: str
    seed: int
    grid: TorusGrid | None
    structure: LambdaStructure | None
    operator: OperatorSpec | None
    flow: FlowConfig | None
    flow_options: dict
    harnack: dict | None
    cone: dict
    output: dict
    raw: dict = field(repr=False)
    source: str | None = None


def parse_config_dict(raw: dict, base_dir: Path | None = None, source: str | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object at top level")
    _check_keys(raw, {"pipeline", "seed", "geometry", "operator", "data", "initial", "flow", "harnack", "cone", "output"}, "config")
    pipeline = _get(raw, "pipeline", "config", str, default="flow")
    if pipeline not in PIPELINES:
        raise ConfigError(f"config.pipeline: expected one of {PIPELINES}, got {pipeline!r}")
    seed = _get(raw, "seed", "config", int, default=0)
    if "geometry" not in raw:
        raise ConfigError("config.geometry: required")
    geo = raw["geometry"]
    grid = parse_geometry(geo)
    n = grid.n
    K = _get(geo, "K", "geometry", int, required=True)
    try:
        ls = index_sets(n, K)
    except InvalidStructureError as exc:
        raise ConfigError(f"geometry: {exc}") from None
    op = parse_operator(raw.get("operator", {}), ls)
    output = _with_defaults(raw.get("output"), OUTPUT_DEFAULTS, "output")
    for fmt in output["formats"]:
        if fmt not in ("csv", "json", "svg"):
            raise ConfigError(f"output.formats: unknown format {fmt!r}")
    cone = _with_defaults(raw.get("cone"), CONE_DEFAULTS, "cone")
    harnack = None
    if raw.get("harnack") is not None:
        harnack = _with_defaults(raw["harnack"], HARNACK_DEFAULTS, "harnack")
        if not 1.0 < harnack["alpha"] < 2.0:
            raise ConfigError(f"harnack.alpha: must lie in (1, 2), got {harnack['alpha']}")
        if not 0 < harnack["t1"] < harnack["t2"] <= harnack["t_end"]:
            raise ConfigError("harnack: need 0 < t1 < t2 <= t_end")
    flow_opts = _with_defaults(raw.get("flow"), FLOW_DEFAULTS, "flow")
    flow_cfg = None
    if pipeline in ("flow", "harnack"):
        data = parse_data(raw.get("data"), grid, base_dir=base_dir)
        phi0 = build_field(raw.get("initial"), grid, "initial", base_dir)
        kw = {k: flow_opts[k] for k in ("integrator", "c_cfl", "t_max", "tol_osc", "sample_interval", "method", "a_target")}
        try:
            flow_cfg = FlowConfig(
                ls, op, data, grid, phi0, seed=seed, alpha_harnack=(harnack or HARNACK_DEFAULTS)["alpha"], **kw
            )
        except ConfigError as exc:
            raise ConfigError(f"flow: {exc}") from None
    return RunConfig(pipeline, seed, grid, ls, op, flow_cfg, flow_opts, harnack, cone, output, raw, source)


def load_json(path) -> dict:
    """Raw JSON object from a file; syntax errors carry line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def parse_config(path) -> RunConfig:
    """Read and validate a JSON config file."""
    path = Path(path)
    return parse_config_dict(load_json(path), base_dir=path.parent, source=str(path))
