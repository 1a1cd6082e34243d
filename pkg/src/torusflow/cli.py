"""Command line entry point: run, verify-cone, check-structure, harnack, report.

Exit codes: 0 all checks passed, 2 a check failed, 3 configuration error,
4 numerical breakdown.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    FlowBreakdownError,
    InadmissiblePointError,
    InvalidStructureError,
    NumericalError,
    PositivityLossError,
    PreconditionError,
)

log = logging.getLogger("torusflow")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BREAKDOWN = 0, 2, 3, 4
MANIFEST = "manifest.json"


# ---------------------------------------------------------------------------
# output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    cols = {h: np.array([float(r[i]) for r in rows[1:]]) for i, h in enumerate(header)}
    return header, cols


class RunDir:
    """Output directory that only appears, complete, when ``commit`` is called."""

    def __init__(self, target: Path):
        self.target = Path(target).resolve()
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.target.name}.", dir=self.target.parent))
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.tmp / name

    def commit(self, manifest: dict) -> None:
        entries = []
        for name in sorted(set(self.files)):
            data = (self.tmp / name).read_bytes()
            entries.append({"name": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        manifest = dict(manifest, output_dir=str(self.target), files=entries)
        write_json(self.tmp / MANIFEST, manifest)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(self.tmp, 0o777 & ~umask)
        if self.target.exists():
            shutil.rmtree(self.target)
        os.replace(self.tmp, self.target)

    def discard(self) -> None:
        shutil.rmtree(self.tmp, ignore_errors=True)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _checks_dict(checks: dict) -> dict:
    return {k: {"passed": bool(c.passed), "detail": c.detail} for k, c in checks.items()}


def _failed(checks: dict) -> list[str]:
    return sorted(k for k, c in checks.items() if not c.passed)


# ---------------------------------------------------------------------------
# emitters


def _emit_flow(out: RunDir, report, formats) -> None:
    from .convergence import CSV_COLUMNS
    from .svg import line_chart
    from .torus import ScalarField, write_snapshot

    res = report.result
    rows = [r.row() for r in res.records]
    t = [r.t for r in res.records]
    if "csv" in formats:
        write_csv(out.path("records.csv"), CSV_COLUMNS, rows)
        cfg_grid = res.final_state.phi.grid
        write_snapshot(out.path("final_phibar.csv"), ScalarField(cfg_grid, res.final_state.phibar.values))
    if "json" in formats:
        write_json(out.path("summary.json"), report.summary)
        details = {
            "checks": _checks_dict(report.checks),
            "recursion_windows": report.windows,
            "decay_fit": None
            if report.decay is None
            else {
                "C": report.decay.C,
                "beta": report.decay.beta,
                "r_squared": report.decay.r_squared,
                "window": list(report.decay.window),
                "envelope_ok": report.decay.envelope_ok,
                "C_envelope": report.decay.C_envelope,
            },
        }
        write_json(out.path("details.json"), details)
    if "svg" in formats:
        line_chart(out.path("omega.svg"), [("osc phi_t", t, [r.osc_phi_t for r in res.records])], "oscillation of phi_t", "t", "osc phi_t", log_y=True)
        line_chart(out.path("residual.svg"), [("residual", t, [r.residual for r in res.records])], "sup |phi_t - a|", "t", "residual", log_y=True)
    if report.harnack is not None:
        _emit_harnack(out, report.harnack, formats)


def _emit_harnack(out: RunDir, h, formats) -> None:
    from .svg import line_chart

    env = h.li_yau.envelope(h.series_t)
    if "csv" in formats:
        write_csv(out.path("li_yau.csv"), ("t", "sup_F", "envelope"), zip(h.series_t, h.series_sup, env))
    if "svg" in formats:
        line_chart(
            out.path("li_yau.svg"),
            [("sup F", h.series_t, h.series_sup), ("C1 + C2/t", h.series_t, env)],
            "Li-Yau quantity and fitted envelope",
            "t",
            "sup_x (|d log u|^2 - alpha d_t log u)",
        )
    if "json" in formats:
        r = h.report
        write_json(
            out.path("harnack.json"),
            {
                "t1": r.t1,
                "t2": r.t2,
                "sup_u_t1": r.sup_u_t1,
                "inf_u_t2": r.inf_u_t2,
                "ratio": r.ratio,
                "bound": r.bound,
                "constants": {"C1": r.fitted_constants[0], "C2": r.fitted_constants[1], "C3": r.fitted_constants[2]},
                "li_yau_fit": {"C1": h.li_yau.C1, "C2": h.li_yau.C2},
                "ellipticity": list(h.coeffs.ellipticity),
                "checks": _checks_dict(h.checks),
            },
        )


def _emit_cone(out: RunDir, outcome, formats) -> None:
    if "json" in formats:
        s = outcome.structure
        write_json(
            out.path("cone_report.json"),
            {
                "rank": outcome.rank,
                "rank_condition": {"ok": outcome.s02[0], "required": outcome.s02[1], "rank": outcome.s02[2]},
                "gradient_ratio": {"c0": outcome.ratio.c0, "rank": outcome.ratio.rank, "used": outcome.ratio.used, "skipped": outcome.ratio.skipped},
                "structure": {k: getattr(s, k) for k in s.__dataclass_fields__},
                "checks": _checks_dict(outcome.checks),
            },
        )


# ---------------------------------------------------------------------------
# commands


def _load(args) -> tuple:
    from .config import load_json
    from .presets import preset

    if getattr(args, "preset", None):
        raw = preset(args.preset)
        return raw, None, args.preset
    if not getattr(args, "config", None):
        raise ConfigError("give a config file or --preset")
    path = Path(args.config)
    return load_json(path), path, None


def _parse(raw, path):
    from .config import parse_config_dict

    return parse_config_dict(raw, base_dir=None if path is None else path.parent, source=None if path is None else str(path))


def _execute(rc, out: RunDir, with_harnack: bool = True) -> dict:
    from .pipelines import cone_pipeline, flow_pipeline, harnack_pipeline

    formats = rc.output["formats"]
    if rc.pipeline == "flow":
        report = flow_pipeline(rc, with_harnack=with_harnack)
        _emit_flow(out, report, formats)
        return report.checks
    if rc.pipeline == "harnack":
        h = harnack_pipeline(rc)
        _emit_harnack(out, h, formats)
        return h.checks
    c = rc.cone
    bounds = None if c["psi_bounds"] is None else tuple(c["psi_bounds"])
    outcome = cone_pipeline(rc.operator, int(c["samples"]), rc.seed, float(c["sigma"]), bounds)
    _emit_cone(out, outcome, formats)
    return outcome.checks


def _finish(out: RunDir, checks: dict, meta: dict) -> int:
    failed = _failed(checks)
    meta.update(finished=_now(), checks=_checks_dict(checks), failed_checks=failed, exit_code=EXIT_FAIL if failed else EXIT_OK)
    out.commit(meta)
    for name, c in checks.items():
        print(f"{'PASS' if c.passed else 'FAIL'}  {name}  {c.detail}")
    print(f"output: {out.target}")
    return EXIT_FAIL if failed else EXIT_OK


def _run_with_dir(args, subcommand, raw, path, preset_name):
    try:
        rc = _parse(raw, path)
    except InadmissiblePointError as exc:
        raise ConfigError(f"initial data: {exc}") from None
    name = preset_name or (path.stem if path else "run")
    target = Path(args.out) if getattr(args, "out", None) else Path(rc.output["dir"] or Path("runs") / name)
    meta = {
        "subcommand": subcommand,
        "config_path": None if path is None else str(path),
        "preset_name": preset_name,
        "seed": rc.seed,
        "tool_version": __version__,
        "started": _now(),
    }
    out = RunDir(target)
    try:
        write_json(out.path("config.json"), raw)
        checks = _execute(rc, out, with_harnack=not getattr(args, "no_harnack", False))
    except BaseException:
        out.discard()
        raise
    return _finish(out, checks, meta)


def cmd_run(args) -> int:
    raw, path, preset_name = _load(args)
    return _run_with_dir(args, "run", raw, path, preset_name)


def cmd_harnack(args) -> int:
    raw, path, preset_name = _load(args)
    raw = copy.deepcopy(raw)
    raw["pipeline"] = "harnack"
    h = raw.setdefault("harnack", {})
    for key in ("t1", "t2", "alpha"):
        v = getattr(args, key)
        if v is not None:
            h[key] = v
    return _run_with_dir(args, "harnack", raw, path, preset_name)


def _operator_from_args(args):
    from .cone import OperatorSpec, index_sets

    try:
        ls = index_sets(args.n, args.K)
        weights = None if args.weights is None else tuple(float(w) for w in args.weights.split(","))
        return OperatorSpec(ls, args.family, k=args.k, weights=weights, cone_order=args.cone_order)
    except InvalidStructureError as exc:
        raise ConfigError(str(exc)) from None


def cmd_verify_cone(args) -> int:
    from .pipelines import cone_pipeline

    op = _operator_from_args(args)
    outcome = cone_pipeline(op, args.samples, args.seed, args.sigma)
    s = outcome.structure
    print(json.dumps(_jsonable({k: getattr(s, k) for k in s.__dataclass_fields__}), indent=2, sort_keys=True))
    print(f"rank = {outcome.rank}, gradient-ratio c0 = {outcome.ratio.c0:.6g} ({outcome.ratio.used} samples)", file=sys.stderr)
    for name, c in outcome.checks.items():
        print(f"{'PASS' if c.passed else 'FAIL'}  {name}  {c.detail}", file=sys.stderr)
    ok = all(c.passed for c in outcome.checks.values())
    if args.out:
        meta = {"subcommand": "verify-cone", "config_path": None, "preset_name": None, "seed": args.seed, "tool_version": __version__, "started": _now()}
        out = RunDir(Path(args.out))
        _emit_cone(out, outcome, ("json",))
        failed = _failed(outcome.checks)
        meta.update(finished=_now(), checks=_checks_dict(outcome.checks), failed_checks=failed, exit_code=EXIT_FAIL if failed else EXIT_OK)
        out.commit(meta)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_check_structure(args) -> int:
    from .cone import check_structure, sup_boundary_value

    op = _operator_from_args(args)
    if args.psi_lo is None or args.psi_hi is None:
        lo = sup_boundary_value(op)
        base = lo if math.isfinite(lo) else 0.0
        bounds = (base + 0.5, base + 2.0)
    else:
        bounds = (args.psi_lo, args.psi_hi)
    rep = check_structure(op, bounds, args.samples, args.seed)
    payload = {k: getattr(rep, k) for k in rep.__dataclass_fields__}
    payload["all_pass"] = rep.all_pass()
    print(json.dumps(_jsonable(payload), indent=2, sort_keys=True))
    return EXIT_OK if rep.all_pass() else EXIT_FAIL


def cmd_report(args) -> int:
    from .svg import line_chart

    run = Path(args.run_dir)
    mpath = run / MANIFEST
    if not mpath.exists():
        raise ConfigError(f"{run}: no {MANIFEST}; the run did not complete")
    manifest = json.loads(mpath.read_text())
    print(f"run: {run}  subcommand={manifest.get('subcommand')}  preset={manifest.get('preset_name')}  seed={manifest.get('seed')}")
    for name, c in sorted(manifest.get("checks", {}).items()):
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}  {c['detail']}")
    summary_path = run / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        for key in sorted(summary):
            print(f"  {key} = {summary[key]}")
    records = run / "records.csv"
    if records.exists() and args.plots:
        Path(args.plots).mkdir(parents=True, exist_ok=True)
        _, cols = read_csv(records)
        line_chart(Path(args.plots) / "omega.svg", [("osc phi_t", cols["t"], cols["osc_phi_t"])], "oscillation of phi_t", "t", "osc phi_t", log_y=True)
        print(f"plots written to {args.plots}")
    return EXIT_FAIL if manifest.get("failed_checks") else EXIT_OK


# ---------------------------------------------------------------------------


def _add_operator_args(p):
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--family", default="sigma_k_root", choices=("sigma_k_root", "linear_weights"))
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--weights", default=None, help="comma-separated weights for the linear family")
    p.add_argument("--cone-order", type=int, default=None)
    p.add_argument("--samples", type=int, default=100000)
    p.add_argument("--seed", type=int, default=12345)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="torusflow", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a config file or a named preset")
    p.add_argument("config", nargs="?")
    p.add_argument("--preset")
    p.add_argument("--out")
    p.add_argument("--no-harnack", action="store_true", help="skip the Harnack stage of a flow run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify-cone", help="cone rank and gradient-ratio constant by sampling")
    _add_operator_args(p)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_cone)

    p = sub.add_parser("check-structure", help="sampled structure conditions of an operator")
    _add_operator_args(p)
    p.add_argument("--psi-lo", type=float)
    p.add_argument("--psi-hi", type=float)
    p.set_defaults(func=cmd_check_structure)

    p = sub.add_parser("harnack", help="Harnack run with frozen linearised coefficients")
    p.add_argument("--config")
    p.add_argument("--preset")
    p.add_argument("--t1", type=float)
    p.add_argument("--t2", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_harnack)

    p = sub.add_parser("report", help="summarise a finished run directory")
    p.add_argument("run_dir")
    p.add_argument("--plots", help="directory for regenerated plots")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FlowBreakdownError, NumericalError, PositivityLossError, InadmissiblePointError) as exc:
        print(f"numerical breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    except PreconditionError as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
