"""End-to-end pipelines with named invariant checks (shared by the CLI and tests)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cone import (
    check_structure,
    lemma3_empirical_c0,
    operator_rank,
    rank_condition_s02,
    sup_boundary_value,
)
from .config import RunConfig, build_field
from .convergence import (
    DecayFit,
    build_vn_wn,
    decay_fit,
    elliptic_residual,
    monotone_h_check,
    record_series,
    recursion_check,
)
from .errors import PreconditionError
from .flow import FlowConfig, FlowResult, FlowState, cfl_step, evaluate, initial_state, linearized_coefficients, run_flow
from .linear import (
    CoefficientFields,
    LinearRunConfig,
    LinearTrajectory,
    fit_li_yau_constants,
    harnack_constants,
    harnack_verify,
    li_yau_series,
    solve_linear,
)
from .torus import ScalarField

log = logging.getLogger(__name__)

MAX_PRINCIPLE_SLACK = 1e-10
VN_WN_TOL = 1e-3


@dataclass
class Check:
    passed: bool
    detail: str = ""


def _sample_grid(t_end: float, interval: float, extra=()) -> tuple[float, ...]:
    m = int(round(t_end / interval))
    times = {round(i * interval, 12) for i in range(m + 1)}
    times.update(round(float(t), 12) for t in extra)
    return tuple(sorted(t for t in times if t <= t_end + 1e-12))


# ---------------------------------------------------------------------------
# symbol oracle for linear single-mode runs


def symbol_rate(cfg: FlowConfig) -> float:
    """Decay rate of phi0 under one step of the solver, from its own discrete symbol.

    phi0 must be an eigenfunction of the (linear) right-hand side; the
    symbol s is read off as <rhs(phi0), phi0>/<phi0, phi0> and the rate is
    -log|R(dt s)|/dt with R the integrator's stability polynomial.
    """
    v = np.asarray(cfg.phi0.values, dtype=float)
    v = v - v.mean()
    ev = evaluate(v, cfg)
    rhs = ev.rhs - ev.rhs.mean()
    s = float(np.sum(rhs * v) / np.sum(v * v))
    if np.max(np.abs(rhs - s * v)) > 1e-8 * max(1.0, np.max(np.abs(rhs))):
        raise PreconditionError("initial data is not a single eigenmode of the right-hand side")
    dt = cfg.c_cfl * cfg.grid.h_min**2 / (math.pi**2 * ev.mu_hat)
    z = dt * s
    R = 1.0 + z if cfg.integrator == "euler" else 1.0 + z + z * z / 2.0 + z**3 / 6.0 + z**4 / 24.0
    return -math.log(abs(R)) / dt


# ---------------------------------------------------------------------------
# Harnack pipeline


@dataclass
class HarnackOutcome:
    coeffs: CoefficientFields
    trajectory: LinearTrajectory
    report: object
    li_yau: object
    series_t: np.ndarray
    series_sup: np.ndarray
    checks: dict


def frozen_coefficients(cfg: FlowConfig, snapshot_t: float, result: FlowResult | None = None) -> CoefficientFields:
    """Linearised coefficients at the flow state at ``snapshot_t``.

    Reuses a stored snapshot of ``result`` when available, otherwise runs
    the flow up to ``snapshot_t``.
    """
    if result is not None:
        try:
            snap = result.snapshot_at(snapshot_t)
            ev = evaluate(snap.phi, cfg)
            state = FlowState(snap.t, ScalarField(cfg.grid, snap.phi), ScalarField(cfg.grid, ev.rhs), 0.0, ev.margin, ev.mu_hat)
            return linearized_coefficients(state, cfg)
        except KeyError:
            pass
    if snapshot_t <= 0:
        return linearized_coefficients(initial_state(cfg), cfg)
    short = replace(cfg, t_max=snapshot_t, tol_osc=0.0, keep_snapshots=False)
    res = run_flow(short)
    return linearized_coefficients(res.final_state, cfg)


def harnack_pipeline(rc: RunConfig, flow_result: FlowResult | None = None, coeffs: CoefficientFields | None = None) -> HarnackOutcome:
    h = rc.harnack
    if h is None:
        raise PreconditionError("config has no harnack section")
    cfg = rc.flow
    if coeffs is None:
        coeffs = frozen_coefficients(cfg, h["snapshot_t"], flow_result)
    u0_spec = h["u0"] or {"kind": "bump", "offset": 1.0, "amplitude": 0.9, "width": 0.6}
    u0 = build_field(u0_spec, cfg.grid, "harnack.u0")
    times = _sample_grid(h["t_end"], h["sample_interval"], extra=(h["t1"], h["t2"]))
    lin = LinearRunConfig(coeffs, u0, h["t_end"], times, alpha=h["alpha"], c_cfl=h["c_cfl"], method=cfg.method)
    traj = solve_linear(lin)
    alpha = h["alpha"]
    fit = fit_li_yau_constants(traj, alpha, t_min=h["li_yau_t_min"], t_max=h["t_end"])
    constants, _ = harnack_constants(traj, h["t2"], alpha, cfg.grid.active_diameter, t_min=h["li_yau_t_min"])
    report = harnack_verify(traj, h["t1"], h["t2"], constants=constants, alpha=alpha)
    ts, sups = li_yau_series(traj, alpha, t_min=h["li_yau_t_min"])
    env = fit.envelope(ts)
    checks = {
        "positivity": Check(all(u.min() > 0 for u in traj.u), f"min u = {min(u.min() for u in traj.u):.6g}"),
        "li_yau_envelope": Check(bool(np.all(sups <= env + 1e-12 * np.maximum(1, np.abs(env)))), f"C1={fit.C1:.6g}, C2={fit.C2:.6g}"),
        "harnack_inequality": Check(report.satisfied and math.isfinite(report.ratio), f"ratio={report.ratio:.6g} bound={report.bound:.6g}"),
    }
    chi0_max = float(coeffs.chi0.values.max())
    if chi0_max <= 0:
        sup_u = np.array([u.max() for u in traj.u])
        checks["maximum_principle"] = Check(bool(np.all(np.diff(sup_u) <= MAX_PRINCIPLE_SLACK)), f"max increase {np.max(np.diff(sup_u)):.3e}")
    return HarnackOutcome(coeffs, traj, report, fit, ts, sups, checks)


# ---------------------------------------------------------------------------
# flow pipeline


@dataclass
class FlowReport:
    result: FlowResult
    checks: dict
    summary: dict
    decay: DecayFit | None = None
    harnack: HarnackOutcome | None = None
    windows: list = field(default_factory=list)


def maximum_principle_check(result: FlowResult) -> Check:
    """sup phi_t non-increasing and inf phi_t non-decreasing, slack 1e-10 per step."""
    sup = record_series(result.records, "sup_phi_t")
    inf = record_series(result.records, "inf_phi_t")
    steps = np.diff(np.array(result.record_steps, dtype=float))
    slack = MAX_PRINCIPLE_SLACK * np.maximum(steps, 1)
    up = np.diff(sup) - slack
    down = -np.diff(inf) - slack
    worst = float(max(up.max(initial=0.0), down.max(initial=0.0))) if len(steps) else 0.0
    return Check(worst <= 0.0, f"worst excess over slack {worst:.3e}")


def flow_pipeline(rc: RunConfig, with_harnack: bool = True) -> FlowReport:
    cfg = rc.flow
    opts = rc.flow_options
    result = run_flow(cfg)
    records = result.records
    checks = {}
    margins = record_series(records, "admissibility_margin")
    checks["admissible"] = Check(bool(np.all(margins > 0)), f"min margin {margins.min():.6g}")
    if not cfg.data.phi_dependence:
        checks["maximum_principle"] = maximum_principle_check(result)
    t = record_series(records, "t")
    omega = record_series(records, "osc_phi_t")
    summary = {"termination": result.termination, "t_final": float(result.final_state.t), "steps": result.n_steps}
    fit = None
    window = opts.get("decay_window")
    stationary = result.termination == "converged" and np.count_nonzero(omega > cfg.tol_osc) == 0
    if stationary:
        checks["decay_fit"] = Check(True, "stationary from the start; nothing to fit")
    try:
        if stationary:
            raise PreconditionError("stationary")
        fit = decay_fit(t, omega, window=window)
        checks["decay_fit"] = Check(fit.converged, f"beta={fit.beta:.6g}, C={fit.C:.6g}, r2={fit.r_squared:.6g}")
        summary.update(beta=fit.beta, C_decay=fit.C)
    except PreconditionError as exc:
        if not stationary:
            checks["decay_fit"] = Check(False, str(exc))
        summary.update(beta=None, C_decay=None)
    if opts.get("symbol_oracle"):
        rate = symbol_rate(cfg)
        phibar_osc = record_series(records, "osc_phi")
        pfit = decay_fit(t, phibar_osc, window=window)
        rel = abs(pfit.beta - rate) / abs(rate)
        checks["symbol_rate"] = Check(rel <= 0.01, f"fitted {pfit.beta:.8g} vs symbol {rate:.8g} (rel {rel:.2e})")
        summary.update(symbol_rate=rate, beta_phibar=pfit.beta)
    if result.termination == "converged":
        a, res = elliptic_residual(result.final_state, cfg)
        summary.update(a=a, final_residual=res)
        tol = opts.get("residual_tol")
        if tol is not None:
            a_ref = cfg.a_target if cfg.a_target is not None else a
            checks["elliptic_residual"] = Check(res <= tol and abs(a - a_ref) <= tol, f"a={a:.3e}, residual={res:.3e}")
    else:
        summary.update(a=None, final_residual=None)
        checks["converged"] = Check(False, f"termination {result.termination}")
    if fit is not None and fit.beta > 0 and result.snapshots:
        times = [s.t for s in result.snapshots]
        phibars = [s.phi - s.phi.mean() for s in result.snapshots]
        viol, ok = monotone_h_check(times, phibars, fit.C_envelope, fit.beta)
        checks["monotone_barrier"] = Check(ok, f"max increase {viol:.3e}")
    if not cfg.data.phi_dependence and result.snapshots and result.snapshots[-1].t >= 1.0 - 1e-9:
        try:
            vw = vn_wn_windows(result, cfg)
            worst = max(x.equation_defect for x in vw)
            starts = [float(np.min(x.v[0])) for x in vw] + [float(np.min(x.w[0])) for x in vw]
            ok = worst <= VN_WN_TOL and max(abs(m) for m in starts) <= 1e-12
            checks["vn_wn_equation"] = Check(ok, f"{len(vw)} windows, worst relative defect {worst:.3e}")
            summary["vn_wn_defect"] = worst
        except PreconditionError as exc:
            checks["vn_wn_equation"] = Check(False, str(exc))
    harnack_out = None
    windows = []
    summary.update(harnack_C=None, delta_recursion=None)
    if with_harnack and rc.harnack is not None:
        harnack_out = harnack_pipeline(rc, flow_result=result)
        for name, c in harnack_out.checks.items():
            checks[f"harnack_{name}"] = c
        C = harnack_out.report.bound
        summary["harnack_C"] = C
        windows = recursion_windows(result, C)
        if windows:
            summary["delta_recursion"] = windows[0]["delta"]
            checks["recursion"] = Check(all(w["holds"] and w["contraction_ok"] for w in windows), f"{len(windows)} windows")
    return FlowReport(result, checks, summary, fit, harnack_out, windows)


def recursion_windows(result: FlowResult, C: float, slack: float = 0.05) -> list:
    """The Harnack recursion inequality and the contraction omega(n)/omega(n-1) <= delta + slack for each full window."""
    t = record_series(result.records, "t")
    omega = record_series(result.records, "osc_phi_t")
    out = []
    n = 1
    while n <= t[-1] + 1e-9:
        try:
            idx = [int(np.nonzero(np.abs(t - s) < 1e-9)[0][0]) for s in (n - 1, n - 0.5, n)]
        except IndexError:
            break
        w0, wh, w1 = (float(omega[i]) for i in idx)
        holds, delta = recursion_check(w0, wh, w1, C)
        ratio = w1 / w0 if w0 > 0 else 0.0
        out.append({"n": n, "omega": [w0, wh, w1], "holds": holds, "delta": delta, "ratio": ratio, "contraction_ok": ratio <= delta + slack})
        n += 1
    return out


def vn_wn_windows(result: FlowResult, cfg: FlowConfig, check_equation: bool = True):
    """v_n, w_n for every full window, checked against the flow-coupled linear equation."""
    times = np.array([s.t for s in result.snapshots])
    ut = [s.phi_t for s in result.snapshots]
    cache = {}

    def coeffs_at(tt):
        key = round(float(tt), 12)
        if key not in cache:
            snap = result.snapshot_at(tt)
            ev = evaluate(snap.phi, cfg)
            st = FlowState(snap.t, ScalarField(cfg.grid, snap.phi), ScalarField(cfg.grid, ev.rhs), 0.0, ev.margin, ev.mu_hat)
            cache[key] = linearized_coefficients(st, cfg)
        return cache[key]

    out = []
    n = 1
    while n <= times[-1] + 1e-9:
        out.append(build_vn_wn(times, ut, n, coeffs_at if check_equation else None, cfg.method))
        n += 1
    return out


# ---------------------------------------------------------------------------
# cone pipeline


@dataclass
class ConeOutcome:
    rank: int
    s02: tuple
    ratio: object
    structure: object
    checks: dict


def cone_pipeline(operator, n_samples: int, seed: int, sigma: float = 1.0, psi_bounds=None) -> ConeOutcome:
    ls = operator.structure
    rank = operator_rank(operator)
    s02 = rank_condition_s02(ls, operator.k) if operator.family == "sigma_k_root" else (None, None, rank)
    ratio = lemma3_empirical_c0(operator, sigma, n_samples, seed)
    if psi_bounds is None:
        lo = sup_boundary_value(operator)
        psi_bounds = (lo + 0.5 if math.isfinite(lo) else 0.5, lo + 2.0 if math.isfinite(lo) else 2.0)
    report = check_structure(operator, psi_bounds, n_samples, seed)
    checks = {
        "gradient_ratio_c0_positive": Check(ratio.c0 > 0, f"c0={ratio.c0:.6g}"),
        "structure_all_pass": Check(report.all_pass(), ""),
    }
    if operator.family == "sigma_k_root":
        checks["rank_formula"] = Check(rank == ls.N - operator.k + 1, f"rank={rank}")
    return ConeOutcome(rank, s02, ratio, report, checks)
