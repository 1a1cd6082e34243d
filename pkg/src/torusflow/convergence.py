"""Convergence certification for the flow: oscillation decay, the Harnack-driven
recursion, exponential fits, the monotone barrier and estimate monitors."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import PreconditionError
from .flow import FlowConfig, FlowState, evaluate
from .torus import ScalarField, all_finite, eigenvalues, prepare_hat, gradient_array, hessian_array, integrate_mean

CSV_COLUMNS = (
    "t",
    "sup_phi_t",
    "inf_phi_t",
    "osc_phi_t",
    "sup_grad_sq",
    "grad_bound_ratio",
    "sup_hess",
    "osc_phi",
    "admissibility_margin",
    "chi0_max",
    "residual",
)


def oscillation(field) -> float:
    v = field.values if isinstance(field, ScalarField) else np.asarray(field)
    if not all_finite(v):
        raise ValueError("oscillation of a non-finite field")
    return float(v.max() - v.min())


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    sup_phi_t: float
    inf_phi_t: float
    osc_phi_t: float
    sup_grad_sq: float
    grad_bound_ratio: float
    sup_hess: float
    osc_phi: float
    diameter_bound: float
    admissibility_margin: float
    chi0_max: float
    residual: float

    def row(self) -> list[float]:
        d = asdict(self)
        return [d[c] for c in CSV_COLUMNS]


def estimate_monitors(state: FlowState, cfg: FlowConfig, history=None) -> DiagnosticsRecord:
    """Observed values of the a priori estimates at one state.

    ``residual`` is sup |phi_t - a| with a = cfg.a_target when known and the
    running mean of phi_t otherwise. ``diameter_bound`` is max(d, d^2); the
    constant in front of it is left to the caller to fit.
    """
    grid = cfg.grid
    phi = np.asarray(state.phi.values, dtype=float)
    pt = state.phi_t.values
    hat = prepare_hat(phi, grid, cfg.method)
    grad_sq = np.sum(np.abs(gradient_array(phi, grid, cfg.method, hat)) ** 2, axis=-1)
    hess = eigenvalues(hessian_array(phi, grid, cfg.method, hat))
    chi0_max = -cfg.data.psi_slope
    if not cfg.data.phi_dependence:
        assert chi0_max <= 0.0
    a = cfg.a_target if cfg.a_target is not None else integrate_mean(state.phi_t)
    d = grid.diameter
    return DiagnosticsRecord(
        t=float(state.t),
        sup_phi_t=float(pt.max()),
        inf_phi_t=float(pt.min()),
        osc_phi_t=oscillation(pt),
        sup_grad_sq=float(grad_sq.max()),
        grad_bound_ratio=float(np.max(grad_sq / (1.0 + phi.max() - phi))),
        sup_hess=float(np.abs(hess).max()),
        osc_phi=oscillation(phi),
        diameter_bound=max(d, d * d),
        admissibility_margin=float(state.admissibility_margin),
        chi0_max=float(chi0_max),
        residual=float(np.max(np.abs(pt - a))),
    )


# ---------------------------------------------------------------------------
# v_n, w_n and the recursion


@dataclass(frozen=True, eq=False)
class VnWn:
    """v_n, w_n on local times t - (n - 1) in [0, 1]."""

    n: int
    local_times: np.ndarray
    v: list
    w: list
    equation_defect: float | None = None


def _sample_index(times: np.ndarray, t: float, tol: float = 1e-9) -> int:
    hits = np.nonzero(np.abs(times - t) <= tol * max(1.0, abs(t)))[0]
    if hits.size == 0:
        raise PreconditionError(f"no sample at t = {t}")
    return int(hits[0])


def build_vn_wn(times, u_samples, n: int, coeffs_at=None, method: str = "spectral") -> VnWn:
    """v_n = sup u(n-1) - u(., n-1+t) and w_n = u(., n-1+t) - inf u(n-1).

    With ``coeffs_at`` (time -> CoefficientFields) both are checked against
    the linear equation at interior samples: a five-point time difference of
    v_n is compared with L v_n, and the worst relative defect is stored.
    """
    times = np.asarray(times, dtype=float)
    if n < 1:
        raise PreconditionError("window index n must be >= 1")
    i0 = _sample_index(times, n - 1.0)
    _sample_index(times, float(n))
    sel = np.nonzero((times >= n - 1 - 1e-9) & (times <= n + 1e-9))[0]
    u0 = np.asarray(u_samples[i0])
    top, bottom = u0.max(), u0.min()
    v = [top - np.asarray(u_samples[i]) for i in sel]
    w = [np.asarray(u_samples[i]) - bottom for i in sel]
    local = times[sel] - (n - 1)
    defect = None
    if coeffs_at is not None:
        defect = _equation_defect(times[sel], v, coeffs_at, method)
    return VnWn(n, local, v, w, defect)


def _equation_defect(ts, v, coeffs_at, method):
    """Worst relative gap between the O(h^4) time derivative of v and L v."""
    ts = np.asarray(ts)
    h = np.diff(ts)
    if ts.size < 5 or np.ptp(h) > 1e-9 * max(1.0, h.max()):
        raise PreconditionError("equation check needs at least 5 equally spaced samples")
    h = h[0]
    worst = 0.0
    for i in range(2, ts.size - 2):
        dv = (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) / (12.0 * h)
        Lv = coeffs_at(ts[i]).apply(v[i], method)
        scale = max(np.max(np.abs(Lv)), 1e-300)
        worst = max(worst, float(np.max(np.abs(dv - Lv)) / scale))
    return worst


def recursion_check(omega_prev: float, omega_half: float, omega_next: float, C_harnack: float):
    """omega(n-1) + omega(n-1/2) <= C (omega(n-1) - omega(n)); delta = (C-1)/(C+1).

    With omega non-increasing, omega(n) <= omega(n-1/2), so the recursion
    forces omega(n) <= delta * omega(n-1).
    """
    if not C_harnack > 1.0:
        raise PreconditionError(f"Harnack constant must exceed 1, got {C_harnack}")
    holds = omega_prev + omega_half <= C_harnack * (omega_prev - omega_next)
    return bool(holds), (C_harnack - 1.0) / (C_harnack + 1.0)


# ---------------------------------------------------------------------------
# decay fit and barrier


@dataclass(frozen=True)
class DecayFit:
    C: float
    beta: float
    r_squared: float
    window: tuple[float, float]
    envelope_ok: bool
    C_envelope: float

    @property
    def converged(self) -> bool:
        return self.beta > 0 and self.envelope_ok


def decay_fit(times, omega, window=None) -> DecayFit:
    """Least squares of log omega on t; envelope omega <= 1.05 C e^{-beta t} checked.

    ``C_envelope`` is the smallest constant for which C e^{-beta t} bounds
    every sample in the window.
    """
    t = np.asarray(times, dtype=float)
    w = np.asarray(omega, dtype=float)
    keep = w > 0
    if window is not None:
        keep &= (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    t, w = t[keep], w[keep]
    if t.size < 5:
        raise PreconditionError(f"need at least 5 positive samples, got {t.size}")
    y = np.log(w)
    slope, intercept = np.polyfit(t, y, 1)
    fit = intercept + slope * t
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    C = float(math.exp(intercept))
    beta = float(-slope)
    env = w <= 1.05 * C * np.exp(-beta * t)
    C_env = float(np.max(w * np.exp(beta * t)))
    return DecayFit(C, beta, r2, (float(t[0]), float(t[-1])), bool(env.all()), C_env)


def monotone_h_check(times, phibar_samples, C: float, beta: float):
    """h = phibar + C e^{-beta t}/beta must not increase between samples."""
    if beta <= 0:
        raise PreconditionError("beta must be positive")
    times = np.asarray(times, dtype=float)
    worst = -np.inf
    peak = 0.0
    prev = None
    for t, pb in zip(times, phibar_samples):
        pb = np.asarray(pb)
        peak = max(peak, float(np.max(np.abs(pb))))
        h = pb + C * math.exp(-beta * t) / beta
        if prev is not None:
            worst = max(worst, float(np.max(h - prev)))
        prev = h
    slack = 1e-8 * (1.0 + peak)
    worst = max(worst, 0.0) if np.isfinite(worst) else 0.0
    return worst, bool(worst <= slack)


def elliptic_residual(final: FlowState, cfg: FlowConfig):
    """(a, sup |f(Lambda(g[phibar])) - psi[phibar] - a|) with a = mean phi_t."""
    a = integrate_mean(final.phi_t)
    phibar = final.phibar
    rhs = evaluate(np.asarray(phibar.values, dtype=float), cfg).rhs
    return float(a), float(np.max(np.abs(rhs - a)))


# ---------------------------------------------------------------------------
# record series helpers


def record_series(records, name: str) -> np.ndarray:
    return np.array([getattr(r, name) for r in records])


def monitors_stable(records, t_ref: float = 1.0, factor: float = 10.0, names=("sup_phi_t", "sup_grad_sq", "grad_bound_ratio", "sup_hess")):
    """For each monitor: (value at t_ref, max over t >= t_ref, ok)."""
    t = record_series(records, "t")
    if t[-1] < t_ref:
        raise PreconditionError(f"records end at t = {t[-1]} < {t_ref}")
    i = _sample_index(t, t_ref)
    out = {}
    for name in names:
        s = np.abs(record_series(records, name))
        ref, peak = float(s[i]), float(s[i:].max())
        out[name] = (ref, peak, bool(peak <= factor * ref or peak == 0.0))
    return out


def record_fields() -> tuple[str, ...]:
    return tuple(f.name for f in fields(DiagnosticsRecord))
