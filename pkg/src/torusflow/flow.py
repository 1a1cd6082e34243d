"""Explicit time integration of phi_t = f(Lambda(i ddbar phi + X[phi])) - psi[phi]."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cone import LambdaStructure, OperatorSpec, eigen_gradient_weights, f_grad, gradient_sum
from .errors import ConfigError, FlowBreakdownError, InadmissiblePointError
from .linear import CoefficientFields
from .torus import (
    EigenField,
    HermitianField,
    ScalarField,
    TorusGrid,
    prepare_hat,
    eigen_decompose,
    eigenvalues,
    gradient_array,
    hessian_array,
    partial_derivative,
    all_finite,
    integrate_mean,
)

log = logging.getLogger(__name__)

MAX_HALVINGS = 20
SOFT_MARGIN = 1e-8
X_KINDS = ("zero", "scaled_identity", "prescribed_field", "gradient_coupled")
PSI_KINDS = ("constant", "prescribed_field", "manufactured")


@dataclass(frozen=True, eq=False)
class DataSpec:
    """The (1,1)-form X[phi] and the right-hand side psi[phi].

    X: zero, c * identity, a prescribed Hermitian field, or
    c / (1 + |d phi|^2) * identity (``gradient_coupled``).
    psi: a constant, a prescribed field, or ``manufactured`` from a target
    phi*, i.e. psi = f(Lambda(i ddbar phi* + X[phi*])). ``psi_slope`` b adds
    b * phi to psi and is the only phi-dependence supported.
    """

    X_kind: str = "zero"
    X_c: float = 0.0
    X_field: HermitianField | None = None
    psi_kind: str = "constant"
    psi_value: float = 0.0
    psi_field: ScalarField | None = None
    psi_slope: float = 0.0

    def __post_init__(self):
        if self.X_kind not in X_KINDS:
            raise ConfigError(f"unknown X kind {self.X_kind!r}")
        if self.psi_kind not in PSI_KINDS:
            raise ConfigError(f"unknown psi kind {self.psi_kind!r}")
        if self.X_kind == "prescribed_field" and self.X_field is None:
            raise ConfigError("X prescribed_field needs X_field")
        if self.psi_kind in ("prescribed_field", "manufactured") and self.psi_field is None:
            raise ConfigError(f"psi {self.psi_kind} needs psi_field")

    @property
    def phi_dependence(self) -> bool:
        return self.psi_slope != 0.0

    @property
    def gradient_dependence(self) -> bool:
        return self.X_kind == "gradient_coupled" and self.X_c != 0.0

    def x_values(self, grid: TorusGrid, grad_sq=None):
        """X at every node as an array (..., n, n), or None when X = 0."""
        n = grid.n
        eye = np.eye(n)
        if self.X_kind == "zero":
            return None
        if self.X_kind == "scaled_identity":
            return self.X_c * eye
        if self.X_kind == "prescribed_field":
            return self.X_field.values
        return (self.X_c / (1.0 + grad_sq))[..., None, None] * eye


def _g_arrays(values: np.ndarray, grid: TorusGrid, data: DataSpec, method: str):
    """(g, d phi or None, |d phi|^2 or None) as arrays."""
    hat = prepare_hat(values, grid, method)
    g = hessian_array(values, grid, method, hat)
    dphi = grad_sq = None
    if data.gradient_dependence:
        dphi = gradient_array(values, grid, method, hat)
        grad_sq = np.sum(np.abs(dphi) ** 2, axis=-1)
    if data.X_kind == "scaled_identity":
        for i in range(grid.n):
            g[..., i, i] += data.X_c
    else:
        X = data.x_values(grid, grad_sq)
        if X is not None:
            g += X
    return g, dphi, grad_sq


def assemble_g_form(phi: ScalarField, data: DataSpec, method: str = "spectral") -> HermitianField:
    """g[phi] = i ddbar phi + X[phi]."""
    g, _, _ = _g_arrays(np.asarray(phi.values, dtype=float), phi.grid, data, method)
    return HermitianField(phi.grid, g)


def manufactured_psi(target: ScalarField, operator: OperatorSpec, data: DataSpec, method: str = "spectral") -> np.ndarray:
    """psi = f(Lambda(g[target])), so target is an exact stationary state."""
    probe = DataSpec(X_kind=data.X_kind, X_c=data.X_c, X_field=data.X_field)
    g, _, _ = _g_arrays(np.asarray(target.values, dtype=float), target.grid, probe, method)
    Lam = _lambda(g, operator.structure)
    f, margins, adm = operator.evaluate_with_margins(Lam)
    if operator.m and adm.min() <= 0:
        node = np.unravel_index(int(np.argmin(adm)), adm.shape)
        raise InadmissiblePointError(
            "manufactured target is not admissible", margins=margins[node], node=tuple(int(i) for i in node)
        )
    return f


def _lambda(g: np.ndarray, ls: LambdaStructure) -> np.ndarray:
    lam = eigenvalues(g)
    return lam[..., ls.zero_based].sum(axis=-1)


@dataclass(eq=False)
class FlowConfig:
    structure: LambdaStructure
    operator: OperatorSpec
    data: DataSpec
    grid: TorusGrid
    phi0: ScalarField
    integrator: str = "rk4"
    c_cfl: float = 0.2
    t_max: float = 1.0
    tol_osc: float = 1e-8
    sample_interval: float = 0.05
    alpha_harnack: float = 1.5
    seed: int = 0
    method: str = "spectral"
    a_target: float | None = None
    keep_snapshots: bool = True
    psi_base: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.operator.structure != self.structure:
            raise ConfigError("operator was built on a different LambdaStructure")
        if self.structure.n != self.grid.n:
            raise ConfigError(f"structure has n={self.structure.n}, grid has n={self.grid.n}")
        if self.phi0.grid != self.grid:
            raise ConfigError("phi0 lives on a different grid")
        if self.integrator not in ("euler", "rk4"):
            raise ConfigError(f"integrator must be euler or rk4, got {self.integrator!r}")
        if not 0.0 < self.c_cfl <= 1.0:
            raise ConfigError(f"c_cfl must lie in (0, 1], got {self.c_cfl}")
        if self.tol_osc < 0 or self.t_max <= 0 or self.sample_interval <= 0:
            raise ConfigError("tol_osc >= 0, t_max > 0 and sample_interval > 0 required")
        if not 1.0 < self.alpha_harnack < 2.0:
            raise ConfigError(f"alpha_harnack must lie in (1, 2), got {self.alpha_harnack}")
        if self.method not in ("spectral", "central4"):
            raise ConfigError(f"unknown derivative method {self.method!r}")
        d = self.data
        if d.psi_kind == "constant":
            base = np.full(self.grid.shape, float(d.psi_value))
        elif d.psi_kind == "prescribed_field":
            base = np.array(d.psi_field.values, dtype=float)
        else:
            base = manufactured_psi(d.psi_field, self.operator, d, self.method)
        self.psi_base = base
        # raises with the worst node when phi0 is not admissible
        evaluate(np.asarray(self.phi0.values, dtype=float), self)

    def psi(self, values: np.ndarray) -> np.ndarray:
        if self.data.psi_slope == 0.0:
            return self.psi_base
        return self.psi_base + self.data.psi_slope * values


@dataclass(frozen=True, eq=False)
class Evaluation:
    rhs: np.ndarray
    margin: float
    Lam: np.ndarray | None
    g: np.ndarray | None
    dphi: np.ndarray | None
    grad_sq: np.ndarray | None
    mu_hat: float


def _uniform_linear(op: OperatorSpec) -> bool:
    w = op.weight_vector
    return op.is_linear and op.m == 0 and bool(np.all(w == w[0]))


def evaluate(values: np.ndarray, cfg: FlowConfig) -> Evaluation:
    """Right-hand side with admissibility check; raises on any bad node.

    For equal linear weights on the whole space, f(Lambda) is w C(n-1, K-1)
    times the trace of g, so no eigenvalues are needed.
    """
    op = cfg.operator
    if _uniform_linear(op) and not cfg.data.gradient_dependence:
        return _evaluate_trace(values, cfg)
    g, dphi, grad_sq = _g_arrays(values, cfg.grid, cfg.data, cfg.method)
    if _uniform_linear(op):
        ls = cfg.structure
        tr = np.einsum("...ii->...", g).real
        f = op.weight_vector[0] * math.comb(ls.n - 1, ls.K - 1) * tr
        if not np.all(np.isfinite(f)):
            raise InadmissiblePointError("non-finite right-hand side")
        mh = float(ls.K * op.weight_vector.sum())
        return Evaluation(f - cfg.psi(values), 1.0, None, g, dphi, grad_sq, mh)
    Lam = _lambda(g, cfg.structure)
    f, margins, adm = op.evaluate_with_margins(Lam)
    finite = np.isfinite(f)
    bad = ~finite | (adm <= 0) if cfg.operator.m else ~finite
    if bad.any():
        score = np.where(finite, adm, -np.inf)
        node = np.unravel_index(int(np.argmin(score)), score.shape)
        row = margins[node]
        j = int(np.argmax(row <= 0)) + 1 if row.size and (row <= 0).any() else None
        coords = [c.reshape(-1)[0] if c.size == 1 else c[node] for c in np.broadcast_arrays(*cfg.grid.coordinates())]
        raise InadmissiblePointError(
            f"inadmissible node {tuple(int(i) for i in node)} at x = {np.round(coords, 6).tolist()}, "
            f"margins {np.array2string(row, precision=3)}",
            margin_index=j,
            margins=np.array(row),
            node=tuple(int(i) for i in node),
        )
    margin = float(adm.min())
    if cfg.operator.m and margin < SOFT_MARGIN:
        log.warning("admissibility margin %.3e is below %.0e", margin, SOFT_MARGIN)
    mh = float(cfg.structure.K * np.max(gradient_sum(op, f, margins)))
    return Evaluation(f - cfg.psi(values), margin, Lam, g, dphi, grad_sq, mh)


def _evaluate_trace(values: np.ndarray, cfg: FlowConfig) -> Evaluation:
    """Uniform linear operator with gradient-free X: f only needs tr g = Laplacian/4 + tr X."""
    grid, data, op, ls = cfg.grid, cfg.data, cfg.operator, cfg.structure
    tr = 0.0
    for a in grid.active_axes:
        tr = tr + partial_derivative(values, grid, a, a, cfg.method)
    tr = 0.25 * tr
    if data.X_kind == "scaled_identity":
        tr = tr + grid.n * data.X_c
    elif data.X_kind == "prescribed_field":
        tr = tr + np.einsum("...ii->...", data.X_field.values).real
    f = op.weight_vector[0] * math.comb(ls.n - 1, ls.K - 1) * tr
    if np.shape(f) != grid.shape:
        f = np.broadcast_to(f, grid.shape)
    if not all_finite(f):
        raise InadmissiblePointError("non-finite right-hand side")
    mh = float(ls.K * op.weight_vector.sum())
    return Evaluation(f - cfg.psi(values), 1.0, None, None, None, None, mh)


def flow_rhs(phi: ScalarField, cfg: FlowConfig) -> tuple[ScalarField, float]:
    ev = evaluate(np.asarray(phi.values, dtype=float), cfg)
    return ScalarField(phi.grid, ev.rhs), ev.margin


def mu_hat(Lam: np.ndarray, cfg: FlowConfig) -> float:
    """max over nodes of sum_p mu_p = K sum_I f_I, which bounds the largest eigenvalue of G."""
    f, margins, _ = cfg.operator.evaluate_with_margins(Lam)
    return float(cfg.structure.K * np.max(gradient_sum(cfg.operator, f, margins)))


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    phi: ScalarField
    phi_t: ScalarField
    dt_last: float
    admissibility_margin: float
    mu_hat: float

    @property
    def phibar(self) -> ScalarField:
        return ScalarField(self.phi.grid, self.phi.values - integrate_mean(self.phi))


def _state(t: float, values: np.ndarray, ev: Evaluation, dt: float, cfg: FlowConfig) -> FlowState:
    return FlowState(
        t, ScalarField(cfg.grid, values), ScalarField(cfg.grid, ev.rhs), dt, ev.margin, ev.mu_hat
    )


def initial_state(cfg: FlowConfig) -> FlowState:
    values = np.array(cfg.phi0.values, dtype=float)
    return _state(0.0, values, evaluate(values, cfg), 0.0, cfg)


def cfl_step(state: FlowState, cfg: FlowConfig) -> float:
    """c_cfl * h_min^2 / (pi^2 mu_hat)."""
    return cfg.c_cfl * cfg.grid.h_min**2 / (math.pi**2 * state.mu_hat)


def _advance(values: np.ndarray, k1: np.ndarray, dt: float, cfg: FlowConfig):
    """One Euler or RK4 update; returns (new values, evaluation at the new values)."""
    if cfg.integrator == "euler":
        new = values + dt * k1
    else:
        k2 = evaluate(values + 0.5 * dt * k1, cfg).rhs
        k3 = evaluate(values + 0.5 * dt * k2, cfg).rhs
        k4 = evaluate(values + dt * k3, cfg).rhs
        new = values + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return new, evaluate(new, cfg)


def step(state: FlowState, cfg: FlowConfig, t_target: float | None = None) -> FlowState:
    """One accepted step; dt halves on inadmissible stages (at most 20 times).

    When the CFL step would pass ``t_target`` it is shortened to land on it.
    """
    dt = cfl_step(state, cfg)
    land = False
    if t_target is not None and state.t + dt >= t_target:
        dt, land = t_target - state.t, True
    values = state.phi.values
    k1 = state.phi_t.values
    history = []
    for _ in range(MAX_HALVINGS + 1):
        try:
            new, ev = _advance(values, k1, dt, cfg)
        except InadmissiblePointError as exc:
            history.append((dt, None if exc.margins is None else float(np.min(exc.margins, initial=np.inf))))
            dt *= 0.5
            land = False
            continue
        return _state(t_target if land else state.t + dt, new, ev, dt, cfg)
    raise FlowBreakdownError(
        f"no admissible step after {MAX_HALVINGS} halvings at t = {state.t:.6g}", t=state.t, margin_history=history
    )


def linearized_coefficients(state: FlowState, cfg: FlowConfig) -> CoefficientFields:
    """G = U diag(mu) U^H, chi_k and chi0 of the linearised flow at ``state``."""
    values = np.asarray(state.phi.values, dtype=float)
    g, dphi, grad_sq = _g_arrays(values, cfg.grid, cfg.data, cfg.method)
    eig = eigen_decompose(HermitianField(cfg.grid, g))
    Lam = eig.eigenvalues[..., cfg.structure.zero_based].sum(axis=-1)
    mu = eigen_gradient_weights(f_grad(cfg.operator, Lam), cfg.structure)
    G = HermitianField(cfg.grid, EigenField(cfg.grid, mu, eig.vectors).reconstruct())
    n = cfg.grid.n
    chi = np.zeros(cfg.grid.shape + (n,), dtype=complex)
    if cfg.data.gradient_dependence:
        # X = c/(1+s) I with s = sum |d_k phi|^2, so dX = -c/(1+s)^2 (2 Re conj(d_k phi) d_k v) I
        trG = mu.sum(axis=-1)
        chi = (trG * (-cfg.data.X_c) / (1.0 + grad_sq) ** 2)[..., None] * np.conj(dphi)
    chi0 = ScalarField(cfg.grid, np.full(cfg.grid.shape, -cfg.data.psi_slope))
    return CoefficientFields(G, chi, chi0)


def linearization_defect(state: FlowState, cfg: FlowConfig, v: np.ndarray, eps: float = 1e-5, central: bool = True) -> float:
    """Relative sup-norm gap between the difference quotient of the rhs and L v.

    The central quotient has O(eps^2) error; ``central=False`` uses the
    one-sided quotient (O(eps)).
    """
    coeffs = linearized_coefficients(state, cfg)
    phi = np.asarray(state.phi.values, dtype=float)
    plus = evaluate(phi + eps * v, cfg).rhs
    if central:
        fd = (plus - evaluate(phi - eps * v, cfg).rhs) / (2.0 * eps)
    else:
        fd = (plus - evaluate(phi, cfg).rhs) / eps
    lin = coeffs.apply(v, cfg.method)
    return float(np.max(np.abs(fd - lin)) / max(np.max(np.abs(lin)), 1e-300))


@dataclass(frozen=True, eq=False)
class Snapshot:
    t: float
    phi: np.ndarray
    phi_t: np.ndarray


@dataclass(eq=False)
class FlowResult:
    records: list
    snapshots: list
    final_state: FlowState
    termination: str
    n_steps: int = 0
    record_steps: list = field(default_factory=list)

    def record_times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def snapshot_at(self, t: float, tol: float = 1e-9) -> Snapshot:
        for s in self.snapshots:
            if abs(s.t - t) <= tol * max(1.0, abs(t)):
                return s
        raise KeyError(f"no snapshot at t = {t}")


def run_flow(cfg: FlowConfig, on_record=None) -> FlowResult:
    """Step until osc(phi_t) < tol_osc or t reaches t_max, sampling on a fixed grid.

    Sample times are exact multiples of ``sample_interval``; steps are
    shortened to land on them. A final record is added at the stopping time.
    """
    from .convergence import estimate_monitors, oscillation

    state = initial_state(cfg)
    records, snapshots, record_steps = [], [], []
    steps = 0

    def sample(s):
        rec = estimate_monitors(s, cfg)
        records.append(rec)
        record_steps.append(steps)
        if cfg.keep_snapshots:
            snapshots.append(Snapshot(s.t, np.array(s.phi.values), np.array(s.phi_t.values)))
        if on_record is not None:
            on_record(rec)

    sample(state)
    m = 1
    termination = "t_max_reached"
    while True:
        if oscillation(state.phi_t) < cfg.tol_osc:
            termination = "converged"
            break
        if state.t >= cfg.t_max * (1.0 - 1e-14):
            break
        target = min(m * cfg.sample_interval, cfg.t_max)
        try:
            state = step(state, cfg, t_target=target)
        except FlowBreakdownError as exc:
            exc.partial = FlowResult(records, snapshots, state, "breakdown", steps, record_steps)
            raise
        steps += 1
        if state.t == target:
            sample(state)
            m += 1
    if records[-1].t != state.t:
        sample(state)
    return FlowResult(records, snapshots, state, termination, steps, record_steps)
