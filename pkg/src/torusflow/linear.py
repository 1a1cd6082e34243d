"""Linear parabolic equations u_t = G u_{i jbar} + chi_k u_k + chi_kbar u_kbar + chi0 u.

Conventions: ``G`` holds the Hermitian matrix G with the contraction
G^{i jbar} a_{i jbar} = Re tr(G a), so G^{i jbar} xi_i conj(xi_j) = xi^H G xi.
``chi`` holds chi_k; for real u the two first-order terms add up to
2 Re(chi_k d_k u).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.optimize

from .errors import PositivityLossError, PreconditionError
from .torus import (
    HermitianField,
    ScalarField,
    TorusGrid,
    dense_operators,
    prepare_hat,
    eigenvalues,
    gradient_array,
    hessian_array,
)

SAMPLE_MATCH = 1e-9


@dataclass(frozen=True, eq=False)
class CoefficientFields:
    G: HermitianField
    chi: np.ndarray
    chi0: ScalarField
    ellipticity: tuple[float, float] = field(init=False)

    def __post_init__(self):
        ev = eigenvalues(self.G)
        object.__setattr__(self, "ellipticity", (float(ev.min()), float(ev.max())))
        chi = np.asarray(self.chi, dtype=complex)
        object.__setattr__(self, "chi", np.broadcast_to(chi, self.grid.shape + (self.grid.n,)))

    @property
    def grid(self) -> TorusGrid:
        return self.G.grid

    @classmethod
    def constant(cls, grid: TorusGrid, g: float = 1.0, chi=None, chi0: float = 0.0) -> "CoefficientFields":
        """G = g * identity, constant chi (length n), constant chi0."""
        chi = np.zeros(grid.n, dtype=complex) if chi is None else np.asarray(chi, dtype=complex)
        return cls(
            HermitianField.scaled_identity(grid, g),
            np.broadcast_to(chi, grid.shape + (grid.n,)),
            ScalarField(grid, np.full(grid.shape, float(chi0))),
        )

    def real_form(self):
        """L as real coefficients: second[(a, b)] for a <= b (both orders summed) and first[a].

        Re tr(G H[u]) = 1/4 sum_ij Re G_ij (u_xixj + u_yiyj) + Im G_ij (u_xiyj - u_yixj)
        and 2 Re(chi_k d_k u) = Re chi_k u_xk + Im chi_k u_yk.
        """
        cached = self.__dict__.get("_real_form")
        if cached is not None:
            return cached
        grid = self.grid
        n = grid.n
        active = set(grid.active_axes)
        G = self.G.values
        A = {}

        def add(a, b, val):
            if a not in active or b not in active:
                return
            key = (min(a, b), max(a, b))
            A[key] = A.get(key, 0.0) + val

        for i in range(n):
            for j in range(n):
                re, im = 0.25 * G[..., i, j].real, 0.25 * G[..., i, j].imag
                add(2 * i, 2 * j, re)
                add(2 * i + 1, 2 * j + 1, re)
                if i != j:
                    add(2 * i, 2 * j + 1, im)
                    add(2 * i + 1, 2 * j, -im)
        second = {k: np.ascontiguousarray(v) for k, v in A.items() if np.any(v != 0)}
        first = {}
        if np.any(self.chi != 0):
            for k in range(n):
                for a, part in ((2 * k, self.chi[..., k].real), (2 * k + 1, self.chi[..., k].imag)):
                    if a in active and np.any(part != 0):
                        first[a] = np.ascontiguousarray(part)
        object.__setattr__(self, "_real_form", (second, first))
        return second, first

    def apply(self, u: np.ndarray, method: str = "spectral") -> np.ndarray:
        grid = self.grid
        ops = dense_operators(grid, method)
        if ops is not None:
            return self._apply_dense(u, ops)
        hat = prepare_hat(u, grid, method)
        H = hessian_array(u, grid, method, hat)
        out = np.einsum("...ij,...ji->...", self.G.values, H).real
        if np.any(self.chi != 0):
            du = gradient_array(u, grid, method, hat)
            out += 2.0 * np.sum(self.chi * du, axis=-1).real
        return out + self.chi0.values * u

    def _apply_dense(self, u, ops):
        mul, D1, D2 = ops
        second, first = self.real_form()
        d1 = {a: mul(u, a, D1[a]) for a in D1}
        out = self.chi0.values * u
        for (a, b), coef in second.items():
            term = mul(u, a, D2[a]) if a == b else mul(d1[a], b, D1[b])
            out += coef * term
        for a, coef in first.items():
            out += coef * d1[a]
        return out


CoefficientSource = Union[CoefficientFields, Callable[[float], CoefficientFields]]


def _coeffs_at(source: CoefficientSource, t: float) -> CoefficientFields:
    return source if isinstance(source, CoefficientFields) else source(t)


@dataclass
class LinearRunConfig:
    coeffs: CoefficientSource
    u0: ScalarField
    t_end: float
    sample_times: tuple[float, ...]
    alpha: float = 1.5
    c_cfl: float = 0.2
    method: str = "spectral"

    def __post_init__(self):
        if self.u0.min() <= 0:
            raise PreconditionError("initial data must be strictly positive")
        if not 1.0 < self.alpha < 2.0:
            raise PreconditionError(f"alpha must lie in (1, 2), got {self.alpha}")
        if not 0.0 < self.c_cfl <= 1.0:
            raise PreconditionError("c_cfl must lie in (0, 1]")
        times = tuple(sorted(float(t) for t in self.sample_times))
        if not times or times[0] < 0 or times[-1] > self.t_end + SAMPLE_MATCH:
            raise PreconditionError("sample times must lie in [0, t_end]")
        self.sample_times = times


@dataclass
class LinearTrajectory:
    """Samples of u and of u_t = L u (the PDE right-hand side)."""

    times: np.ndarray
    u: list
    u_t: list
    coeffs: CoefficientSource

    def index(self, t: float) -> int:
        hits = np.nonzero(np.abs(self.times - t) <= SAMPLE_MATCH * max(1.0, abs(t)))[0]
        if hits.size == 0:
            raise PreconditionError(f"t = {t} is not a sample time")
        return int(hits[0])

    def coeffs_at(self, t: float) -> CoefficientFields:
        return _coeffs_at(self.coeffs, t)


def cfl_dt(grid: TorusGrid, c_cfl: float, diffusivity: float) -> float:
    """c_cfl * h_min^2 / (pi^2 * diffusivity)."""
    return c_cfl * grid.h_min**2 / (math.pi**2 * diffusivity)


def solve_linear(cfg: LinearRunConfig) -> LinearTrajectory:
    """Classical RK4 with CFL-limited steps landing on every sample time."""
    u = np.array(cfg.u0.values, dtype=float)
    grid = cfg.u0.grid
    t = 0.0
    times, us, uts = [], [], []

    def rhs(tt, vv):
        return _coeffs_at(cfg.coeffs, tt).apply(vv, cfg.method)

    def record(tt, vv):
        times.append(tt)
        us.append(ScalarField(grid, vv))
        uts.append(ScalarField(grid, rhs(tt, vv)))

    for target in cfg.sample_times:
        while t < target - SAMPLE_MATCH * max(1.0, target):
            co = _coeffs_at(cfg.coeffs, t)
            lo, hi = co.ellipticity
            if lo <= 0:
                raise PreconditionError(f"degenerate ellipticity (min eigenvalue {lo:.3e}) at t={t}")
            dt = cfl_dt(grid, cfg.c_cfl, hi)
            if t + dt >= target:
                dt, t_new = target - t, target
            else:
                t_new = t + dt
            k1 = co.apply(u, cfg.method)
            k2 = rhs(t + 0.5 * dt, u + 0.5 * dt * k1)
            k3 = rhs(t + 0.5 * dt, u + 0.5 * dt * k2)
            k4 = rhs(t + dt, u + dt * k3)
            u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t = t_new
            if u.min() <= 0:
                raise PositivityLossError(
                    f"min u = {u.min():.3e} at t = {t:.6g}; retry with a smaller c_cfl"
                )
        record(target, u.copy())
    return LinearTrajectory(np.array(times), us, uts, cfg.coeffs)


# ---------------------------------------------------------------------------
# Li-Yau quantity and Harnack inequality


def gradient_norm_sq(u: np.ndarray, coeffs: CoefficientFields, method: str = "spectral") -> np.ndarray:
    """|d log u|^2 measured with G, i.e. (du/u)^H G (du/u)."""
    df = gradient_array(u, coeffs.grid, method) / u[..., None]
    return np.einsum("...i,...ij,...j->...", np.conj(df), coeffs.G.values, df).real


def li_yau_quantity(
    u: ScalarField, u_t: ScalarField, coeffs: CoefficientFields, t: float, alpha: float, method: str = "spectral"
) -> ScalarField:
    """F = t (|d f|^2 - alpha f_t) with f = log u."""
    if u.min() <= 0:
        raise PreconditionError("u must be strictly positive")
    if t <= 0:
        raise PreconditionError("t must be positive")
    v = u.values
    return ScalarField(u.grid, t * (gradient_norm_sq(v, coeffs, method) - alpha * u_t.values / v))


@dataclass(frozen=True)
class LiYauFit:
    C1: float
    C2: float
    times: np.ndarray
    sup_values: np.ndarray
    residuals: np.ndarray

    def envelope(self, t):
        return self.C1 + self.C2 / np.asarray(t)


def li_yau_series(traj: LinearTrajectory, alpha: float, t_min: float = 0.0, t_max: float = math.inf):
    """(times, sup_x(|d f|^2 - alpha f_t)) over samples with t_min <= t <= t_max, t > 0."""
    ts, sups = [], []
    for t, u, ut in zip(traj.times, traj.u, traj.u_t):
        if t <= 0 or t < t_min - SAMPLE_MATCH or t > t_max + SAMPLE_MATCH:
            continue
        F = li_yau_quantity(u, ut, traj.coeffs_at(t), t, alpha)
        ts.append(t)
        sups.append(F.max() / t)
    return np.array(ts), np.array(sups)


def fit_li_yau_constants(traj: LinearTrajectory, alpha: float, t_min: float = 0.0, t_max: float = math.inf) -> LiYauFit:
    """Nonnegative least squares of the sup-series on (1, 1/t), lifted to an envelope.

    After the NNLS solve, C1 is raised by the largest positive residual so
    that C1 + C2/t bounds every sample from above.
    """
    ts, y = li_yau_series(traj, alpha, t_min, t_max)
    if ts.size < 5:
        raise PreconditionError(f"need at least 5 positive sample times, got {ts.size}")
    A = np.column_stack([np.ones_like(ts), 1.0 / ts])
    (c1, c2), _ = scipy.optimize.nnls(A, y)
    lift = max(0.0, float(np.max(y - A @ np.array([c1, c2]))))
    c1 += lift
    return LiYauFit(float(c1), float(c2), ts, y, y - (c1 + c2 / ts))


@dataclass(frozen=True)
class HarnackReport:
    t1: float
    t2: float
    sup_u_t1: float
    inf_u_t2: float
    ratio: float
    fitted_constants: tuple[float, float, float]
    bound: float
    satisfied: bool


def harnack_bound(t1: float, t2: float, constants) -> float:
    """(t2/t1)^C2 exp(C3/(t2-t1) + C1 (t2-t1))."""
    C1, C2, C3 = constants
    return float((t2 / t1) ** C2 * math.exp(C3 / (t2 - t1) + C1 * (t2 - t1)))


def harnack_constants(traj: LinearTrajectory, t2: float, alpha: float, diameter: float, t_min: float = 0.0):
    """Harnack constants from the fitted Li-Yau envelope along straight paths.

    Integrating d/ds log u along (gamma(s), t2 - s (t2 - t1)) with the
    envelope |df|^2 - alpha f_t <= a + b/t gives
    C1 = a/alpha, C2 = b/alpha and C3 = alpha d^2 / lambda_min, where d bounds
    the path length and lambda_min the ellipticity of G.
    """
    fit = fit_li_yau_constants(traj, alpha, t_min=t_min, t_max=t2)
    lam_min = min(traj.coeffs_at(t).ellipticity[0] for t in fit.times)
    return (fit.C1 / alpha, fit.C2 / alpha, alpha * diameter**2 / lam_min), fit


def harnack_verify(
    traj: LinearTrajectory,
    t1: float,
    t2: float,
    constants=None,
    alpha: float = 1.5,
    diameter: float | None = None,
) -> HarnackReport:
    if not 0 < t1 < t2:
        raise PreconditionError(f"need 0 < t1 < t2, got t1={t1}, t2={t2}")
    i1, i2 = traj.index(t1), traj.index(t2)
    if constants is None:
        d = traj.u[0].grid.active_diameter if diameter is None else diameter
        constants, _ = harnack_constants(traj, t2, alpha, d)
    constants = tuple(float(c) for c in constants)
    sup1 = traj.u[i1].max()
    inf2 = traj.u[i2].min()
    ratio = sup1 / inf2
    bound = harnack_bound(t1, t2, constants)
    return HarnackReport(float(t1), float(t2), sup1, inf2, ratio, constants, bound, bool(ratio <= bound))
