import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torusflow.cone import OperatorSpec, index_sets
from torusflow.errors import ConfigError, InadmissiblePointError
from torusflow.flow import (
    DataSpec,
    FlowConfig,
    assemble_g_form,
    cfl_step,
    evaluate,
    flow_rhs,
    initial_state,
    linearization_defect,
    linearized_coefficients,
    run_flow,
    step,
)
from torusflow.torus import ScalarField, TorusGrid, integrate_mean

TWO_PI = 2 * math.pi


def make_cfg(n=1, K=1, res=16, k=1, X_c=0.0, psi=0.0, phi0=None, X_kind=None, **kw):
    grid = TorusGrid(n, (res,) * 2 + (1,) * (2 * n - 2)) if isinstance(res, int) else TorusGrid(n, res)
    ls = index_sets(n, K)
    op = OperatorSpec(ls, "sigma_k_root", k=k, cone_order=0 if k == 1 else None)
    kind = X_kind or ("scaled_identity" if X_c else "zero")
    data = DataSpec(X_kind=kind, X_c=X_c, psi_kind="constant", psi_value=psi)
    phi = ScalarField.from_function(grid, phi0) if phi0 is not None else ScalarField(grid, np.zeros(grid.shape))
    return FlowConfig(ls, op, data, grid, phi, **kw)


def sin_x(a=0.1):
    return lambda *c: a * np.sin(TWO_PI * c[0])


def test_assemble_g_form():
    cfg = make_cfg(X_c=2.0, phi0=sin_x(0.3))
    g = assemble_g_form(cfg.phi0, cfg.data).values[..., 0, 0]
    x = cfg.grid.coordinates()[0]
    assert np.allclose(g.real, (2.0 - math.pi**2 * 0.3 * np.sin(TWO_PI * x)) * np.ones(cfg.grid.shape))
    zero = assemble_g_form(ScalarField(cfg.grid, np.zeros(cfg.grid.shape)), cfg.data).values
    assert np.allclose(zero[..., 0, 0], 2.0)


def test_flow_rhs_linear_example():
    cfg = make_cfg(X_c=1.0, psi=1.0, phi0=sin_x(0.1))
    rhs, margin = flow_rhs(cfg.phi0, cfg)
    x = cfg.grid.coordinates()[0]
    assert margin == 1.0
    assert np.allclose(rhs.values, -(math.pi**2) * 0.1 * np.sin(TWO_PI * x) * np.ones(cfg.grid.shape), atol=1e-12)


def test_flow_rhs_sigma2_constant_state():
    # g = c I with n = 3, K = 2: Lambda = (2c, 2c, 2c), sqrt(sigma_2) = 2c sqrt(3)
    cfg = make_cfg(n=3, K=2, res=(4, 4, 1, 1, 1, 1), k=2, X_c=1.0, psi=0.5)
    rhs, _ = flow_rhs(cfg.phi0, cfg)
    assert np.allclose(rhs.values, 2 * math.sqrt(3) - 0.5)


def test_inadmissible_initial_data_is_rejected():
    with pytest.raises(InadmissiblePointError):
        make_cfg(n=3, K=2, res=(8, 8, 1, 1, 1, 1), k=2, X_c=0.01, phi0=sin_x(1.0))


def test_config_validation():
    with pytest.raises(ConfigError):
        make_cfg(c_cfl=1.5)
    with pytest.raises(ConfigError):
        make_cfg(integrator="leapfrog")
    with pytest.raises(ConfigError):
        make_cfg(alpha_harnack=2.5)


def test_heat_mode_decays_at_exact_rate():
    # d_t phi = 1/4 phi_xx, so a sin(2 pi x) decays like exp(-pi^2 t)
    cfg = make_cfg(phi0=sin_x(0.1), integrator="rk4", c_cfl=0.5, t_max=0.2, tol_osc=0.0, sample_interval=0.1)
    res = run_flow(cfg)
    assert res.termination == "t_max_reached"
    final = res.snapshots[-1]
    assert final.t == pytest.approx(0.2, abs=1e-14)
    expected = 0.1 * math.exp(-(math.pi**2) * 0.2) * np.sin(TWO_PI * cfg.grid.coordinates()[0])
    assert np.allclose(final.phi, expected * np.ones(cfg.grid.shape), atol=1e-9)


def test_euler_first_order():
    errs = []
    for c in (0.5, 0.25):
        cfg = make_cfg(phi0=sin_x(0.1), integrator="euler", c_cfl=c, t_max=0.1, tol_osc=0.0, sample_interval=0.1)
        phi = run_flow(cfg).snapshots[-1].phi
        exact = 0.1 * math.exp(-(math.pi**2) * 0.1) * np.sin(TWO_PI * cfg.grid.coordinates()[0])
        errs.append(np.abs(phi - exact).max())
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)


def test_samples_land_on_exact_times():
    cfg = make_cfg(phi0=sin_x(), integrator="euler", t_max=0.1, tol_osc=0.0, sample_interval=0.025)
    res = run_flow(cfg)
    assert [s.t for s in res.snapshots] == [m * 0.025 for m in range(5)]
    assert len(res.records) == 5


def test_cfl_step_formula():
    cfg = make_cfg(phi0=sin_x(), c_cfl=0.5)
    st0 = initial_state(cfg)
    assert cfl_step(st0, cfg) == pytest.approx(0.5 * (1 / 16) ** 2 / (math.pi**2 * st0.mu_hat))
    nxt = step(st0, cfg, t_target=1e-6)
    assert nxt.t == 1e-6


def test_tolerance_zero_runs_to_t_max():
    cfg = make_cfg(phi0=sin_x(), integrator="euler", t_max=0.05, tol_osc=0.0, sample_interval=0.05)
    res = run_flow(cfg)
    assert res.termination == "t_max_reached" and res.final_state.t == pytest.approx(0.05)


def test_convergence_detected():
    cfg = make_cfg(res=8, phi0=sin_x(0.01), integrator="euler", t_max=5.0, tol_osc=1e-3, sample_interval=0.05)
    res = run_flow(cfg)
    assert res.termination == "converged" and res.final_state.t < 5.0


def test_mass_bookkeeping():
    # d/dt mean(phi) = mean(phi_t); here f - psi has mean X_c - psi = 0.5
    cfg = make_cfg(X_c=1.0, psi=0.5, phi0=sin_x(), integrator="rk4", t_max=0.1, tol_osc=0.0, sample_interval=0.05)
    res = run_flow(cfg)
    for s in res.snapshots:
        assert integrate_mean(ScalarField(cfg.grid, s.phi)) == pytest.approx(0.5 * s.t, abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(-5, 5))
def test_constant_shift_leaves_rhs_unchanged(c):
    cfg = make_cfg(n=2, K=1, res=(8, 8, 8, 1), k=2, X_c=1.0, psi=1.0, phi0=lambda *x: 0.01 * np.cos(TWO_PI * (x[0] + x[2])))
    base = evaluate(np.asarray(cfg.phi0.values), cfg).rhs
    shifted = evaluate(np.asarray(cfg.phi0.values) + c, cfg).rhs
    assert np.allclose(base, shifted, atol=1e-13)


@pytest.mark.parametrize("X_kind", ["scaled_identity", "gradient_coupled"])
def test_linearization_matches_difference_quotient(X_kind, rng):
    cfg = make_cfg(
        n=2, K=1, res=(8, 8, 8, 8), k=2, X_c=1.0, psi=1.0, X_kind=X_kind,
        phi0=lambda *x: 0.02 * np.cos(TWO_PI * (x[0] + x[3])) + 0.01 * np.sin(TWO_PI * x[1]),
    )
    st0 = initial_state(cfg)
    x = np.broadcast_arrays(*cfg.grid.coordinates())
    v = np.cos(TWO_PI * (x[0] - x[2])) + 0.3 * np.sin(TWO_PI * x[3])
    assert linearization_defect(st0, cfg, v) < 1e-7
    assert linearization_defect(st0, cfg, v, eps=1e-6, central=False) < 1e-4


def test_linearized_coefficients_of_linear_flow():
    cfg = make_cfg(n=2, K=1, res=(4, 4, 4, 4), k=1, phi0=sin_x())
    co = linearized_coefficients(initial_state(cfg), cfg)
    assert np.allclose(co.G.values, np.eye(2))
    assert np.all(co.chi == 0) and np.all(co.chi0.values == 0)


def test_phi_dependence_adds_zero_order_term():
    cfg = make_cfg(phi0=sin_x())
    cfg2 = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, psi_slope=0.7))
    co = linearized_coefficients(initial_state(cfg2), cfg2)
    assert np.allclose(co.chi0.values, -0.7)
    assert cfg2.data.phi_dependence and not cfg.data.phi_dependence


def test_step_halves_on_inadmissible_stage(monkeypatch):
    import torusflow.flow as flow_mod
    from torusflow.errors import FlowBreakdownError

    cfg = make_cfg(phi0=sin_x())
    st0 = initial_state(cfg)
    dt0 = cfl_step(st0, cfg)
    original = flow_mod._advance

    def picky(values, k1, dt, cfg):
        if dt > dt0 / 3:
            raise InadmissiblePointError("stage left the cone", margins=np.array([-1.0]))
        return original(values, k1, dt, cfg)

    monkeypatch.setattr(flow_mod, "_advance", picky)
    nxt = step(st0, cfg)
    assert nxt.dt_last == dt0 / 4 and nxt.t == dt0 / 4

    def never(values, k1, dt, cfg):
        raise InadmissiblePointError("always outside", margins=np.array([-2.0]))

    monkeypatch.setattr(flow_mod, "_advance", never)
    with pytest.raises(FlowBreakdownError) as info:
        step(st0, cfg)
    assert len(info.value.margin_history) == flow_mod.MAX_HALVINGS + 1
    assert info.value.margin_history[0] == (dt0, -2.0)
