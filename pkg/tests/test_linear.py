import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torusflow.errors import PreconditionError
from torusflow.linear import (
    CoefficientFields,
    LinearRunConfig,
    fit_li_yau_constants,
    harnack_bound,
    harnack_verify,
    li_yau_quantity,
    solve_linear,
)
from torusflow.torus import HermitianField, ScalarField, TorusGrid, gradient_array, hessian_array

TWO_PI = 2 * math.pi


def grid1(res=16):
    return TorusGrid(1, (res, res))


def bump(grid, amp=0.5):
    return ScalarField.from_function(grid, lambda x, y: 1.0 + amp * np.sin(TWO_PI * x))


def run(coeffs, u0, t_end, times, **kw):
    return solve_linear(LinearRunConfig(coeffs, u0, t_end, times, **kw))


def test_constants_are_stationary():
    g = grid1(8)
    u0 = ScalarField(g, np.ones(g.shape))
    traj = run(CoefficientFields.constant(g, 2.0), u0, 0.5, (0.0, 0.25, 0.5))
    for u in traj.u:
        assert np.allclose(u.values, 1.0, atol=1e-14)


def test_single_mode_decay():
    g = grid1()
    traj = run(CoefficientFields.constant(g, 2.0), bump(g), 0.1, (0.05, 0.1), c_cfl=0.5)
    x = g.coordinates()[0]
    for t, u in zip(traj.times, traj.u):
        exact = 1.0 + 0.5 * math.exp(-2.0 * math.pi**2 * t) * np.sin(TWO_PI * x)
        assert np.allclose(u.values, exact * np.ones(g.shape), atol=1e-9)


def test_zero_order_term_gives_exponential():
    g = grid1(4)
    u0 = ScalarField(g, np.full(g.shape, 3.0))
    traj = run(CoefficientFields.constant(g, 1.0, chi0=-1.0), u0, 1.0, (0.5, 1.0))
    assert np.allclose(traj.u[-1].values, 3.0 * math.exp(-1.0), rtol=1e-10)
    assert np.allclose(traj.u_t[-1].values, -traj.u[-1].values)


def test_drift_transports_the_mode():
    # 2 Re(chi d u) with real chi = c equals c u_x
    g = grid1()
    c = 0.3
    traj = run(CoefficientFields.constant(g, 1.0, chi=[c]), bump(g), 0.2, (0.2,), c_cfl=0.5)
    x = g.coordinates()[0]
    exact = 1.0 + 0.5 * math.exp(-(math.pi**2) * 0.2) * np.sin(TWO_PI * (x + c * 0.2))
    assert np.allclose(traj.u[-1].values, exact * np.ones(g.shape), atol=1e-8)


@pytest.mark.parametrize("res", [8, 40])  # dense real form and the FFT path
def test_apply_matches_direct_assembly(res, rng):
    g = TorusGrid(2, (res, res, res, res))
    x = np.broadcast_arrays(*g.coordinates())
    A = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    base = A @ A.conj().T + 2 * np.eye(2)
    wobble = (1 + 0.2 * np.cos(TWO_PI * x[0]) * np.sin(TWO_PI * x[3]))[..., None, None]
    G = HermitianField(g, wobble * base)
    chi = np.stack([0.3 * np.cos(TWO_PI * x[1]) + 0.1j, 0.2 - 0.4j * np.sin(TWO_PI * x[2])], axis=-1)
    chi0 = ScalarField(g, -0.5 + 0.1 * np.cos(TWO_PI * x[2]))
    co = CoefficientFields(G, chi, chi0)
    u = np.cos(TWO_PI * (x[0] + x[1])) + np.sin(TWO_PI * (x[2] - 2 * x[3])) + 0.5 * np.cos(TWO_PI * x[1] * 2)
    H = hessian_array(u, g)
    d = gradient_array(u, g)
    direct = np.einsum("...ij,...ji->...", G.values, H).real + 2 * np.sum(chi * d, axis=-1).real + chi0.values * u
    assert np.allclose(co.apply(u), direct, atol=1e-9 * np.abs(direct).max())


def test_li_yau_quantity_cases():
    g = grid1(8)
    co = CoefficientFields.constant(g, 1.0)
    one = ScalarField(g, np.ones(g.shape))
    zero = ScalarField(g, np.zeros(g.shape))
    assert np.all(li_yau_quantity(one, zero, co, 0.7, 1.5).values == 0)
    # u_t = -u everywhere: F = t * alpha
    assert np.allclose(li_yau_quantity(one, ScalarField(g, -np.ones(g.shape)), co, 0.4, 1.5).values, 0.6)
    with pytest.raises(PreconditionError):
        li_yau_quantity(zero, zero, co, 1.0, 1.5)
    with pytest.raises(PreconditionError):
        li_yau_quantity(one, zero, co, 0.0, 1.5)


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(0.05, 2.0))
def test_li_yau_is_scale_invariant(c, t):
    g = grid1(8)
    co = CoefficientFields.constant(g, 1.3, chi=[0.2j])
    u = bump(g, 0.4)
    ut = ScalarField(g, co.apply(u.values))
    F = li_yau_quantity(u, ut, co, t, 1.5).values
    Fc = li_yau_quantity(ScalarField(g, c * u.values), ScalarField(g, c * ut.values), co, t, 1.5).values
    assert np.allclose(F, Fc, rtol=1e-9, atol=1e-12)


@pytest.fixture(scope="module")
def heat_traj():
    g = grid1()
    times = tuple(np.round(np.arange(1, 21) * 0.05, 12))
    return run(CoefficientFields.constant(g, 1.0), bump(g, 0.9), 1.0, times, c_cfl=0.5)


def test_fit_envelope_bounds_every_sample(heat_traj):
    fit = fit_li_yau_constants(heat_traj, 1.5, t_min=0.05)
    assert fit.C1 >= 0 and fit.C2 >= 0
    assert np.all(fit.residuals <= 1e-12)
    assert np.all(fit.sup_values <= fit.envelope(fit.times) + 1e-12)


def test_fit_needs_enough_samples(heat_traj):
    with pytest.raises(PreconditionError):
        fit_li_yau_constants(heat_traj, 1.5, t_min=0.85)


def test_harnack_bound_formula():
    assert harnack_bound(0.5, 1.0, (0.0, 0.0, 0.0)) == 1.0
    assert harnack_bound(0.5, 1.0, (1.0, 2.0, 0.5)) == pytest.approx(4.0 * math.exp(1.0 + 0.5))


def test_harnack_verify(heat_traj):
    rep = harnack_verify(heat_traj, 0.5, 1.0)
    assert rep.satisfied and rep.ratio <= rep.bound
    assert rep.ratio == pytest.approx(heat_traj.u[9].max() / heat_traj.u[19].min())
    with pytest.raises(PreconditionError):
        harnack_verify(heat_traj, 1.0, 0.5)
    with pytest.raises(PreconditionError):
        harnack_verify(heat_traj, 0.5, 0.97)


def test_ratio_decreases_in_t2(heat_traj):
    consts = (0.1, 0.1, 0.1)
    ratios = [harnack_verify(heat_traj, 0.5, t2, constants=consts).ratio for t2 in (0.6, 0.7, 0.8, 0.9, 1.0)]
    assert all(a >= b for a, b in zip(ratios, ratios[1:]))


def test_run_config_preconditions():
    g = grid1(4)
    co = CoefficientFields.constant(g)
    with pytest.raises(PreconditionError):
        LinearRunConfig(co, ScalarField(g, np.zeros(g.shape)), 1.0, (1.0,))
    with pytest.raises(PreconditionError):
        LinearRunConfig(co, ScalarField(g, np.ones(g.shape)), 1.0, (1.0,), alpha=2.0)
    with pytest.raises(PreconditionError):
        LinearRunConfig(co, ScalarField(g, np.ones(g.shape)), 1.0, (2.0,))


def test_time_dependent_coefficients():
    # G = (1 + t) I: the mode decays like exp(-pi^2 (t + t^2/2))
    g = grid1()
    traj = run(lambda t: CoefficientFields.constant(g, 1.0 + t), bump(g), 0.2, (0.2,), c_cfl=0.5)
    x = g.coordinates()[0]
    exact = 1.0 + 0.5 * math.exp(-(math.pi**2) * (0.2 + 0.02)) * np.sin(TWO_PI * x)
    assert np.allclose(traj.u[-1].values, exact * np.ones(g.shape), atol=1e-8)
