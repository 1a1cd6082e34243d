import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torusflow.cone import (
    OperatorSpec,
    boundary_weighted,
    check_structure,
    eigen_gradient_weights,
    elementary_symmetric,
    f_eval,
    f_grad,
    garding_membership,
    gradient_sum,
    index_sets,
    lambda_map,
    lemma3_empirical_c0,
    rank_condition_s02,
    rank_for_sigma_k,
    sample_cone,
)
from torusflow.errors import InadmissiblePointError, InvalidStructureError


def sigma(k, N=3, n=3, K=2):
    ls = index_sets(n, K)
    assert ls.N == N
    return OperatorSpec(ls, "sigma_k_root", k=k)


def test_index_sets_examples():
    assert index_sets(3, 2).index_sets == ((1, 2), (1, 3), (2, 3))
    assert index_sets(2, 1).index_sets == ((1,), (2,))
    ls = index_sets(4, 2)
    assert ls.N == 6 and ls.index_sets[0] == (1, 2) and ls.index_sets[-1] == (3, 4)


@pytest.mark.parametrize("n,K", [(0, 1), (2, 3), (9, 2), (3, 0)])
def test_index_sets_invalid(n, K):
    with pytest.raises(InvalidStructureError):
        index_sets(n, K)


@pytest.mark.parametrize("n,K", [(n, K) for n in range(1, 7) for K in range(1, n + 1)])
def test_index_set_incidence(n, K):
    ls = index_sets(n, K)
    assert ls.N == math.comb(n, K)
    assert list(ls.index_sets) == sorted(ls.index_sets)
    counts = ls.incidence.sum(axis=0)
    assert np.all(counts == math.comb(n - 1, K - 1))


def test_lambda_map_examples():
    assert lambda_map([1, 2, 3], index_sets(3, 2)).tolist() == [3, 4, 5]
    assert lambda_map([0.3, -2.0], index_sets(2, 1)).tolist() == [0.3, -2.0]
    assert lambda_map([1, 1, 1], index_sets(3, 3)).tolist() == [3]
    with pytest.raises(ValueError):
        lambda_map([1, 2], index_sets(3, 2))


@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.floats(-3, 3))
def test_lambda_map_linear(a, b, c):
    ls = index_sets(4, 2)
    lhs = lambda_map(np.array(a) + c * np.array(b), ls)
    rhs = lambda_map(a, ls) + c * lambda_map(b, ls)
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_garding_examples():
    inside, m = garding_membership([1, 1, 1], 2)
    assert inside and m.tolist() == [3, 3]
    inside, m = garding_membership([3, 1, -1], 2)
    assert not inside and m.tolist() == [3, -1]
    inside, m = garding_membership([2, 2, -1], 1)
    assert inside and m.tolist() == [3]


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_elementary_symmetric_matches_brute_force(x):
    e = elementary_symmetric(x, len(x))
    for j in range(len(x) + 1):
        brute = sum(math.prod(c) for c in itertools.combinations(x, j))
        assert e[j] == pytest.approx(brute, rel=1e-9, abs=1e-9)


def test_f_eval_examples():
    lin = OperatorSpec(index_sets(3, 2), "sigma_k_root", k=1)
    assert f_eval(lin, [1, 2, 3]) == pytest.approx(6.0)
    assert f_eval(sigma(2), [1, 1, 1]) == pytest.approx(math.sqrt(3))
    assert f_eval(sigma(3), [1, 2, 3]) == pytest.approx(6 ** (1 / 3))


def test_f_eval_outside_reports_margin():
    with pytest.raises(InadmissiblePointError) as info:
        f_eval(sigma(2), [3, 1, -1])
    assert info.value.margin_index == 2


def test_f_grad_examples():
    lin = OperatorSpec(index_sets(3, 2), "sigma_k_root", k=1)
    assert f_grad(lin, [1, -0.5, 2]).tolist() == [1, 1, 1]
    assert np.allclose(f_grad(sigma(2), [1, 1, 1]), 1 / math.sqrt(3))
    w = OperatorSpec(index_sets(3, 2), "linear_weights", weights=(2, 0, 1))
    assert f_grad(w, [5, 1, 3]).tolist() == [2, 0, 1]


def test_f_grad_refuses_boundary():
    with pytest.raises(InadmissiblePointError):
        f_grad(sigma(2), [1.0, 1.0, -0.5])  # sigma_2 = 0


@pytest.mark.parametrize("k", [1, 2, 3])
def test_f_grad_matches_central_differences(k):
    op = sigma(k)
    pts = sample_cone(op, 200, seed=3)
    g = f_grad(op, pts)
    for j in range(3):
        h = 1e-5 * np.linalg.norm(pts, axis=-1)
        e = np.zeros(3)
        e[j] = 1
        fd = (f_eval(op, pts + h[:, None] * e) - f_eval(op, pts - h[:, None] * e)) / (2 * h)
        assert np.allclose(g[:, j], fd, rtol=1e-6, atol=1e-9)


def test_gradient_sum_closed_form():
    for k in (1, 2, 3):
        op = sigma(k)
        pts = sample_cone(op, 100, seed=5)
        f, margins, _ = op.evaluate_with_margins(pts)
        assert np.allclose(gradient_sum(op, f, margins), f_grad(op, pts).sum(axis=-1), rtol=1e-12)


def test_eigen_gradient_weights_examples():
    ls = index_sets(3, 2)
    assert eigen_gradient_weights([1, 1, 1], ls).tolist() == [2, 2, 2]
    g = np.array([0.3, 0.5, 0.7])
    assert np.allclose(eigen_gradient_weights(g, ls), [0.8, 1.0, 1.2])
    assert eigen_gradient_weights([4.0, 5.0], index_sets(2, 1)).tolist() == [4, 5]


def test_eigen_gradient_weights_finite_difference():
    # d/d lam_p of f(Lambda(lam)) at a diagonal matrix equals mu_p
    op = sigma(2)
    lam = np.array([1.3, 0.7, 0.4])
    mu = eigen_gradient_weights(f_grad(op, lambda_map(lam, op.structure)), op.structure)
    for p in range(3):
        e = np.zeros(3)
        e[p] = 1e-6
        fd = (f_eval(op, lambda_map(lam + e, op.structure)) - f_eval(op, lambda_map(lam - e, op.structure))) / 2e-6
        assert fd == pytest.approx(mu[p], rel=1e-7)


@given(st.lists(st.floats(0.01, 5), min_size=6, max_size=6))
def test_eigen_gradient_weights_sum(grad):
    ls = index_sets(4, 2)
    mu = eigen_gradient_weights(grad, ls)
    assert mu.sum() == pytest.approx(ls.K * sum(grad), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 3]))
def test_homogeneity_and_symmetry(seed, k):
    op = sigma(k)
    pts = sample_cone(op, 20, seed)
    f = f_eval(op, pts)
    for t in (0.5, 2.0, 10.0):
        assert np.all(np.abs(f_eval(op, t * pts) - t * f) <= 1e-10 * (1 + np.abs(f)))
    rng = np.random.default_rng(seed)
    for _ in range(20):
        perm = rng.permutation(3)
        assert np.allclose(f_eval(op, pts[:, perm]), f, rtol=1e-13)


def test_order_covariance():
    # permuting the index-set order permutes Lambda and leaves f(Lambda(lam)) unchanged
    ls = index_sets(4, 2)
    op = OperatorSpec(ls, "sigma_k_root", k=3)
    rng = np.random.default_rng(0)
    lam = np.abs(rng.normal(size=(50, 4))) + 0.2
    perm = rng.permutation(ls.N)
    other = OperatorSpec(ls.permuted(perm), "sigma_k_root", k=3)
    assert np.allclose(f_eval(op, lambda_map(lam, ls)), f_eval(other, lambda_map(lam, other.structure)), rtol=1e-13)


def test_rank_examples():
    assert rank_for_sigma_k(3, 2) == 2
    assert rank_for_sigma_k(7, 1) == 7
    assert rank_for_sigma_k(5, 5) == 1


def test_rank_condition_examples():
    assert rank_condition_s02(index_sets(3, 2), 2) == (True, 2.0, 2)
    assert rank_condition_s02(index_sets(2, 1), 2) == (False, 2.0, 1)
    assert rank_condition_s02(index_sets(2, 2), 1) == (True, 1.0, 1)


def test_structure_linear_family():
    op = OperatorSpec(index_sets(3, 2), "sigma_k_root", k=1)
    rep = check_structure(op, (1.0, 2.0), 2000, 1)
    assert rep.max_hessian_eigenvalue == 0.0 and rep.C0_estimate == 0.0
    assert rep.all_pass()


def test_structure_sigma2():
    rep = check_structure(sigma(2), (1.0, 2.0), 10000, 2)
    assert rep.max_hessian_eigenvalue <= 1e-8
    assert rep.euler_defect <= 1e-10
    assert rep.p4_margin == 1.0
    assert rep.samples_used > 10000  # boundary-weighted second pass included
    assert rep.all_pass()


def test_structure_report_is_deterministic():
    a = check_structure(sigma(2), (1.0, 2.0), 3000, 11)
    b = check_structure(sigma(2), (1.0, 2.0), 3000, 11)
    assert a == b


def test_sampler_is_seeded_and_inside():
    op = sigma(3)
    a = sample_cone(op, 5000, 9)
    assert np.array_equal(a, sample_cone(op, 5000, 9))
    assert np.all(garding_membership(a, 3)[0])
    assert not np.array_equal(a, sample_cone(op, 5000, 10))


def test_boundary_weighted_points_approach_boundary():
    op = sigma(2)
    base = sample_cone(op, 2000, 4)
    pts = boundary_weighted(op, base, 4)
    m = garding_membership(pts, 2)[1][:, 1]
    assert np.all(m > 0) and m.min() < 1e-4


def test_ratio_linear_is_one_over_n():
    op = OperatorSpec(index_sets(4, 2), "sigma_k_root", k=1)
    est = lemma3_empirical_c0(op, 1.0, 500, 0)
    assert est.c0 == pytest.approx(1 / 6, rel=1e-12)


def test_ratio_sigma2_positive_and_bounded_near_boundary():
    op = sigma(2)
    est = lemma3_empirical_c0(op, 1.0, 20000, 12345)
    assert est.c0 > 0 and est.rank == 2 and est.skipped == 0
    # the boundary-weighted pass is part of the sample set
    assert est.used > 20000
    near = boundary_weighted(op, sample_cone(op, 2000, 77), 77)
    g = f_grad(op, near)
    ratio = np.sort(g, axis=-1)[:, :2].sum(axis=-1) / g.sum(axis=-1)
    assert ratio.min() >= est.c0 - 1e-3


def test_cone_order_zero_only_for_linear():
    with pytest.raises(InvalidStructureError):
        OperatorSpec(index_sets(3, 2), "sigma_k_root", k=2, cone_order=0)
    OperatorSpec(index_sets(3, 2), "linear_weights", weights=(1, 1, 1), cone_order=0)
