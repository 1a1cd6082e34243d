"""Symmetric functions on Lambda-space: evaluation, gradients and cone checks.

Two operator families are supported:

* ``sigma_k_root``: f(L) = sigma_k(L)**(1/k) on the Garding cone Gamma_k;
* ``linear_weights``: f(L) = sum_i a_i L_i with a_i >= 0 on Gamma_1.

Both are positively homogeneous of degree one.  For the linear families the
admissible cone may be widened to the whole space by passing
``cone_order=0`` (Gamma_0 = {sigma_0 > 0} = R^N), which is what the plain
heat equation needs.

All functions are vectorised over leading axes: a Lambda argument of shape
``(..., N)`` gives results of shape ``(...)`` or ``(..., N)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InadmissiblePointError, InvalidStructureError, SamplerStarvationError

MAX_DIMENSION = 8
# f_grad refuses points whose smallest margin is below this times (1+|L|)^k
GRAD_GUARD = 1e-12
RAY_PARAMETERS = (1.0, 10.0, 100.0, 1000.0)
N_RAYS = 16
BLOCK = 4096


@dataclass(frozen=True)
class LambdaStructure:
    """Ordered K-subsets of {1..n}; ``index_sets`` holds 1-based tuples."""

    n: int
    K: int
    index_sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.n < 1 or self.K < 1 or self.K > self.n:
            raise InvalidStructureError(f"need 1 <= K <= n, got n={self.n}, K={self.K}")
        expected = math.comb(self.n, self.K)
        sets = self.index_sets
        if len(sets) != expected or len(set(sets)) != expected:
            raise InvalidStructureError(f"expected {expected} distinct index sets")
        for s in sets:
            if len(s) != self.K or any(a >= b for a, b in zip(s, s[1:])):
                raise InvalidStructureError(f"index set {s} is not strictly increasing of length K")
            if s[0] < 1 or s[-1] > self.n:
                raise InvalidStructureError(f"index set {s} out of range 1..{self.n}")

    @property
    def N(self) -> int:
        return len(self.index_sets)

    @cached_property
    def zero_based(self) -> np.ndarray:
        return np.array(self.index_sets, dtype=np.intp) - 1

    @cached_property
    def incidence(self) -> np.ndarray:
        """(N, n) 0/1 matrix, entry [j, p] = 1 iff p is in I_j."""
        inc = np.zeros((self.N, self.n))
        for j, s in enumerate(self.index_sets):
            inc[j, [p - 1 for p in s]] = 1.0
        return inc

    def permuted(self, order) -> "LambdaStructure":
        """Same index sets in a different order (for covariance checks)."""
        return LambdaStructure(self.n, self.K, tuple(self.index_sets[i] for i in order))


def index_sets(n: int, K: int) -> LambdaStructure:
    """All strictly increasing K-tuples of {1..n} in lexicographic order."""
    if n < 1 or n > MAX_DIMENSION or K < 1 or K > n:
        raise InvalidStructureError(f"need 1 <= K <= n <= {MAX_DIMENSION}, got n={n}, K={K}")
    combos = tuple(itertools.combinations(range(1, n + 1), K))
    return LambdaStructure(n, K, combos)


def lambda_map(lam, ls: LambdaStructure) -> np.ndarray:
    """Partial sums Lambda_I(lam) = sum_{i in I} lam_i, one per index set."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1] != ls.n:
        raise ValueError(f"eigenvalue vector has length {lam.shape[-1]}, structure expects {ls.n}")
    return lam[..., ls.zero_based].sum(axis=-1)


def elementary_symmetric(x, k: int) -> np.ndarray:
    """e_0..e_k of the last axis of ``x``; result has shape (..., k+1).

    Uses e_j(x_1..x_m) = e_j(x_1..x_{m-1}) + x_m e_{j-1}(x_1..x_{m-1}).
    """
    x = np.asarray(x, dtype=float)
    e = np.zeros(x.shape[:-1] + (k + 1,))
    e[..., 0] = 1.0
    for m in range(x.shape[-1]):
        xm = x[..., m]
        for j in range(min(m + 1, k), 0, -1):
            e[..., j] += xm * e[..., j - 1]
    return e


def omitted_symmetric(x, j: int) -> np.ndarray:
    """sigma_j(x | x_i omitted) for every i; shape (..., N)."""
    x = np.asarray(x, dtype=float)
    N = x.shape[-1]
    out = np.empty(x.shape)
    if j < 0:
        out[...] = 0.0
        return out
    for i in range(N):
        rest = np.delete(x, i, axis=-1)
        out[..., i] = elementary_symmetric(rest, j)[..., j] if j <= N - 1 else 0.0
    return out


def garding_membership(Lam, k: int):
    """Return (inside, margins) with margins[..., j-1] = sigma_j(Lam), j = 1..k."""
    Lam = np.asarray(Lam, dtype=float)
    if k < 1 or k > Lam.shape[-1]:
        raise ValueError(f"k={k} outside 1..{Lam.shape[-1]}")
    margins = elementary_symmetric(Lam, k)[..., 1:]
    inside = np.all(margins > 0, axis=-1)
    return inside, margins


@dataclass(frozen=True)
class OperatorSpec:
    """A degree-one homogeneous symmetric function f on a cone in R^N."""

    structure: LambdaStructure
    family: str = "sigma_k_root"
    k: int | None = None
    weights: tuple[float, ...] | None = None
    cone_order: int | None = None
    _m: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        N = self.structure.N
        if self.family == "sigma_k_root":
            if self.k is None or not 1 <= self.k <= N:
                raise InvalidStructureError(f"sigma_k_root needs 1 <= k <= N={N}, got k={self.k}")
            default = self.k
        elif self.family == "linear_weights":
            if self.weights is None or len(self.weights) != N:
                raise InvalidStructureError(f"linear_weights needs {N} weights")
            if any(w < 0 for w in self.weights) or not any(w > 0 for w in self.weights):
                raise InvalidStructureError("weights must be nonnegative and not all zero")
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
            default = 1
        else:
            raise InvalidStructureError(f"unknown operator family {self.family!r}")
        m = default if self.cone_order is None else self.cone_order
        if m not in (0, default):
            raise InvalidStructureError(f"cone_order must be {default} or 0, got {m}")
        if m == 0 and not self.is_linear:
            raise InvalidStructureError("the whole-space cone is only allowed for linear operators")
        object.__setattr__(self, "_m", m)

    @property
    def is_linear(self) -> bool:
        return self.family == "linear_weights" or self.k == 1

    @property
    def m(self) -> int:
        """Number of Garding margins sigma_1..sigma_m defining the cone."""
        return self._m

    @cached_property
    def weight_vector(self) -> np.ndarray:
        if self.family == "linear_weights":
            return np.array(self.weights)
        return np.ones(self.structure.N)

    def margins(self, Lam) -> np.ndarray:
        Lam = np.asarray(Lam, dtype=float)
        if self.m == 0:
            return np.zeros(Lam.shape[:-1] + (0,))
        return elementary_symmetric(Lam, self.m)[..., 1:]

    def evaluate_with_margins(self, Lam):
        """Return (f, margins, admissibility_margin) without raising."""
        Lam = np.asarray(Lam, dtype=float)
        if self.family == "linear_weights":
            f = Lam @ self.weight_vector
            margins = self.margins(Lam)
        else:
            kmax = max(self.k, self.m)
            e = elementary_symmetric(Lam, kmax)
            margins = e[..., 1 : self.m + 1]
            sk = e[..., self.k]
            if self.k == 1:
                f = sk
            else:
                with np.errstate(invalid="ignore"):
                    f = np.where(sk > 0, np.abs(sk) ** (1.0 / self.k), np.nan)
        if self.m == 0:
            adm = np.ones(Lam.shape[:-1])
        else:
            adm = margins[..., 0].copy()
            for j in range(1, self.m):
                np.minimum(adm, margins[..., j], out=adm)
        return f, margins, adm


def gradient_sum(spec: OperatorSpec, f, margins) -> np.ndarray:
    """sum_i df/dLambda_i from values already at hand.

    For sigma_k^(1/k): sum_i sigma_{k-1}(Lambda | i) = (N - k + 1) sigma_{k-1},
    so the sum is (N - k + 1)/k * sigma_{k-1} * f / sigma_k.
    """
    f = np.asarray(f, dtype=float)
    if spec.is_linear:
        return np.full(f.shape, spec.weight_vector.sum())
    k, N = spec.k, spec.structure.N
    sk = margins[..., k - 1]
    skm1 = margins[..., k - 2] if k >= 2 else np.ones_like(sk)
    return (N - k + 1) / k * skm1 * f / sk


def _raise_outside(margins, threshold, what):
    margins = np.asarray(margins)
    bad = margins <= np.broadcast_to(threshold, margins.shape)
    offending = bad.any(axis=-1)
    if not offending.any():
        return
    point = np.unravel_index(int(np.argmax(offending.ravel())), offending.shape)
    row = margins[point]
    j = int(np.argmax(bad[point])) + 1
    raise InadmissiblePointError(
        f"{what}: sigma_{j} = {row[j - 1]:.3e} at sample {tuple(int(p) for p in point)}",
        margin_index=j,
        margins=np.array(row),
        node=tuple(int(p) for p in point) or None,
    )


def f_eval(spec: OperatorSpec, Lam) -> np.ndarray:
    """f(Lam); raises InadmissiblePointError outside the cone."""
    f, margins, _ = spec.evaluate_with_margins(Lam)
    if spec.m:
        _raise_outside(margins, 0.0, "point outside the cone")
    return f


def f_grad(spec: OperatorSpec, Lam) -> np.ndarray:
    """Analytic gradient of f; refuses points at or near the cone boundary."""
    Lam = np.asarray(Lam, dtype=float)
    if spec.family == "linear_weights" or spec.k == 1:
        if spec.m:
            _raise_outside(spec.margins(Lam), 0.0, "point outside the cone")
        return np.broadcast_to(spec.weight_vector, Lam.shape).copy()
    k = spec.k
    e = elementary_symmetric(Lam, k)
    margins = e[..., 1:]
    scale = GRAD_GUARD * (1.0 + np.linalg.norm(Lam, axis=-1)) ** k
    _raise_outside(margins, scale[..., None], "gradient requested at the cone boundary")
    sk = e[..., k]
    dsk = omitted_symmetric(Lam, k - 1)
    return (1.0 / k) * (sk ** (1.0 / k - 1.0))[..., None] * dsk


def eigen_gradient_weights(grad, ls: LambdaStructure) -> np.ndarray:
    """mu_p = sum over index sets containing p of f_{Lambda_I}."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape[-1] != ls.N:
        raise ValueError(f"gradient has length {grad.shape[-1]}, expected N={ls.N}")
    return grad @ ls.incidence


def rank_for_sigma_k(N: int, k: int) -> int:
    """Rank of the tangent cone at infinity for sigma_k^(1/k) in N variables."""
    if not 1 <= k <= N:
        raise ValueError(f"need 1 <= k <= N, got N={N}, k={k}")
    return N - k + 1


def operator_rank(spec: OperatorSpec) -> int:
    if spec.family == "sigma_k_root":
        return rank_for_sigma_k(spec.structure.N, spec.k)
    # level sets of a linear function are hyperplanes with normal a/|a|
    return int(np.count_nonzero(spec.weight_vector))


def rank_condition_s02(ls: LambdaStructure, k: int):
    """(ok, required_rank, actual_rank) for the rank lower bound N(n-K)/n + 1."""
    required = ls.N * (ls.n - ls.K) / ls.n + 1.0
    actual = rank_for_sigma_k(ls.N, k)
    return actual >= required - 1e-12, required, actual


# ---------------------------------------------------------------------------
# sampling


def _block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, block]))


def sample_cone(spec: OperatorSpec, n_samples: int, seed: int, stream: int = 0) -> np.ndarray:
    """Seeded draws |Z| + 0.1 (Z standard normal), rejected outside the cone.

    Draws come in fixed blocks from counter-keyed generators, so the result
    depends only on (seed, stream, n_samples).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    N = spec.structure.N
    out = []
    have = attempts = 0
    block = 0
    while have < n_samples:
        rng = _block_rng(seed, stream, block)
        block += 1
        cand = np.abs(rng.standard_normal((BLOCK, N))) + 0.1
        attempts += BLOCK
        if spec.m:
            cand = cand[np.all(spec.margins(cand) > 0, axis=-1)]
        out.append(cand)
        have += len(cand)
        if attempts >= 10 * BLOCK and have < 1e-3 * attempts:
            raise SamplerStarvationError(f"accepted {have} of {attempts} cone candidates")
    return np.concatenate(out)[:n_samples]


def boundary_weighted(spec: OperatorSpec, base: np.ndarray, seed: int) -> np.ndarray:
    """Pull one coordinate of each sample toward the sigma_m = 0 locus.

    sigma_m is affine in each coordinate with positive slope
    sigma_{m-1}(L | L_i) inside the cone, so the root along the coordinate
    is explicit; the coordinate is moved to root + rho*(L_i - root) with
    rho log-uniform in [1e-6, 1e-1].
    """
    if spec.m == 0:
        return base[:0]
    rng = _block_rng(seed, 99, 0)
    n, N = base.shape
    i = rng.integers(0, N, n)
    rho = 10.0 ** rng.uniform(-6.0, -1.0, n)
    rows = np.arange(n)
    lower = omitted_symmetric(base, spec.m - 1)[rows, i]
    upper = omitted_symmetric(base, spec.m)[rows, i] if spec.m <= N - 1 else np.zeros(n)
    root = -upper / lower
    pts = base.copy()
    pts[rows, i] = root + rho * (base[rows, i] - root)
    keep = np.all(spec.margins(pts) > 0, axis=-1)
    return pts[keep]


# ---------------------------------------------------------------------------
# structure certification


def hessian_fd(spec: OperatorSpec, Lam, rel_step: float = 1e-3) -> np.ndarray:
    """Symmetrised fourth-order central differences of the analytic gradient.

    The step is rel_step times min(|L|, distance estimate to the boundary)
    so that stencils never leave the cone.
    """
    Lam = np.atleast_2d(np.asarray(Lam, dtype=float))
    N = Lam.shape[-1]
    scale = np.linalg.norm(Lam, axis=-1)
    if spec.m and not spec.is_linear:
        e = elementary_symmetric(Lam, spec.m)
        grad_m = omitted_symmetric(Lam, spec.m - 1)
        dist = e[..., spec.m] / np.linalg.norm(grad_m, axis=-1)
        scale = np.minimum(scale, dist)
    h = rel_step * scale
    H = np.empty(Lam.shape + (N,))
    for j in range(N):
        step = np.zeros_like(Lam)
        step[:, j] = h
        g = lambda s: f_grad(spec, Lam + s * step)  # noqa: E731
        H[:, :, j] = (8.0 * (g(1) - g(-1)) - (g(2) - g(-2))) / (12.0 * h[:, None])
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def sup_boundary_value(spec: OperatorSpec) -> float:
    """sup of f over the cone boundary."""
    if spec.m == 0:
        return -math.inf
    if spec.family == "sigma_k_root":
        # sigma_k = 0 on the boundary of Gamma_k
        return 0.0
    w = spec.weight_vector
    # on {sigma_1 = 0}, f = sum a_i L_i is unbounded unless the weights agree
    return 0.0 if np.allclose(w, w[0]) else math.inf


@dataclass(frozen=True)
class StructureReport:
    """Sampled structure certificate.

    ``max_hessian_eigenvalue`` is the largest top eigenvalue of the
    finite-difference Hessian divided by max(1, |H|), so deep-interior points
    are judged absolutely and near-boundary points relative to their
    curvature.  ``c0_s03_estimate`` is f(1000 * 1) - sup psi.
    """

    min_grad_component: float
    max_hessian_eigenvalue: float
    euler_defect: float
    C0_estimate: float
    c0_s03_estimate: float
    p4_margin: float
    p5_ray_limit_ok: bool
    samples_used: int
    seed: int

    def all_pass(self, tol_hess: float = 1e-8, tol_euler: float = 1e-10) -> bool:
        return (
            self.min_grad_component >= -1e-12
            and self.max_hessian_eigenvalue <= tol_hess
            and self.euler_defect <= tol_euler
            and self.p4_margin > 0
            and self.c0_s03_estimate > 0
            and self.p5_ray_limit_ok
        )


def check_structure(spec: OperatorSpec, psi_bounds, n_samples: int, seed: int) -> StructureReport:
    """Sampled certification of monotonicity, concavity and homogeneity."""
    psi_inf, psi_sup = psi_bounds
    base = sample_cone(spec, n_samples, seed)
    edge = boundary_weighted(spec, base[: max(1, n_samples // 2)], seed)
    pts = np.concatenate([base, edge])

    grads = []
    for chunk in np.array_split(pts, max(1, len(pts) // BLOCK)):
        grads.append(f_grad(spec, chunk))
    grad = np.concatenate(grads)
    f = f_eval(spec, pts)
    euler = np.abs(np.sum(grad * pts, axis=-1) - f)
    # smallest C0 with sum f_i L_i >= -C0 sum f_i
    c0_needed = np.maximum(0.0, -np.sum(grad * pts, axis=-1) / np.sum(grad, axis=-1))

    if spec.is_linear:
        max_eig = 0.0
    else:
        max_eig = -math.inf
        for chunk in np.array_split(pts, max(1, len(pts) // BLOCK)):
            ev = np.linalg.eigvalsh(hessian_fd(spec, chunk))
            # near the boundary |H| blows up; judge the top eigenvalue on its own scale
            rel = ev[:, -1] / np.maximum(1.0, np.abs(ev).max(axis=-1))
            max_eig = max(max_eig, float(rel.max()))

    rays = base[:N_RAYS]
    vals = np.array([f_eval(spec, t * rays) for t in RAY_PARAMETERS])
    growing = np.all(np.diff(vals, axis=0) > 0)
    linear_growth = np.allclose(vals[-1], RAY_PARAMETERS[-1] * vals[0], rtol=1e-9, atol=0.0)
    p5_ok = bool(growing and linear_growth and np.all(vals[0] > 0))

    ones = np.ones(spec.structure.N)
    f_far = float(f_eval(spec, RAY_PARAMETERS[-1] * ones))

    return StructureReport(
        min_grad_component=float(grad.min()),
        max_hessian_eigenvalue=float(max_eig),
        euler_defect=float(euler.max()),
        C0_estimate=float(c0_needed.max()),
        c0_s03_estimate=f_far - psi_sup,
        p4_margin=psi_inf - sup_boundary_value(spec),
        p5_ray_limit_ok=p5_ok,
        samples_used=int(len(pts)),
        seed=int(seed),
    )


@dataclass(frozen=True)
class GradientRatioEstimate:
    c0: float
    rank: int
    used: int
    skipped: int


def lemma3_empirical_c0(spec: OperatorSpec, sigma: float, n_samples: int, seed: int) -> GradientRatioEstimate:
    """Minimum over level-set samples of (sum of N-r+1 smallest f_i) / (sum f_i).

    Level-set points are sigma * L / f(L) for sampled cone directions L,
    which lie on {f = sigma} by homogeneity.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    base = sample_cone(spec, n_samples, seed, stream=1)
    edge = boundary_weighted(spec, base[: max(1, n_samples // 2)], seed + 1)
    pts = np.concatenate([base, edge])
    fv, _, _ = spec.evaluate_with_margins(pts)
    good = np.isfinite(fv) & (fv > 0)
    pts = sigma * pts[good] / fv[good][:, None]
    r = operator_rank(spec)
    take = spec.structure.N - r + 1
    ratios = []
    skipped = int(np.count_nonzero(~good))
    for chunk in np.array_split(pts, max(1, len(pts) // BLOCK)):
        try:
            g = f_grad(spec, chunk)
        except InadmissiblePointError:
            # fall back to per-point evaluation to skip only offenders
            rows = []
            for p in chunk:
                try:
                    rows.append(f_grad(spec, p))
                except InadmissiblePointError:
                    skipped += 1
            if not rows:
                continue
            g = np.array(rows)
        gs = np.sort(g, axis=-1)
        ratios.append(gs[:, :take].sum(axis=-1) / gs.sum(axis=-1))
    if not ratios:
        raise SamplerStarvationError("every level-set sample was inadmissible")
    ratios = np.concatenate(ratios)
    return GradientRatioEstimate(float(ratios.min()), r, int(len(ratios)), skipped)
