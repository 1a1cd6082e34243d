"""Periodic grids on the flat complex torus and fields living on them.

Real axes are ordered x_1, y_1, ..., x_n, y_n with z_i = x_i + i y_i, and the
flat metric is g_{i jbar} = delta_ij.  With d_i = (d_x - i d_y)/2,

    d_i dbar_j = 1/4 [(d_xi d_xj + d_yi d_yj) + i (d_xi d_yj - d_yi d_xj)],

so the complex Hessian of a real function is Hermitian and its trace is one
quarter of the real Laplacian.  An axis of resolution 1 is "frozen": fields
are constant along it and its derivatives vanish.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numba
import numpy as np
import scipy.fft

from .errors import NumericalError

WORKERS = max(1, int(os.environ.get("TORUSFLOW_THREADS", "1")))
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
HERMITIAN_TOL = 1e-12
# axes up to this resolution are differentiated with dense spectral matrices
DENSE_MAX = 32


@dataclass(frozen=True)
class TorusGrid:
    n: int
    resolutions: tuple[int, ...]
    periods: tuple[float, ...] | None = None

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolutions)
        if self.n < 1 or len(res) != 2 * self.n:
            raise ValueError(f"need 2n = {2 * self.n} resolutions, got {len(res)}")
        if any(r < 1 for r in res):
            raise ValueError("resolutions must be >= 1")
        periods = (1.0,) * len(res) if self.periods is None else tuple(float(p) for p in self.periods)
        if len(periods) != len(res) or any(p <= 0 for p in periods):
            raise ValueError("need 2n positive periods")
        object.__setattr__(self, "resolutions", res)
        object.__setattr__(self, "periods", periods)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolutions

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(p / r for p, r in zip(self.periods, self.resolutions))

    @property
    def total_nodes(self) -> int:
        return math.prod(self.resolutions)

    @cached_property
    def active_axes(self) -> tuple[int, ...]:
        return tuple(a for a, r in enumerate(self.resolutions) if r > 1)

    @cached_property
    def h_min(self) -> float:
        active = self.active_axes
        if not active:
            return min(self.periods)
        return min(self.spacings[a] for a in active)

    @property
    def diameter(self) -> float:
        """Half the diagonal of the period box."""
        return 0.5 * math.sqrt(sum(p * p for p in self.periods))

    @property
    def active_diameter(self) -> float:
        """Diameter of the torus spanned by the active axes (fields are constant along the rest)."""
        return 0.5 * math.sqrt(sum(self.periods[a] ** 2 for a in self.active_axes))

    @property
    def axis_names(self) -> tuple[str, ...]:
        return tuple(f"{c}{i + 1}" for i in range(self.n) for c in "xy")

    def coordinates(self) -> list[np.ndarray]:
        """Node coordinates per real axis, each broadcastable to ``shape``."""
        out = []
        for a, (r, h) in enumerate(zip(self.resolutions, self.spacings)):
            sh = [1] * len(self.resolutions)
            sh[a] = r
            out.append((np.arange(r) * h).reshape(sh))
        return out

    def frozen(self, axis: int) -> "TorusGrid":
        res = list(self.resolutions)
        res[axis] = 1
        return TorusGrid(self.n, tuple(res), self.periods)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def all_finite(v: np.ndarray) -> bool:
    """True when every entry is finite; a finite sum settles it without a mask."""
    if math.isfinite(abs(complex(np.sum(v)))):
        return True
    return bool(np.all(np.isfinite(v)))


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        v = np.broadcast_to(v, self.grid.shape) if v.shape != self.grid.shape else v
        if not all_finite(v):
            raise ValueError("scalar field has non-finite values")
        object.__setattr__(self, "values", _readonly(np.array(v, dtype=v.dtype if np.iscomplexobj(v) else float)))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "ScalarField":
        coords = grid.coordinates()
        return cls(grid, np.broadcast_to(fn(*coords), grid.shape))

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)


@dataclass(frozen=True, eq=False)
class HermitianField:
    """n x n Hermitian matrix per node, symmetrised on construction."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        n = self.grid.n
        if v.shape != self.grid.shape + (n, n):
            raise ValueError(f"expected shape {self.grid.shape + (n, n)}, got {v.shape}")
        v = 0.5 * (v + np.conj(np.swapaxes(v, -1, -2)))
        object.__setattr__(self, "values", _readonly(v))

    @classmethod
    def scaled_identity(cls, grid: TorusGrid, c: float) -> "HermitianField":
        eye = np.broadcast_to(c * np.eye(grid.n, dtype=complex), grid.shape + (grid.n, grid.n))
        return cls(grid, eye)

    def __add__(self, other: "HermitianField") -> "HermitianField":
        return HermitianField(self.grid, self.values + other.values)

    def trace(self) -> ScalarField:
        return ScalarField(self.grid, np.trace(self.values, axis1=-2, axis2=-1).real)


@dataclass(frozen=True, eq=False)
class EigenField:
    """Per-node eigenvalues (descending) and unitary frames, H = U diag(l) U^H."""

    grid: TorusGrid
    eigenvalues: np.ndarray
    vectors: np.ndarray

    def reconstruct(self, weights=None) -> np.ndarray:
        """U diag(w) U^H per node, with w = eigenvalues by default."""
        w = self.eigenvalues if weights is None else np.asarray(weights)
        U = self.vectors
        return np.einsum("...ip,...p,...jp->...ij", U, w, np.conj(U))


# ---------------------------------------------------------------------------
# derivatives


class _Spectral:
    """Fourier symbols on the rfftn half-spectrum over the active axes."""

    def __init__(self, grid: TorusGrid):
        self.grid = grid
        self.axes = grid.active_axes
        ndim = len(grid.shape)
        self.k = {}
        self.k_nyq_free = {}
        for pos, a in enumerate(self.axes):
            r, L = grid.resolutions[a], grid.periods[a]
            last = pos == len(self.axes) - 1
            freq = scipy.fft.rfftfreq(r, d=1.0 / r) if last else scipy.fft.fftfreq(r, d=1.0 / r)
            k = 2.0 * np.pi * freq / L
            k1 = k.copy()
            if r % 2 == 0:
                # the Nyquist mode has no odd derivative on the grid
                k1[np.isclose(np.abs(freq), r / 2)] = 0.0
            sh = [1] * ndim
            sh[a] = len(k)
            self.k[a] = k.reshape(sh)
            self.k_nyq_free[a] = k1.reshape(sh)
        self.dense = all(grid.resolutions[a] <= DENSE_MAX for a in self.axes)
        self.D1, self.D2 = {}, {}
        if self.dense:
            for a in self.axes:
                r, L = grid.resolutions[a], grid.periods[a]
                freq = scipy.fft.rfftfreq(r, d=1.0 / r)
                k = 2.0 * np.pi * freq / L
                k1 = np.where(np.isclose(freq, r / 2), 0.0, k) if r % 2 == 0 else k
                eye_hat = scipy.fft.rfft(np.eye(r), axis=0)
                self.D1[a] = scipy.fft.irfft(1j * k1[:, None] * eye_hat, n=r, axis=0)
                self.D2[a] = scipy.fft.irfft(-(k**2)[:, None] * eye_hat, n=r, axis=0)

    def forward(self, values: np.ndarray) -> np.ndarray:
        return scipy.fft.rfftn(values, axes=self.axes, workers=WORKERS)

    def inverse(self, hat: np.ndarray) -> np.ndarray:
        s = [self.grid.shape[a] for a in self.axes]
        return scipy.fft.irfftn(hat, s=s, axes=self.axes, workers=WORKERS)

    def apply(self, values: np.ndarray, a: int, mat: np.ndarray) -> np.ndarray:
        """Multiply along axis ``a`` by a dense (r, r) matrix."""
        sh = values.shape
        pre = math.prod(sh[:a])
        post = math.prod(sh[a + 1 :])
        if post == 1:
            return (values.reshape(pre, sh[a]) @ mat.T).reshape(sh)
        return (mat @ values.reshape(pre, sh[a], post)).reshape(sh)

    def d1(self, a):
        """Symbol of d/dx_a divided by i (real, odd)."""
        return self.k_nyq_free.get(a)

    def d2(self, a, b):
        """Real symbol of d_a d_b, or None for a frozen axis."""
        if a not in self.k or b not in self.k:
            return None
        if a == b:
            return -self.k[a] ** 2
        return -self.k_nyq_free[a] * self.k_nyq_free[b]


@lru_cache(maxsize=16)
def _spectral(grid: TorusGrid) -> _Spectral:
    return _Spectral(grid)


def prepare_hat(values: np.ndarray, grid: "TorusGrid", method: str = "spectral"):
    """Forward transform to share between derivative calls, or None if not needed."""
    if method != "spectral":
        return None
    sp = _spectral(grid)
    return None if sp.dense else sp.forward(values)


@lru_cache(maxsize=64)
def dense_operators(grid: TorusGrid, method: str = "spectral"):
    """(apply, D1, D2) for dense spectral differentiation on ``grid``, or None.

    ``apply(values, axis, mat)`` multiplies along one axis; D1 and D2 map
    active axes to the first and second derivative matrices.
    """
    if method != "spectral":
        return None
    sp = _spectral(grid)
    if not sp.dense:
        return None
    return sp.apply, sp.D1, sp.D2


@lru_cache(maxsize=64)
def _hessian_symbols(grid: TorusGrid):
    """Per-entry real symbols: diag (i, sym), off-diag (i, j, re_sym, im_sym)."""
    sp = _spectral(grid)

    def comb(*terms):
        acc = None
        for sign, a, b in terms:
            s = sp.d2(a, b)
            if s is None:
                continue
            acc = sign * s if acc is None else acc + sign * s
        return None if acc is None else 0.25 * acc

    diag, off = [], []
    for i in range(grid.n):
        xi, yi = 2 * i, 2 * i + 1
        diag.append((i, comb((1, xi, xi), (1, yi, yi))))
        for j in range(i + 1, grid.n):
            xj, yj = 2 * j, 2 * j + 1
            re = comb((1, xi, xj), (1, yi, yj))
            im = comb((1, xi, yj), (-1, yi, xj))
            off.append((i, j, re, im))
    return diag, off


def _fd1(v: np.ndarray, a: int, h: float) -> np.ndarray:
    return (8.0 * (np.roll(v, -1, a) - np.roll(v, 1, a)) - (np.roll(v, -2, a) - np.roll(v, 2, a))) / (12.0 * h)


def _fd2(v: np.ndarray, a: int, h: float) -> np.ndarray:
    return (
        16.0 * (np.roll(v, -1, a) + np.roll(v, 1, a)) - (np.roll(v, -2, a) + np.roll(v, 2, a)) - 30.0 * v
    ) / (12.0 * h * h)


def partial_derivative(values: np.ndarray, grid: TorusGrid, a: int, b: int | None = None, method="spectral"):
    """Real derivative d_a (or d_a d_b) of a real array on ``grid``."""
    if grid.resolutions[a] == 1 or (b is not None and grid.resolutions[b] == 1):
        return np.zeros(grid.shape)
    if method == "spectral":
        sp = _spectral(grid)
        if sp.dense:
            if b is None:
                return sp.apply(values, a, sp.D1[a])
            if a == b:
                return sp.apply(values, a, sp.D2[a])
            return sp.apply(sp.apply(values, a, sp.D1[a]), b, sp.D1[b])
        hat = sp.forward(values)
        if b is None:
            return sp.inverse(1j * sp.d1(a) * hat)
        return sp.inverse(sp.d2(a, b) * hat)
    if method == "central4":
        h = grid.spacings
        if b is None:
            return _fd1(values, a, h[a])
        if a == b:
            return _fd2(values, a, h[a])
        return _fd1(_fd1(values, a, h[a]), b, h[b])
    raise ValueError(f"unknown derivative method {method!r}")


def _check_real_finite(values):
    if np.iscomplexobj(values):
        raise ValueError("derivatives are defined for real fields only")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite input to derivative")


def hessian_array(values: np.ndarray, grid: TorusGrid, method="spectral", hat=None) -> np.ndarray:
    """Complex Hessian d_i dbar_j of a real array; shape grid.shape + (n, n)."""
    n = grid.n
    out = np.zeros(grid.shape + (n, n), dtype=complex)
    if method == "spectral" and _spectral(grid).dense:
        return _dense_hessian(values, grid, out)
    if method == "spectral":
        sp = _spectral(grid)
        if hat is None:
            hat = sp.forward(values)
        diag, off = _hessian_symbols(grid)
        for i, sym in diag:
            if sym is not None:
                out[..., i, i] = sp.inverse(sym * hat)
        for i, j, re, im in off:
            if re is not None:
                out[..., i, j] += sp.inverse(re * hat)
            if im is not None:
                out[..., i, j] += 1j * sp.inverse(im * hat)
            out[..., j, i] = np.conj(out[..., i, j])
        return out
    d = lambda a, b: partial_derivative(values, grid, a, b, method)  # noqa: E731
    for i in range(n):
        xi, yi = 2 * i, 2 * i + 1
        out[..., i, i] = 0.25 * (d(xi, xi) + d(yi, yi))
        for j in range(i + 1, n):
            xj, yj = 2 * j, 2 * j + 1
            out[..., i, j] = 0.25 * ((d(xi, xj) + d(yi, yj)) + 1j * (d(xi, yj) - d(yi, xj)))
            out[..., j, i] = np.conj(out[..., i, j])
    return out


def _dense_hessian(values, grid, out):
    sp = _spectral(grid)
    first = {a: sp.apply(values, a, sp.D1[a]) for a in sp.axes}

    def mixed(a, b):
        if a not in first or b not in first:
            return None
        return sp.apply(first[a], b, sp.D1[b])

    def acc(*terms):
        total = None
        for sign, term in terms:
            if term is not None:
                total = sign * term if total is None else total + sign * term
        return total

    for i in range(grid.n):
        xi, yi = 2 * i, 2 * i + 1
        d = acc(*[(1, sp.apply(values, a, sp.D2[a])) for a in (xi, yi) if a in first])
        if d is not None:
            out[..., i, i] = 0.25 * d
        for j in range(i + 1, grid.n):
            xj, yj = 2 * j, 2 * j + 1
            re = acc((1, mixed(xi, xj)), (1, mixed(yi, yj)))
            im = acc((1, mixed(xi, yj)), (-1, mixed(yi, xj)))
            if re is None and im is None:
                continue
            entry = np.zeros(grid.shape, dtype=complex)
            if re is not None:
                entry.real = 0.25 * re
            if im is not None:
                entry.imag = 0.25 * im
            out[..., i, j] = entry
            out[..., j, i] = np.conj(entry)
    return out


def gradient_array(values: np.ndarray, grid: TorusGrid, method="spectral", hat=None) -> np.ndarray:
    """Holomorphic gradient d_i = (d_x - i d_y)/2; shape grid.shape + (n,)."""
    out = np.zeros(grid.shape + (grid.n,), dtype=complex)
    if method == "spectral" and _spectral(grid).dense:
        sp = _spectral(grid)
        for i in range(grid.n):
            for a, factor in ((2 * i, 0.5), (2 * i + 1, -0.5j)):
                if grid.resolutions[a] > 1:
                    out[..., i] += factor * sp.apply(values, a, sp.D1[a])
        return out
    if method == "spectral":
        sp = _spectral(grid)
        if hat is None:
            hat = sp.forward(values)
        for i in range(grid.n):
            for a, factor in ((2 * i, 0.5), (2 * i + 1, -0.5j)):
                if grid.resolutions[a] > 1:
                    out[..., i] += factor * sp.inverse(1j * sp.d1(a) * hat)
        return out
    for i in range(grid.n):
        dx = partial_derivative(values, grid, 2 * i, None, method)
        dy = partial_derivative(values, grid, 2 * i + 1, None, method)
        out[..., i] = 0.5 * (dx - 1j * dy)
    return out


def complex_hessian(phi: ScalarField, method: str = "spectral") -> HermitianField:
    _check_real_finite(phi.values)
    return HermitianField(phi.grid, hessian_array(phi.values, phi.grid, method))


def holomorphic_gradient(phi: ScalarField, method: str = "spectral"):
    """Return (d_i phi as a complex (..., n) array, |grad phi|^2 field)."""
    _check_real_finite(phi.values)
    g = gradient_array(phi.values, phi.grid, method)
    return g, ScalarField(phi.grid, np.sum(np.abs(g) ** 2, axis=-1))


def real_laplacian(phi: ScalarField, method: str = "spectral") -> ScalarField:
    total = np.zeros(phi.grid.shape)
    for a in phi.grid.active_axes:
        total += partial_derivative(phi.values, phi.grid, a, a, method)
    return ScalarField(phi.grid, total)


# ---------------------------------------------------------------------------
# eigen-decomposition


@numba.njit(cache=True)
def _eig2_kernel(H, out):
    for m in range(H.shape[0]):
        out[m, 0], out[m, 1] = _sym2(H[m, 0, 0].real, H[m, 1, 1].real, H[m, 0, 1])


def _eig2_values(H):
    H = np.asarray(H, dtype=complex)
    lead = H.shape[:-2]
    flat = np.ascontiguousarray(H.reshape(-1, 2, 2))
    out = np.empty((flat.shape[0], 2))
    _eig2_kernel(flat, out)
    return out.reshape(lead + (2,))


@numba.njit(cache=True)
def _sort_rows_desc(lam):
    """In-place descending insertion sort of each row of a 2-d array."""
    n = lam.shape[1]
    for m in range(lam.shape[0]):
        for i in range(1, n):
            v = lam[m, i]
            j = i - 1
            while j >= 0 and lam[m, j] < v:
                lam[m, j + 1] = lam[m, j]
                j -= 1
            lam[m, j + 1] = v


def sort_descending(lam: np.ndarray) -> np.ndarray:
    lam = np.array(lam, dtype=float)
    flat = lam.reshape(-1, lam.shape[-1])
    _sort_rows_desc(flat)
    return flat.reshape(lam.shape)


@numba.njit(cache=True)
def _sym2(a, d, b):
    h = 0.5 * (a - d)
    r = math.sqrt(h * h + b.real * b.real + b.imag * b.imag)
    return 0.5 * (a + d) + r, 0.5 * (a + d) - r


@numba.njit(cache=True)
def _desc3(x, y, z):
    hi = max(x, max(y, z))
    lo = min(x, min(y, z))
    mid = max(min(x, y), min(max(x, y), z))
    return hi, mid, lo


@numba.njit(cache=True)
def _eig3_kernel(H, out):
    third = 2.0 * math.pi / 3.0
    for m in range(H.shape[0]):
        a11 = H[m, 0, 0].real
        a22 = H[m, 1, 1].real
        a33 = H[m, 2, 2].real
        a12 = H[m, 0, 1]
        a13 = H[m, 0, 2]
        a23 = H[m, 1, 2]
        # an exactly decoupled index reduces to a 2x2 block without trigonometry
        if a13 == 0 and a23 == 0:
            u, v = _sym2(a11, a22, a12)
            out[m, 0], out[m, 1], out[m, 2] = _desc3(u, v, a33)
            continue
        if a12 == 0 and a13 == 0:
            u, v = _sym2(a22, a33, a23)
            out[m, 0], out[m, 1], out[m, 2] = _desc3(u, v, a11)
            continue
        if a12 == 0 and a23 == 0:
            u, v = _sym2(a11, a33, a13)
            out[m, 0], out[m, 1], out[m, 2] = _desc3(u, v, a22)
            continue
        q = (a11 + a22 + a33) / 3.0
        b11 = a11 - q
        b22 = a22 - q
        b33 = a33 - q
        n12 = a12.real * a12.real + a12.imag * a12.imag
        n13 = a13.real * a13.real + a13.imag * a13.imag
        n23 = a23.real * a23.real + a23.imag * a23.imag
        p = math.sqrt((b11 * b11 + b22 * b22 + b33 * b33 + 2.0 * (n12 + n13 + n23)) / 6.0)
        det = b11 * b22 * b33 + 2.0 * (a12 * a23 * a13.conjugate()).real - b11 * n23 - b22 * n13 - b33 * n12
        r = 0.5 * det / (p * p * p)
        r = min(1.0, max(-1.0, r))
        ang = math.acos(r) / 3.0
        l1 = q + 2.0 * p * math.cos(ang)
        l3 = q + 2.0 * p * math.cos(ang + third)
        out[m, 0] = l1
        out[m, 1] = 3.0 * q - l1 - l3
        out[m, 2] = l3


def _eig3_values(H):
    """Trigonometric solution of the characteristic cubic, descending."""
    H = np.asarray(H, dtype=complex)
    lead = H.shape[:-2]
    flat = np.ascontiguousarray(H.reshape(-1, 3, 3))
    out = np.empty((flat.shape[0], 3))
    _eig3_kernel(flat, out)
    return out.reshape(lead + (3,))


def _fix_phase(U):
    """Make the largest-magnitude component of each column real positive."""
    idx = np.argmax(np.abs(U), axis=-2)
    lead = np.take_along_axis(U, idx[..., None, :], axis=-2)
    return U * (np.conj(lead) / np.abs(lead))


def _eig2(H):
    lam = _eig2_values(H)
    a = H[..., 0, 0].real
    d = H[..., 1, 1].real
    b = H[..., 0, 1]
    r = 0.5 * (lam[..., 0] - lam[..., 1])
    # pick the row of (H - l1) that avoids cancellation
    use_second = a >= d
    v0 = np.where(use_second, 0.5 * (a - d) + r, b)
    v1 = np.where(use_second, np.conj(b), r - 0.5 * (a - d))
    nrm = np.sqrt(np.abs(v0) ** 2 + np.abs(v1) ** 2)
    degenerate = nrm == 0
    nrm = np.where(degenerate, 1.0, nrm)
    v0 = np.where(degenerate, 1.0, v0 / nrm)
    v1 = np.where(degenerate, 0.0, v1 / nrm)
    U = np.empty(H.shape, dtype=complex)
    U[..., 0, 0], U[..., 1, 0] = v0, v1
    U[..., 0, 1], U[..., 1, 1] = -np.conj(v1), np.conj(v0)
    return lam, U


def _jacobi(H):
    """Cyclic complex Jacobi, vectorised over the leading axis of (M, n, n)."""
    A = np.array(H, dtype=complex)
    M, n, _ = A.shape
    V = np.broadcast_to(np.eye(n, dtype=complex), A.shape).copy()
    scale = np.maximum(1.0, np.sqrt(np.sum(np.abs(A) ** 2, axis=(-2, -1))))
    offmask = ~np.eye(n, dtype=bool)
    active = np.arange(M)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(np.sum(np.abs(A[active][:, offmask]) ** 2, axis=-1))
        active = active[off > JACOBI_TOL * scale[active]]
        if active.size == 0:
            break
        a, v = A[active], V[active]
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                mag = np.abs(apq)
                live = mag > 1e-300
                mag_s = np.where(live, mag, 1.0)
                e = np.where(live, apq / mag_s, 1.0)
                tau = (a[:, q, q].real - a[:, p, p].real) / (2.0 * mag_s)
                sgn = np.where(tau >= 0, 1.0, -1.0)
                t = np.where(live, sgn / (np.abs(tau) + np.sqrt(1.0 + tau * tau)), 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                eb = np.conj(e)
                # columns: A <- A U with U = [[c, s], [-s eb, c eb]] on (p, q)
                colp, colq = a[:, :, p].copy(), a[:, :, q].copy()
                a[:, :, p] = c[:, None] * colp - (s * eb)[:, None] * colq
                a[:, :, q] = s[:, None] * colp + (c * eb)[:, None] * colq
                rowp, rowq = a[:, p, :].copy(), a[:, q, :].copy()
                a[:, p, :] = c[:, None] * rowp - (s * e)[:, None] * rowq
                a[:, q, :] = s[:, None] * rowp + (c * e)[:, None] * rowq
                a[:, p, q] = 0.0
                a[:, q, p] = 0.0
                vp, vq = v[:, :, p].copy(), v[:, :, q].copy()
                v[:, :, p] = c[:, None] * vp - (s * eb)[:, None] * vq
                v[:, :, q] = s[:, None] * vp + (c * eb)[:, None] * vq
        A[active], V[active] = a, v
    else:
        off = np.sqrt(np.sum(np.abs(A[active][:, offmask]) ** 2, axis=-1))
        bad = active[off > JACOBI_TOL * scale[active]]
        if bad.size:
            raise NumericalError(f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps", node=int(bad[0]))
    lam = np.real(np.diagonal(A, axis1=-2, axis2=-1)).copy()
    return lam, V


def eigenvalues(H) -> np.ndarray:
    """Descending eigenvalues of a Hermitian field (array or HermitianField).

    For n = 3, nodes where one index is exactly decoupled (a frozen complex
    direction with diagonal X) use the 2x2 formula instead of the cubic.
    """
    vals = H.values if isinstance(H, HermitianField) else np.asarray(H)
    n = vals.shape[-1]
    if n == 1:
        return vals[..., 0, 0].real[..., None].copy()
    if n == 2:
        return _eig2_values(vals)
    if n == 3:
        return _eig3_values(vals)
    lead = vals.shape[:-2]
    lam, _ = _jacobi(vals.reshape(-1, n, n))
    return sort_descending(lam).reshape(lead + (n,))


def eigen_decompose(H: HermitianField) -> EigenField:
    """Per-node eigenpairs: closed form for n <= 2, cyclic Jacobi beyond."""
    vals = H.values
    n = H.grid.n
    lead = vals.shape[:-2]
    if n == 1:
        lam = vals[..., 0, 0].real[..., None].copy()
        U = np.ones(lead + (1, 1), dtype=complex)
    elif n == 2:
        lam, U = _eig2(vals)
    else:
        flat = vals.reshape(-1, n, n)
        try:
            lam, U = _jacobi(flat)
        except NumericalError as exc:
            node = np.unravel_index(exc.node, lead)
            raise NumericalError(f"{exc} at node {tuple(int(i) for i in node)}", node=node) from None
        order = np.argsort(-lam, axis=-1)
        lam = np.take_along_axis(lam, order, axis=-1)
        U = np.take_along_axis(U, order[:, None, :], axis=-1)
        lam = lam.reshape(lead + (n,))
        U = U.reshape(lead + (n, n))
    return EigenField(H.grid, lam, _fix_phase(U))


# ---------------------------------------------------------------------------
# integrals


def integrate_mean(field: ScalarField) -> float:
    """Grid average, i.e. the integral against omega^n with unit total volume.

    ``np.add.reduce`` on the contiguous flattened array sums pairwise in a
    fixed order, independent of thread count.
    """
    v = np.ascontiguousarray(field.values).ravel()
    return float(np.add.reduce(v) / v.size)


def normalize(phi: ScalarField) -> ScalarField:
    return ScalarField(phi.grid, phi.values - integrate_mean(phi))


# ---------------------------------------------------------------------------
# snapshots


def write_snapshot(path, field: ScalarField) -> None:
    """CSV with a commented header; rows follow C (row-major) node order."""
    g = field.grid
    coords = np.meshgrid(*[np.arange(r) * h for r, h in zip(g.resolutions, g.spacings)], indexing="ij")
    cols = [c.ravel() for c in coords] + [np.asarray(field.values).ravel()]
    header = "\n".join(
        [
            f"n={g.n}",
            "resolutions=" + ",".join(str(r) for r in g.resolutions),
            "periods=" + ",".join(repr(p) for p in g.periods),
            "axes=" + ",".join(g.axis_names),
            ",".join(g.axis_names + ("value",)),
        ]
    )
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, fmt="%.17g")


def read_snapshot(path) -> ScalarField:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                key, val = body.split("=", 1)
                meta[key] = val
    n = int(meta["n"])
    res = tuple(int(r) for r in meta["resolutions"].split(","))
    periods = tuple(float(p) for p in meta["periods"].split(","))
    grid = TorusGrid(n, res, periods)
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return ScalarField(grid, data[:, -1].reshape(res))


def hermitian_residual(H: HermitianField, E: EigenField) -> np.ndarray:
    """max |H U - U diag(l)| per node."""
    HU = H.values @ E.vectors
    return np.abs(HU - E.vectors * E.eigenvalues[..., None, :]).max(axis=(-2, -1))


def max_norm(H: HermitianField) -> np.ndarray:
    return np.abs(H.values).max(axis=(-2, -1))
