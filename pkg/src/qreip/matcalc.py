"""Spectral calculus for real symmetric matrices.

Everything here works in the eigenbasis of a symmetric matrix: traces of
matrix functions, first/second divided differences, and the Daleckii-Krein
form of Frechet derivatives.  Matrices are vectorized column-major
(``vec`` stacks columns), which is the convention of all Kronecker-product
formulas in the package.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, DomainViolation, EigFailure, NonSymmetric

SYM_TOL = 1e-12

# relative spread below which second divided differences switch to a Taylor
# expansion about the mean
_DD2_TAYLOR_SPREAD = 1e-3
_DD2_TAYLOR_TERMS = 5


def vec(M: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization; batched over leading axes."""
    M = np.asarray(M)
    if M.ndim == 2:
        return M.reshape(-1, order="F")
    return np.swapaxes(M, -1, -2).reshape(*M.shape[:-2], -1)


def mat(v: np.ndarray, n: int | None = None) -> np.ndarray:
    """Inverse of :func:`vec`.  A 2-D input is read as columns ``v[:, j]``
    and returns a stack of shape ``(k, n, n)``."""
    v = np.asarray(v)
    if n is None:
        n = math.isqrt(v.shape[0])
    if v.shape[0] != n * n:
        raise DimensionMismatch(f"vector of length {v.shape[0]} is not vec of a {n}x{n} matrix")
    if v.ndim == 1:
        return v.reshape(n, n, order="F")
    return np.swapaxes(v.T.reshape(v.shape[1], n, n), -1, -2)


class ScalarFn(enum.Enum):
    XLNX = "xlnx"
    LN = "ln"
    NEGLN = "negln"

    def in_domain(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self is ScalarFn.XLNX:
            return x >= 0
        return x > 0

    def check_domain(self, x, strict=False):
        x = np.asarray(x, dtype=float)
        ok = x > 0 if strict else self.in_domain(x)
        if not np.all(ok):
            bad = x[~ok].ravel()[0]
            raise DomainViolation(f"{self.value}: eigenvalue/argument {bad!r} outside domain")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self is ScalarFn.XLNX:
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)
        if self is ScalarFn.LN:
            return np.log(x)
        return -np.log(x)

    def d1(self, x):
        x = np.asarray(x, dtype=float)
        if self is ScalarFn.XLNX:
            return 1.0 + np.log(x)
        if self is ScalarFn.LN:
            return 1.0 / x
        return -1.0 / x

    def d2(self, x):
        return self.deriv(2, x)

    def deriv(self, k: int, x):
        """k-th derivative, k >= 1."""
        x = np.asarray(x, dtype=float)
        if k == 1:
            return self.d1(x)
        if self is ScalarFn.XLNX:
            return (-1.0) ** k * math.factorial(k - 2) / x ** (k - 1)
        val = (-1.0) ** (k - 1) * math.factorial(k - 1) / x**k
        return val if self is ScalarFn.LN else -val


@dataclass(frozen=True)
class SymEig:
    """Orthonormal eigenbasis (columns) and eigenvalues, sorted descending."""

    basis: np.ndarray
    eigvals: np.ndarray

    @property
    def n(self) -> int:
        return self.eigvals.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.basis * self.eigvals) @ self.basis.T

    def apply_fn(self, f: ScalarFn) -> np.ndarray:
        """Matrix extension F(X) = U Diag(f(lambda)) U^T."""
        return (self.basis * f.value(self.eigvals)) @ self.basis.T


@dataclass(frozen=True)
class DivDiffMatrix:
    entries: np.ndarray


def symmetrize_checked(X: np.ndarray, tol: float = SYM_TOL) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainViolation("matrix has non-finite entries")
    asym = np.max(np.abs(X - X.T)) if X.size else 0.0
    if asym > tol * max(1.0, np.max(np.abs(X))):
        raise NonSymmetric(f"asymmetry {asym:.3e} exceeds tolerance")
    return 0.5 * (X + X.T)


def spectral_decompose(X: np.ndarray) -> SymEig:
    Xs = symmetrize_checked(X)
    try:
        w, U = np.linalg.eigh(Xs)
    except np.linalg.LinAlgError as exc:
        raise EigFailure(str(exc)) from exc
    return SymEig(basis=U[:, ::-1].copy(), eigvals=w[::-1].copy())


def trace_fn(eig: SymEig, f: ScalarFn) -> float:
    f.check_domain(eig.eigvals)
    return float(np.sum(f.value(eig.eigvals)))


# -- divided differences ----------------------------------------------------


def _ln_dd1(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stable ln^{[1]}; a >= b > 0 elementwise."""
    out = np.empty(np.broadcast(a, b).shape)
    a, b = np.broadcast_to(a, out.shape), np.broadcast_to(b, out.shape)
    eq = a == b
    far = (a < 0.5 * b) | (b < 0.5 * a)
    near = ~eq & ~far
    out[eq] = 1.0 / a[eq]
    out[far] = (np.log(a[far]) - np.log(b[far])) / (a[far] - b[far])
    an, bn = a[near], b[near]
    out[near] = 2.0 * np.arctanh((an - bn) / (an + bn)) / (an - bn)
    return out


def _dd1_sorted(f: ScalarFn, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """First divided difference with a >= b already arranged."""
    if f is ScalarFn.LN:
        return _ln_dd1(a, b)
    if f is ScalarFn.NEGLN:
        return -_ln_dd1(a, b)
    # x ln x:  (a ln a - b ln b)/(a - b) = ln b + a * ln^{[1]}(a, b)
    out = np.empty(np.broadcast(a, b).shape)
    a, b = np.broadcast_to(a, out.shape), np.broadcast_to(b, out.shape)
    zb = b == 0
    if np.any(zb & (a == 0)):
        raise DomainViolation("xlnx: divided difference at (0, 0) is unbounded")
    out[zb] = np.log(a[zb])
    pos = ~zb
    out[pos] = np.log(b[pos]) + a[pos] * _ln_dd1(a[pos], b[pos])
    return out


def div_diff1_array(f: ScalarFn, a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    f.check_domain(a)
    f.check_domain(b)
    return _dd1_sorted(f, np.maximum(a, b), np.minimum(a, b))


def div_diff1(f: ScalarFn, a: float, b: float) -> float:
    """First divided difference f^{[1]}(a, b) (f'(a) when a == b)."""
    return float(div_diff1_array(f, a, b))


def div_diff1_ln_stable(a: float, b: float) -> float:
    """ln^{[1]}(a, b) using 2 atanh(z)/(a - b), z = (a-b)/(a+b), unless
    one argument is below half of the other."""
    if not (a > 0 and b > 0):
        raise DomainViolation(f"ln divided difference needs positive arguments, got ({a}, {b})")
    return float(_ln_dd1(np.asarray(max(a, b), float), np.asarray(min(a, b), float)))


def _complete_homogeneous(d: np.ndarray, kmax: int) -> list[np.ndarray]:
    """h_0..h_kmax of the variables stacked on axis 0 (Newton identities)."""
    p = [None] + [np.sum(d**i, axis=0) for i in range(1, kmax + 1)]
    h = [np.ones(d.shape[1:])]
    for k in range(1, kmax + 1):
        acc = np.zeros(d.shape[1:])
        for i in range(1, k + 1):
            acc = acc + p[i] * h[k - i]
        h.append(acc / k)
    return h


def div_diff2_array(f: ScalarFn, a, b, c) -> np.ndarray:
    """Vectorized second divided difference f^{[2]}(a, b, c).

    Arguments are sorted so the result is exactly permutation invariant.
    The coincident value is +f''(a)/2, the continuous extension.
    """
    x = np.stack(np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, c))))
    if not np.all(x > 0):
        bad = x[~(x > 0)].ravel()[0]
        raise DomainViolation(f"{f.value}: second divided difference needs positive arguments, got {bad!r}")
    x = -np.sort(-x, axis=0)
    hi, mid, lo = x
    spread = hi - lo
    out = np.empty(hi.shape)
    direct = spread > _DD2_TAYLOR_SPREAD * hi
    if np.any(direct):
        h, m, l = hi[direct], mid[direct], lo[direct]
        out[direct] = (_dd1_sorted(f, h, m) - _dd1_sorted(f, m, l)) / (h - l)
    taylor = ~direct
    if np.any(taylor):
        xt = x[:, taylor]
        center = xt.mean(axis=0)
        hks = _complete_homogeneous(xt - center, _DD2_TAYLOR_TERMS - 1)
        acc = np.zeros(center.shape)
        for k, hk in enumerate(hks):
            acc += f.deriv(k + 2, center) / math.factorial(k + 2) * hk
        out[taylor] = acc
    return out


def div_diff2(f: ScalarFn, a: float, b: float, c: float) -> float:
    return float(div_diff2_array(f, a, b, c))


def div_diff_matrix(eig: SymEig, f: ScalarFn) -> DivDiffMatrix:
    lam = eig.eigvals
    return DivDiffMatrix(div_diff1_array(f, lam[:, None], lam[None, :]))


def div_diff2_tensor(eig: SymEig, f: ScalarFn) -> np.ndarray:
    """T[a, m, b] = f^{[2]}(lam_a, lam_m, lam_b)."""
    lam = eig.eigvals
    return div_diff2_array(f, lam[:, None, None], lam[None, :, None], lam[None, None, :])


# -- Frechet derivatives ----------------------------------------------------


def frechet_apply(eig: SymEig, f: ScalarFn, H: np.ndarray) -> np.ndarray:
    """Directional derivative of X -> F(X) at the decomposed point: U (T_f o U^T H U) U^T."""
    H = np.asarray(H, dtype=float)
    if H.shape[-2:] != (eig.n, eig.n):
        raise DimensionMismatch(f"direction shape {H.shape} does not match n={eig.n}")
    U = eig.basis
    T = div_diff_matrix(eig, f).entries
    out = U @ (T * (U.T @ H @ U)) @ U.T
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def trace_fn_gradient(eig: SymEig, f: ScalarFn) -> np.ndarray:
    """vec(F'(X)), the gradient of X -> Tr F(X)."""
    lam = eig.eigvals
    f.check_domain(lam, strict=f is ScalarFn.XLNX)
    U = eig.basis
    return vec((U * f.d1(lam)) @ U.T)


def kron_conj_apply(U: np.ndarray, D, v: np.ndarray) -> np.ndarray:
    """(U (x) U) D (U^T (x) U^T) v without forming Kronecker products.

    ``D`` is a length-n^2 diagonal, a (sparse) n^2 x n^2 matrix, or a callable
    acting on column stacks.  ``v`` may be a vector or an (n^2, k) array.
    """
    n = U.shape[0]
    v = np.asarray(v, dtype=float)
    if v.shape[0] != n * n:
        raise DimensionMismatch(f"vector length {v.shape[0]} != n^2 = {n * n}")
    Ht = U.T @ mat(v, n) @ U
    w = vec(Ht)
    w = w.T if v.ndim == 2 else w
    if callable(D):
        w = D(w)
    elif sp.issparse(D) or (isinstance(D, np.ndarray) and D.ndim == 2):
        if D.shape != (n * n, n * n):
            raise DimensionMismatch(f"middle operator shape {D.shape} != ({n * n}, {n * n})")
        w = D @ w
    else:
        d = np.asarray(D, dtype=float)
        if d.shape != (n * n,):
            raise DimensionMismatch(f"diagonal length {d.shape} != {n * n}")
        w = d * w if w.ndim == 1 else d[:, None] * w
    out = U @ mat(np.asarray(w), n) @ U.T
    return vec(out) if v.ndim == 1 else vec(out).T
