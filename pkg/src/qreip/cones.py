"""Barrier blocks composed by the solver.

A block constrains ``z = b - A x`` to the interior of one of

* ``orthant(m)``   z > 0,                            nu = m
* ``psd(n)``       mat(z) positive definite,           nu = n
* ``kl(n)``        (t, x, y) with KL(x, y) < t,        nu = 2n + 1
* ``qre(n)``       (t, X, Y) with qre(X, Y) < t,       nu = 2n + 1

Matrices are stored as full column-major ``vec`` (length n^2).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import qre_barrier as qb
from .errors import DimensionMismatch, DomainViolation, NonSymmetric, NotInterior
from .matcalc import mat, vec


class ConeKind(str, enum.Enum):
    ORTHANT = "orthant"
    PSD = "psd"
    KL = "kl"
    QRE = "qre"


@dataclass(eq=False)
class ConeBlock:
    kind: ConeKind
    size: int
    A: np.ndarray | sp.spmatrix
    b: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.kind = ConeKind(self.kind)
        self.b = np.asarray(self.b, dtype=float).ravel()
        if not sp.issparse(self.A):
            self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if self.A.shape[0] != self.dim or self.b.shape[0] != self.dim:
            raise DimensionMismatch(
                f"{self.kind.value}({self.size}) block needs {self.dim} rows; A has {self.A.shape[0]}, b has {self.b.shape[0]}"
            )

    @property
    def dim(self) -> int:
        n = self.size
        return {ConeKind.ORTHANT: n, ConeKind.PSD: n * n, ConeKind.KL: 1 + 2 * n, ConeKind.QRE: 1 + 2 * n * n}[self.kind]

    @property
    def nu(self) -> float:
        n = self.size
        return float({ConeKind.ORTHANT: n, ConeKind.PSD: n, ConeKind.KL: 2 * n + 1, ConeKind.QRE: 2 * n + 1}[self.kind])

    @property
    def ncols(self) -> int:
        return self.A.shape[1]

    def unit(self) -> np.ndarray:
        """A fixed direction that moves any point towards the interior."""
        n = self.size
        if self.kind is ConeKind.ORTHANT:
            return np.ones(n)
        if self.kind is ConeKind.PSD:
            return vec(np.eye(n))
        if self.kind is ConeKind.KL:
            return np.ones(1 + 2 * n)
        return np.concatenate([[1.0], vec(np.eye(n)), vec(np.eye(n))])

    def slack(self, x: np.ndarray) -> np.ndarray:
        return self.b - self.A @ x

    def with_columns(self, A_new) -> "ConeBlock":
        return ConeBlock(self.kind, self.size, A_new, self.b.copy(), self.label)

    def check_symmetric(self, tol: float = 1e-12):
        """Matrix blocks must carry symmetric data in b and every column of A."""
        if self.kind is ConeKind.PSD:
            parts = [(0, self.size)]
        elif self.kind is ConeKind.QRE:
            n2 = self.size**2
            parts = [(1, self.size), (1 + n2, self.size)]
        else:
            return
        A = self.A.toarray() if sp.issparse(self.A) else self.A
        for start, n in parts:
            sl = slice(start, start + n * n)
            for data in [self.b[sl][:, None], A[sl]]:
                M = mat(data, n)
                if np.max(np.abs(M - np.swapaxes(M, -1, -2)), initial=0.0) > tol * max(1.0, np.max(np.abs(M), initial=0.0)):
                    raise NonSymmetric(f"{self.kind.value} block '{self.label}': data is not symmetric")


@dataclass
class BarrierEval:
    value: float
    grad: np.ndarray
    hess_apply: Callable[[np.ndarray], np.ndarray]
    hess_solve: Callable[[np.ndarray], np.ndarray]
    nu: float
    derivs: object = field(default=None, repr=False)


def kl_value(x, y) -> float:
    """sum_i x_i ln x_i - x_i ln y_i for strictly positive x, y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatch(f"KL arguments have shapes {x.shape} and {y.shape}")
    if not (np.all(x > 0) and np.all(y > 0)):
        raise DomainViolation("KL needs strictly positive arguments")
    return float(np.sum(x * (np.log(x) - np.log(y))))


def _orthant_eval(z):
    if not np.all(z > 0):
        raise NotInterior("z>0", detail=f"min entry {np.min(z):.3e}")
    inv2 = 1.0 / z**2

    def apply(v):
        return inv2 * v if v.ndim == 1 else inv2[:, None] * v

    def solve(v):
        return z**2 * v if v.ndim == 1 else (z**2)[:, None] * v

    return BarrierEval(float(-np.sum(np.log(z))), -1.0 / z, apply, solve, float(z.size))


def _psd_eval(z, n):
    X = mat(z, n)
    if np.max(np.abs(X - X.T), initial=0.0) > 1e-9 * max(1.0, np.max(np.abs(X))):
        raise NotInterior("X symmetric")
    X = 0.5 * (X + X.T)
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        raise NotInterior("X>0") from None
    Linv = sla.solve_triangular(L, np.eye(n), lower=True)
    Xinv = Linv.T @ Linv

    def apply(v):
        out = vec(Xinv @ mat(v, n) @ Xinv)
        return out if v.ndim == 1 else out.T

    def solve(v):
        out = vec(X @ mat(v, n) @ X)
        return out if v.ndim == 1 else out.T

    value = -2.0 * float(np.sum(np.log(np.diag(L))))
    return BarrierEval(value, -vec(Xinv), apply, solve, float(n))


def _kl_eval(z, n):
    t, x, y = z[0], z[1 : 1 + n], z[1 + n :]
    if not np.all(x > 0):
        raise NotInterior("x>0")
    if not np.all(y > 0):
        raise NotInterior("y>0")
    T = t - kl_value(x, y)
    if not T > 0:
        raise NotInterior("T>0", detail=f"t - KL = {T:.3e}")
    gkl = np.concatenate([np.log(x) - np.log(y) + 1.0, -x / y])
    gT = np.concatenate([[1.0], -gkl])
    H = np.outer(gT, gT) / T**2
    ix, iy = np.arange(1, 1 + n), np.arange(1 + n, 1 + 2 * n)
    H[ix, ix] += 1.0 / (T * x) + 1.0 / x**2
    H[ix, iy] += -1.0 / (T * y)
    H[iy, ix] += -1.0 / (T * y)
    H[iy, iy] += x / (T * y**2) + 1.0 / y**2
    grad = -gT / T - np.concatenate([[0.0], 1.0 / x, 1.0 / y])
    value = -np.log(T) - np.sum(np.log(x)) - np.sum(np.log(y))
    cho = sla.cho_factor(H)
    return BarrierEval(float(value), grad, lambda v: H @ v, lambda v: sla.cho_solve(cho, v), float(2 * n + 1), derivs=H)


def _qre_eval(z, n):
    d = qb.phi_eval(qb.QrePoint.from_vector(z, n))

    def solve(v):
        if v.ndim == 1:
            return qb.phi_hess_solve(d, v)
        return np.column_stack([qb.phi_hess_solve(d, c) for c in v.T])

    return BarrierEval(d.value, d.grad, lambda v: qb.phi_hess_apply(d, v), solve, float(2 * n + 1), derivs=d)


def block_eval(blk: ConeBlock, z: np.ndarray) -> BarrierEval:
    z = np.asarray(z, dtype=float)
    if z.shape != (blk.dim,):
        raise DimensionMismatch(f"block coordinate vector has shape {z.shape}, expected ({blk.dim},)")
    if not np.all(np.isfinite(z)):
        raise NotInterior("finite")
    if blk.kind is ConeKind.ORTHANT:
        return _orthant_eval(z)
    if blk.kind is ConeKind.PSD:
        return _psd_eval(z, blk.size)
    if blk.kind is ConeKind.KL:
        return _kl_eval(z, blk.size)
    return _qre_eval(z, blk.size)


@dataclass
class AggregateBarrier:
    """Sum of block barriers composed with the affine maps z_j = b_j - A_j x."""

    value: float
    grad: np.ndarray
    nu: float
    evals: list = field(repr=False)
    blocks: list = field(repr=False)

    def hess_apply(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(v.shape)
        for blk, ev in zip(self.blocks, self.evals):
            out += blk.A.T @ ev.hess_apply(np.asarray(blk.A @ v))
        return out

    def hess_matrix(self) -> np.ndarray:
        k = self.grad.shape[0]
        H = np.zeros((k, k))
        for blk, ev in zip(self.blocks, self.evals):
            A = blk.A
            if blk.kind is ConeKind.ORTHANT and sp.issparse(A):
                # orthant Hessian is Diag(1/z^2) = Diag(grad^2)
                w = ev.grad**2
                H += np.asarray((A.T @ sp.diags(w) @ A).todense())
                continue
            Ad = A.toarray() if sp.issparse(A) else A
            H += Ad.T @ ev.hess_apply(Ad)
        return 0.5 * (H + H.T)

    def block_hess_apply(self, j: int, w: np.ndarray) -> np.ndarray:
        return self.evals[j].hess_apply(w)


def model_barrier(model, x: np.ndarray, shift: float = 0.0) -> AggregateBarrier:
    """Aggregate barrier of ``model.blocks`` at x.

    With ``shift`` > 0 every block is evaluated at ``b - A x + shift * unit``
    (used by the shifted-homotopy start).
    """
    x = np.asarray(x, dtype=float)
    value, grad, nu, evals = 0.0, np.zeros(x.shape[0]), 0.0, []
    for j, blk in enumerate(model.blocks):
        z = blk.slack(x)
        if shift:
            z = z + shift * blk.unit()
        try:
            ev = block_eval(blk, z)
        except NotInterior as exc:
            raise NotInterior(exc.condition, block=j) from exc
        value += ev.value
        grad -= blk.A.T @ ev.grad
        nu += ev.nu
        evals.append(ev)
    return AggregateBarrier(value, np.asarray(grad).ravel(), nu, evals, list(model.blocks))


def is_interior(model, x: np.ndarray, shift: float = 0.0) -> bool:
    try:
        model_barrier(model, x, shift)
    except (NotInterior, DomainViolation):
        return False
    return True


# -- symmetric QRE ----------------------------------------------------------


@dataclass
class SqreExpansion:
    blocks: list
    ncols: int
    aux: tuple


def _as_map(m, k):
    A, b = m
    if not sp.issparse(A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != k:
        raise DimensionMismatch(f"affine map has {A.shape[1]} columns, expected {k}")
    return A, np.asarray(b, dtype=float).ravel()


def _pad(A, extra):
    if sp.issparse(A):
        return sp.hstack([A, sp.csr_matrix((A.shape[0], extra))]).tocsr()
    return np.hstack([A, np.zeros((A.shape[0], extra))])


def expand_sqre(t_map, X_map, Y_map, k: int, n: int) -> SqreExpansion:
    """Blocks for qre(X,Y) + qre(Y,X) <= t via two auxiliary scalars t1, t2.

    ``t_map`` is either the index of t in x or an affine pair (a, beta) with
    t = beta - a.x; ``X_map``/``Y_map`` are pairs (A, b) with
    vec(X) = b - A x.  The returned blocks act on (x, t1, t2), so existing
    blocks must be padded with two zero columns (see :func:`pad_blocks`).
    """
    if isinstance(t_map, (int, np.integer)):
        a = np.zeros((1, k))
        a[0, int(t_map)] = -1.0
        t_map = (a, np.zeros(1))
    ta, tb = _as_map(t_map, k)
    XA, Xb = _as_map(X_map, k)
    YA, Yb = _as_map(Y_map, k)
    if XA.shape[0] != n * n or YA.shape[0] != n * n or ta.shape[0] != 1:
        raise DimensionMismatch("sqre maps must produce a scalar and two n x n matrices")
    XA, YA = (M.toarray() if sp.issparse(M) else M for M in (XA, YA))
    ta = ta.toarray() if sp.issparse(ta) else ta
    K = k + 2

    def qre_block(col, first, second, label):
        (A1, b1), (A2, b2) = first, second
        trow = np.zeros((1, K))
        trow[0, col] = -1.0
        A = np.vstack([trow, _pad(A1, 2), _pad(A2, 2)])
        return ConeBlock(ConeKind.QRE, n, A, np.concatenate([[0.0], b1, b2]), label)

    q1 = qre_block(k, (XA, Xb), (YA, Yb), "sqre:qre(X,Y)")
    q2 = qre_block(k + 1, (YA, Yb), (XA, Xb), "sqre:qre(Y,X)")
    # t - t1 - t2 >= 0
    row = _pad(ta, 2)
    row[0, k:] = 1.0
    lin = ConeBlock(ConeKind.ORTHANT, 1, row, tb, "sqre:t-t1-t2")
    return SqreExpansion([q1, q2, lin], K, (k, k + 1))


def pad_blocks(blocks, extra: int):
    return [blk.with_columns(_pad(blk.A, extra)) for blk in blocks]
