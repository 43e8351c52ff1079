"""Quantum relative entropy and the barrier

    Phi(t, X, Y) = -ln(t - qre(X, Y)) - ln det X - ln det Y

with its gradient, Hessian products and Hessian solves.

Block coordinates are ``(t, vec X, vec Y)`` (length 1 + 2 n^2).  Signs of all
blocks are fixed by calculus and checked against finite differences in the
test-suite:

* ``h    = dqre/dX = vec(I + ln X - ln Y)``
* ``hbar = dqre/dY = -vec(U_Y (Y_ln o U_Y^T X U_Y) U_Y^T)``
* ``grad Phi = (-1/T, h/T - vec X^-1, hbar/T - vec Y^-1)``, ``T = t - qre``
* ``Phi'' = g g^T / T^2 + (1/T) qre'' + (X^-1 (x) X^-1) + (Y^-1 (x) Y^-1)``
  with ``g = (1, -h, -hbar)``.  Splitting ``g g^T`` into its t-row/column and
  the rank-one ``r r^T``, ``r = (0, h, hbar)/T``, gives the bar-H + rank-one
  form used by the approximate solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, DomainViolation, NoConvergence, NotInterior, SingularBlock
from .matcalc import (
    DivDiffMatrix,
    ScalarFn,
    SymEig,
    div_diff2_tensor,
    div_diff_matrix,
    kron_conj_apply,
    mat,
    spectral_decompose,
    vec,
)

PSD_FLOOR = 1e-12


@dataclass(frozen=True)
class QrePoint:
    t: float
    X: np.ndarray
    Y: np.ndarray

    @classmethod
    def from_vector(cls, z: np.ndarray, n: int) -> "QrePoint":
        z = np.asarray(z, dtype=float)
        if z.shape != (1 + 2 * n * n,):
            raise DimensionMismatch(f"QRE block vector has length {z.shape}, expected {1 + 2 * n * n}")
        return cls(float(z[0]), mat(z[1 : 1 + n * n], n), mat(z[1 + n * n :], n))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.t], vec(self.X), vec(self.Y)])


def qre_value(X: np.ndarray, Y: np.ndarray) -> float:
    """Tr(X ln X) - Tr(X ln Y) with 0 ln 0 = 0; Y must be positive definite."""
    eigY = spectral_decompose(Y)
    if eigY.eigvals[-1] <= 0:
        raise DomainViolation(f"qre: Y has eigenvalue {eigY.eigvals[-1]!r} <= 0")
    eigX = spectral_decompose(X)
    if eigX.eigvals[-1] < -PSD_FLOOR:
        raise DomainViolation(f"qre: X has eigenvalue {eigX.eigvals[-1]!r} < 0")
    lam = np.clip(eigX.eigvals, 0.0, None)
    return _qre_from_eigs(eigX, lam, eigY, np.asarray(X, dtype=float))


def _qre_from_eigs(eigX: SymEig, lam: np.ndarray, eigY: SymEig, X: np.ndarray) -> float:
    xlnx = float(np.sum(ScalarFn.XLNX.value(lam)))
    Xt = eigY.basis.T @ X @ eigY.basis
    xlny = float(np.dot(np.diag(Xt), np.log(eigY.eigvals)))
    return xlnx - xlny


def weighted_fn_gradient(X: np.ndarray, eigY: SymEig, f: ScalarFn) -> np.ndarray:
    """Gradient of Y -> Tr(X F(Y)):  U_Y (Y_f o (U_Y^T X U_Y)) U_Y^T."""
    X = np.asarray(X, dtype=float)
    if X.shape != (eigY.n, eigY.n):
        raise DimensionMismatch(f"X shape {X.shape} does not match n={eigY.n}")
    U = eigY.basis
    Yf = div_diff_matrix(eigY, f).entries
    G = U @ (Yf * (U.T @ X @ U)) @ U.T
    return 0.5 * (G + G.T)


def _s_tensor_apply(F2: np.ndarray, Xt: np.ndarray, Ht: np.ndarray) -> np.ndarray:
    """S(H)_ab = sum_m F2[a,m,b] (Xt_am H_mb + H_am Xt_mb); H may be a (k,n,n) stack."""
    return np.einsum("amb,am,...mb->...ab", F2, Xt, Ht) + np.einsum("amb,...am,mb->...ab", F2, Ht, Xt)


def build_S(eigY: SymEig, X: np.ndarray, f: ScalarFn) -> sp.csr_matrix:
    """Second divided-difference operator of Y -> Tr(X F(Y)) in the Y eigenbasis.

    Entries (column-major vec index a + n b):
        S[(a,b), (m,b)] += f2(g_a, g_m, g_b) Xt[a,m]     (shared column index)
        S[(a,b), (a,m)] += f2(g_a, g_m, g_b) Xt[m,b]     (shared row index)
    with Xt = U_Y^T X U_Y; 2 n^3 stored entries.
    """
    n = eigY.n
    X = np.asarray(X, dtype=float)
    if X.shape != (n, n):
        raise DimensionMismatch(f"X shape {X.shape} does not match n={n}")
    f.check_domain(eigY.eigvals, strict=True)
    F2 = div_diff2_tensor(eigY, f)
    Xt = eigY.basis.T @ X @ eigY.basis
    return _assemble_S(F2, Xt)


def _assemble_S(F2: np.ndarray, Xt: np.ndarray) -> sp.csr_matrix:
    n = Xt.shape[0]
    a, m, b = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    rows = np.concatenate([(a + n * b).ravel(), (a + n * b).ravel()])
    cols = np.concatenate([(m + n * b).ravel(), (a + n * m).ravel()])
    vals = np.concatenate([(F2 * Xt[:, :, None]).ravel(), (F2 * Xt[None, :, :]).ravel()])
    S = sp.coo_matrix((vals, (rows, cols)), shape=(n * n, n * n)).tocsr()
    S.sum_duplicates()
    S = 0.5 * (S + S.T)
    return S.tocsr()


@dataclass(frozen=True)
class QreHessianBlocks:
    """Blocks of the qre Hessian as operators on vec-coordinates.

    ``h11`` acts on X-directions, ``h22`` on Y-directions, ``h12`` maps a
    Y-direction into the X-block and ``h21`` (its adjoint) an X-direction into
    the Y-block.  All accept vectors or (n^2, k) column stacks.
    """

    eigX: SymEig
    eigY: SymEig
    Xln: DivDiffMatrix
    Yln: DivDiffMatrix
    F2: np.ndarray
    Xt: np.ndarray

    def h11(self, v):
        return kron_conj_apply(self.eigX.basis, vec(self.Xln.entries), v)

    def h12(self, v):
        return -kron_conj_apply(self.eigY.basis, vec(self.Yln.entries), v)

    h21 = h12

    def h22(self, v):
        n = self.eigY.n
        F2, Xt = self.F2, self.Xt

        def middle(w):
            Ht = mat(w, n)
            out = vec(_s_tensor_apply(F2, Xt, Ht))
            return out if w.ndim == 1 else out.T

        return -kron_conj_apply(self.eigY.basis, middle, v)


def qre_hessian_blocks(eigX: SymEig, eigY: SymEig, X: np.ndarray) -> QreHessianBlocks:
    ScalarFn.LN.check_domain(eigX.eigvals)
    ScalarFn.LN.check_domain(eigY.eigvals)
    # X_ln: divided differences of (x ln x)' = 1 + ln, i.e. of ln
    Xln = div_diff_matrix(eigX, ScalarFn.LN)
    Yln = div_diff_matrix(eigY, ScalarFn.LN)
    F2 = div_diff2_tensor(eigY, ScalarFn.LN)
    Xt = eigY.basis.T @ np.asarray(X, dtype=float) @ eigY.basis
    return QreHessianBlocks(eigX, eigY, Xln, Yln, F2, 0.5 * (Xt + Xt.T))


@dataclass(frozen=True, eq=False)
class QreDerivs:
    n: int
    T: float
    value: float
    grad: np.ndarray
    h: np.ndarray
    hbar: np.ndarray
    eigX: SymEig
    eigY: SymEig
    blocks: QreHessianBlocks = field(repr=False)

    @property
    def Xln(self) -> DivDiffMatrix:
        return self.blocks.Xln

    @property
    def Yln(self) -> DivDiffMatrix:
        return self.blocks.Yln

    @property
    def dim(self) -> int:
        return 1 + 2 * self.n * self.n

    @cached_property
    def S(self) -> sp.csr_matrix:
        """Second divided-difference operator for f = ln at Y (qre'' Y-block is -S)."""
        return _assemble_S(self.blocks.F2, self.blocks.Xt)

    @cached_property
    def Xinv(self) -> np.ndarray:
        U, lam = self.eigX.basis, self.eigX.eigvals
        return (U / lam) @ U.T

    @cached_property
    def Yinv(self) -> np.ndarray:
        U, gam = self.eigY.basis, self.eigY.eigvals
        return (U / gam) @ U.T

    @cached_property
    def _x_middle(self) -> np.ndarray:
        lam = self.eigX.eigvals
        return vec(self.Xln.entries) / self.T + vec(np.outer(1.0 / lam, 1.0 / lam))

    @cached_property
    def _y_middle_lu(self):
        gam = self.eigY.eigvals
        M = (-1.0 / self.T) * self.S + sp.diags(vec(np.outer(1.0 / gam, 1.0 / gam)))
        try:
            lu = spla.splu(M.tocsc())
        except RuntimeError as exc:
            raise SingularBlock(f"Y-block middle matrix factorization failed: {exc}") from exc
        return lu


def phi_eval(p: QrePoint) -> QreDerivs:
    X = np.asarray(p.X, dtype=float)
    Y = np.asarray(p.Y, dtype=float)
    n = X.shape[0]
    if Y.shape != (n, n):
        raise DimensionMismatch(f"X is {X.shape}, Y is {Y.shape}")
    eigX = spectral_decompose(X)
    eigY = spectral_decompose(Y)
    if not eigX.eigvals[-1] > 0:
        raise NotInterior("X>0", detail=f"min eigenvalue {eigX.eigvals[-1]:.3e}")
    if not eigY.eigvals[-1] > 0:
        raise NotInterior("Y>0", detail=f"min eigenvalue {eigY.eigvals[-1]:.3e}")
    q = _qre_from_eigs(eigX, eigX.eigvals, eigY, X)
    T = p.t - q
    if not T > 0:
        raise NotInterior("T>0", detail=f"t - qre = {T:.3e}")
    blocks = qre_hessian_blocks(eigX, eigY, X)
    lnX = (eigX.basis * np.log(eigX.eigvals)) @ eigX.basis.T
    lnY = (eigY.basis * np.log(eigY.eigvals)) @ eigY.basis.T
    h = vec(np.eye(n) + lnX - lnY)
    UY = eigY.basis
    hbar = -vec(UY @ (blocks.Yln.entries * blocks.Xt) @ UY.T)
    Xinv = (eigX.basis / eigX.eigvals) @ eigX.basis.T
    Yinv = (UY / eigY.eigvals) @ UY.T
    grad = np.concatenate([[-1.0 / T], h / T - vec(Xinv), hbar / T - vec(Yinv)])
    value = -np.log(T) - np.sum(np.log(eigX.eigvals)) - np.sum(np.log(eigY.eigvals))
    return QreDerivs(n=n, T=T, value=float(value), grad=grad, h=h, hbar=hbar, eigX=eigX, eigY=eigY, blocks=blocks)


def _check_dim(d: QreDerivs, v: np.ndarray):
    if v.shape[0] != d.dim:
        raise DimensionMismatch(f"vector length {v.shape[0]} != block dimension {d.dim}")


def phi_hess_apply(d: QreDerivs, v: np.ndarray) -> np.ndarray:
    """Phi'' v for a vector or an (dim, k) column stack."""
    v = np.asarray(v, dtype=float)
    _check_dim(d, v)
    n2 = d.n * d.n
    T = d.T
    vt, vx, vy = v[0], v[1 : 1 + n2], v[1 + n2 :]
    # g^T v with g = (1, -h, -hbar)
    gv = vt - d.h @ vx - d.hbar @ vy
    b = d.blocks
    ox = (b.h11(vx) + b.h12(vy)) / T + _congruence(d.Xinv, vx, d.n)
    oy = (b.h21(vx) + b.h22(vy)) / T + _congruence(d.Yinv, vy, d.n)
    if v.ndim == 1:
        return np.concatenate([[gv / T**2], -d.h * gv / T**2 + ox, -d.hbar * gv / T**2 + oy])
    return np.vstack([gv[None, :] / T**2, -np.outer(d.h, gv) / T**2 + ox, -np.outer(d.hbar, gv) / T**2 + oy])


def _congruence(Ainv: np.ndarray, v: np.ndarray, n: int) -> np.ndarray:
    """(A^-1 (x) A^-1) v, i.e. vec(A^-1 V A^-1)."""
    out = vec(Ainv @ mat(v, n) @ Ainv)
    return out if v.ndim == 1 else out.T


def phi_hess_solve_approx(d: QreDerivs, rhs: np.ndarray) -> np.ndarray:
    """Approximate Phi''^{-1} rhs: drops the X-Y coupling of qre''.

    With the coupling dropped the remaining matrix is
    ``[1/T^2, -w^T/T^2; -w/T^2, D + w w^T/T^2]``, ``w = (h, hbar)``, which is
    exactly bar-H (without H12) plus the rank-one term.  The t-coordinate is
    eliminated first (1-D Schur complement), which absorbs the rank-one term in
    closed form and leaves block-diagonal solves with ``D``:
    the X-block through a diagonal middle matrix and the Y-block through a
    sparse LU of ``-S/T + Diag(1/g (x) 1/g)``.
    """
    rhs = np.asarray(rhs, dtype=float)
    _check_dim(d, rhs)
    n, n2 = d.n, d.n * d.n
    rt, rx, ry = rhs[0], rhs[1 : 1 + n2], rhs[1 + n2 :]
    if rhs.ndim == 1:
        bx, by = rx + d.h * rt, ry + d.hbar * rt
    else:
        bx, by = rx + np.outer(d.h, rt), ry + np.outer(d.hbar, rt)
    zx = kron_conj_apply(d.eigX.basis, 1.0 / d._x_middle, bx)
    lu = d._y_middle_lu

    def y_middle_solve(w):
        out = lu.solve(np.asarray(w))
        if not np.all(np.isfinite(out)):
            raise SingularBlock("Y-block middle solve produced non-finite values")
        return out

    zy = kron_conj_apply(d.eigY.basis, y_middle_solve, by)
    zt = d.T**2 * rt + d.h @ zx + d.hbar @ zy
    if rhs.ndim == 1:
        return np.concatenate([[zt], zx, zy])
    return np.vstack([zt[None, :], zx, zy])


def phi_hess_solve(d: QreDerivs, rhs: np.ndarray, tol: float = 1e-12, maxiter: int | None = None, return_iters: bool = False):
    """Preconditioned CG on Phi'' z = rhs, preconditioned by the approximate solve.

    Stops when ||Phi'' z - rhs|| <= tol ||rhs||.  Negative curvature or an
    exhausted iteration budget (default 10 n^2) raise NoConvergence.
    """
    rhs = np.asarray(rhs, dtype=float)
    _check_dim(d, rhs)
    if rhs.ndim != 1:
        raise DimensionMismatch("phi_hess_solve takes a single right-hand side")
    maxiter = 10 * d.n * d.n if maxiter is None else maxiter
    z = np.zeros_like(rhs)
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0:
        return (z, 0) if return_iters else z
    r = rhs.copy()
    y = phi_hess_solve_approx(d, r)
    p = y.copy()
    ry = r @ y
    for it in range(1, maxiter + 1):
        Ap = phi_hess_apply(d, p)
        curv = p @ Ap
        if not curv > 0:
            raise NoConvergence(f"non-positive curvature {curv:.3e} in CG (iteration {it})")
        alpha = ry / curv
        z += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            return (z, it) if return_iters else z
        y = phi_hess_solve_approx(d, r)
        ry_new = r @ y
        p = y + (ry_new / ry) * p
        ry = ry_new
    raise NoConvergence(f"CG did not reach relative residual {tol:g} in {maxiter} iterations")
