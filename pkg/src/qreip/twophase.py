"""Phase-I facial reduction and two-phase QRE solves.

Both Phase-I problems are posed as small SDPs and solved with the same
path-following engine:

* dual:   max s  s.t.  Y - s I psd, Tr Y = n, Y orthogonal to the data
          (or Y = sum y_i A_i with y.b = 0 for equality-form data).
          The face is the null space of the witness Y*.
* primal: max s  s.t.  A0 + sum x_i A_i - s I psd, lower <= x <= upper.
          The face is the range of the witness X(x*), and x* is a start.

Maximizing the smallest eigenvalue is bounded (unlike -ln det over a
degenerate set) and the central path ends in the relative interior of the
optimal set, which is what exposes the maximal-rank witness.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cones import ConeBlock, ConeKind, is_interior
from .errors import DimensionMismatch, Infeasible, InvariantViolation, NoInteriorFace, NotInterior
from .ipm import (
    NO_HEURISTIC,
    Model,
    SolveResult,
    SolverOptions,
    Status,
    find_interior,
    initial_point,
    solve,
    solve_shifted,
)
from .matcalc import mat, spectral_decompose, vec
from .qre_barrier import qre_value

RANK_TOL = 1e-6


class Method(str, enum.Enum):
    PRIMAL = "primal"
    DUAL = "dual"


@dataclass
class FaceBasis:
    V: np.ndarray
    rank_tol: float
    witness: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def rank(self) -> int:
        return self.V.shape[1]

    @property
    def full(self) -> bool:
        return self.rank == self.n


class _FullDimensional:
    def __repr__(self):
        return "FullDimensional"

    def __bool__(self):
        return False


FULL_DIMENSIONAL = _FullDimensional()


def _sym_basis(n):
    """Columns are vec(E_ii) and vec(E_ij + E_ji), i < j."""
    cols = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            cols.append(vec(E))
    return np.column_stack(cols)


def _check_list(A_list):
    if len(A_list) == 0:
        raise DimensionMismatch("phase-I needs at least one data matrix")
    A_list = [np.asarray(A, dtype=float) for A in A_list]
    n = A_list[0].shape[0]
    for A in A_list:
        if A.shape != (n, n):
            raise DimensionMismatch(f"data matrices must all be {n}x{n}, got {A.shape}")
    return A_list, n


def _max_eig_sdp(B, E, d, n, opts):
    """max s s.t. mat(B y) - s I psd and E y = d; returns (y, s, result)."""
    k = B.shape[1]
    A = np.hstack([-B, vec(np.eye(n))[:, None]])
    c = np.zeros(k + 1)
    c[-1] = -1.0
    Eaug = np.hstack([E, np.zeros((E.shape[0], 1))])
    model = Model(c, [ConeBlock(ConeKind.PSD, n, A, np.zeros(n * n), "phase-I")], (Eaug, d))
    from .ipm import nullspace_parametrize

    _, y0 = nullspace_parametrize(E, d)
    lam = np.linalg.eigvalsh(mat(B @ y0, n))
    x0 = np.concatenate([y0, [lam[0] - 1.0]])
    res = solve(model, x0, opts)
    if res.status is not Status.OPTIMAL:
        raise NoInteriorFace(f"phase-I SDP ended with status {res.status.value}: {res.message}")
    return res.x[:k], float(res.x[k]), res


def _null_face(W, rank_tol):
    eig = spectral_decompose(0.5 * (W + W.T))
    lam_max = eig.eigvals[0]
    keep = eig.eigvals <= rank_tol * lam_max
    return FaceBasis(eig.basis[:, keep], rank_tol, W)


def _range_face(W, rank_tol):
    eig = spectral_decompose(0.5 * (W + W.T))
    lam_max = eig.eigvals[0]
    if not lam_max > 0:
        raise NoInteriorFace("phase-I witness has no positive eigenvalue")
    keep = eig.eigvals >= rank_tol * lam_max
    return FaceBasis(eig.basis[:, keep], rank_tol, W)


def phase1_dual(A_list, b=None, opts: SolverOptions | None = None, rank_tol: float = RANK_TOL):
    """Face witness from the dual side.

    Without ``b``: Y ranges over symmetric matrices with <Y, A_i> = 0.
    With ``b``: Y = sum y_i A_i subject to y.b = 0 (equality-form data
    <A_i, rho> = b_i).  Returns a FaceBasis for the null space of the
    maximal-rank witness, or FULL_DIMENSIONAL when no nonzero witness exists.
    """
    opts = opts or SolverOptions()
    A_list, n = _check_list(A_list)
    if b is None:
        S = _sym_basis(n)
        G = np.column_stack([vec(A) for A in A_list]).T @ S
        # basis of {y : <S y, A_i> = 0}
        if np.linalg.norm(G) == 0:
            N = np.eye(S.shape[1])
        else:
            u, sv, vt = np.linalg.svd(G, full_matrices=True)
            rank = int(np.sum(sv > max(G.shape) * np.finfo(float).eps * sv[0]))
            N = vt[rank:].T
        if N.shape[1] == 0:
            return FULL_DIMENSIONAL
        B = S @ N
        E = np.empty((0, B.shape[1]))
        d = np.empty(0)
    else:
        b = np.asarray(b, dtype=float).ravel()
        if b.shape[0] != len(A_list):
            raise DimensionMismatch(f"{len(A_list)} matrices but {b.shape[0]} right-hand sides")
        B = np.column_stack([vec(A) for A in A_list])
        E = b[None, :]
        d = np.zeros(1)
    tr = vec(np.eye(n)) @ B
    E = np.vstack([E, tr[None, :]])
    d = np.concatenate([d, [float(n)]])
    if np.linalg.norm(tr) < 1e-12 * max(1.0, np.linalg.norm(B)):
        return FULL_DIMENSIONAL
    try:
        y, s, _ = _max_eig_sdp(B, E, d, n, opts)
    except Exception as exc:
        from .errors import Inconsistent

        if isinstance(exc, Inconsistent):
            return FULL_DIMENSIONAL
        raise
    W = mat(B @ y, n)
    W = 0.5 * (W + W.T)
    lam_max = np.linalg.eigvalsh(W)[-1]
    if s < -rank_tol * max(lam_max, 1.0):
        # no nonzero psd matrix is orthogonal to the data
        return FULL_DIMENSIONAL
    face = _null_face(W, rank_tol)
    if face.rank == 0:
        raise NoInteriorFace("the witness is positive definite: only the zero matrix is feasible")
    return face


def phase1_primal(A_list, A0=None, lower=None, upper=None, opts: SolverOptions | None = None,
                  rank_tol: float = RANK_TOL):
    """Maximal-rank point of {A0 + sum x_i A_i psd, lower <= x <= upper}.

    Returns (x0, face) with ``face`` spanning the range of the witness.
    Raises Infeasible when no x in the box gives a psd matrix.
    """
    opts = opts or SolverOptions()
    A_list, n = _check_list(A_list)
    k = len(A_list)
    A0 = np.zeros((n, n)) if A0 is None else np.asarray(A0, dtype=float)
    lower = np.full(k, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(k, np.inf) if upper is None else np.asarray(upper, dtype=float)
    if lower.shape != (k,) or upper.shape != (k,):
        raise DimensionMismatch("bounds must have one entry per data matrix")
    if np.any(lower >= upper):
        raise Infeasible("empty box: some lower bound is not below its upper bound")
    B = np.column_stack([vec(A) for A in A_list])
    blocks = [ConeBlock(ConeKind.PSD, n, np.hstack([-B, vec(np.eye(n))[:, None]]), vec(A0), "phase-I")]
    x = np.zeros(k)
    lo, hi = np.isfinite(lower), np.isfinite(upper)
    both = lo & hi
    x[both] = 0.5 * (lower[both] + upper[both])
    x[lo & ~hi] = lower[lo & ~hi] + 1.0
    x[hi & ~lo] = upper[hi & ~lo] - 1.0
    for idx in np.flatnonzero(lo):
        row = np.zeros((1, k + 1))
        row[0, idx] = -1.0
        blocks.append(ConeBlock(ConeKind.ORTHANT, 1, row, [-lower[idx]], f"x{idx}>=l"))
    for idx in np.flatnonzero(hi):
        row = np.zeros((1, k + 1))
        row[0, idx] = 1.0
        blocks.append(ConeBlock(ConeKind.ORTHANT, 1, row, [upper[idx]], f"x{idx}<=u"))
    if not np.all(both):
        # keeps the homogeneous directions bounded
        row = np.concatenate([-(vec(np.eye(n)) @ B), [float(n)]])[None, :]
        blocks.append(ConeBlock(ConeKind.ORTHANT, 1, row, [float(n) + np.trace(A0)], "trace cap"))
    c = np.zeros(k + 1)
    c[k] = -1.0
    model = Model(c, blocks)
    X = A0 + mat(B @ x, n)
    start = np.concatenate([x, [np.linalg.eigvalsh(0.5 * (X + X.T))[0] - 1.0]])
    if not is_interior(model, start):
        raise NotInterior("phase-I start", detail="trace cap violated by the box midpoint")
    res = solve(model, start, opts)
    if res.status is not Status.OPTIMAL:
        raise NoInteriorFace(f"phase-I SDP ended with status {res.status.value}: {res.message}")
    x_opt, s = res.x[:k], float(res.x[k])
    W = A0 + mat(B @ x_opt, n)
    W = 0.5 * (W + W.T)
    lam_max = np.linalg.eigvalsh(W)[-1]
    if s < -rank_tol * max(lam_max, 1.0):
        raise Infeasible(f"no psd point in the box (max smallest eigenvalue {s:.3e})")
    return x_opt, _range_face(W, rank_tol)


# -- reformulation ------------------------------------------------------------


def _parts(blk: ConeBlock):
    n2 = blk.size**2
    if blk.kind is ConeKind.QRE:
        return [slice(1, 1 + n2), slice(1 + n2, 1 + 2 * n2)]
    if blk.kind is ConeKind.PSD:
        return [slice(0, n2)]
    raise DimensionMismatch(f"{blk.kind.value} blocks carry no matrix data")


def block_matrices(blk: ConeBlock, part: int = 0):
    """(A0, [A_i]) with matrix argument = A0 + sum_i x_i A_i."""
    sl = _parts(blk)[part]
    n = blk.size
    A = blk.A.toarray() if sp.issparse(blk.A) else blk.A
    A0 = mat(blk.b[sl], n)
    return A0, list(mat(-A[sl], n)) if A.shape[1] else []


def _congruence_rows(M, V, n):
    """Rows of vec(V^T mat(col) V) for every column of M (n^2 x k)."""
    out = np.einsum("ia,kij,jb->kab", V, mat(M, n), V)
    return vec(out).T


def _invariant(M, V, n, tol=1e-8):
    """Largest |P_perp mat(col) V| over the columns of M, relative."""
    stack = mat(M, n)
    P = np.eye(n) - V @ V.T
    off = np.einsum("ij,kjl,lb->kib", P, stack, V)
    scale = max(1.0, np.max(np.abs(stack), initial=0.0))
    return np.max(np.abs(off), initial=0.0) / scale


@dataclass
class ReducedProblem:
    model: Model
    face: FaceBasis | _FullDimensional
    block: int

    def back_map(self, x):
        """Decision variables are shared, so the reconstruction is x itself."""
        return np.asarray(x, dtype=float)

    def lift_matrix(self, Xbar):
        if not self.face:
            return Xbar
        V = self.face.V
        return V @ Xbar @ V.T


def reduce_problem(model: Model, face, block: int | None = None) -> ReducedProblem:
    """Restrict the matrix data of one PSD/QRE block to the face V S_+^r V^T.

    For a QRE block both arguments are compressed to r x r; the second
    argument must leave the face invariant (P_perp Y V = 0), otherwise the
    compression would change Tr(X ln Y) and InvariantViolation is raised.
    """
    if block is None:
        block = next((j for j, b in enumerate(model.blocks) if b.kind in (ConeKind.QRE, ConeKind.PSD)), None)
        if block is None:
            raise DimensionMismatch("model has no matrix block to reduce")
    if not face or face.full:
        return ReducedProblem(model, face, block)
    blk = model.blocks[block]
    n, V = blk.size, face.V
    if V.shape[0] != n:
        raise DimensionMismatch(f"face basis has {V.shape[0]} rows, block has size {n}")
    r = V.shape[1]
    A = blk.A.toarray() if sp.issparse(blk.A) else np.asarray(blk.A)
    full = np.column_stack([blk.b, A])
    pieces = []
    if blk.kind is ConeKind.QRE:
        pieces.append(full[:1])
    for j, sl in enumerate(_parts(blk)):
        if j == 1:
            resid = _invariant(full[sl], V, n)
            if resid > 1e-8:
                raise InvariantViolation("face invariance", f"second qre argument leaks {resid:.3e} off the face")
        pieces.append(_congruence_rows(full[sl], V, n))
    red = np.vstack(pieces)
    new = ConeBlock(blk.kind, r, red[:, 1:], red[:, 0], blk.label + f"[face r={r}]")
    blocks = list(model.blocks)
    blocks[block] = new
    meta = dict(model.meta)
    meta.pop("initial_point", None)
    reduced = Model(model.c.copy(), blocks, model.equalities, model.name, meta)
    return ReducedProblem(reduced, face, block)


def compose_faces(outer: FaceBasis, inner: FaceBasis) -> FaceBasis:
    return FaceBasis(outer.V @ inner.V, inner.rank_tol, inner.witness)


# -- driver --------------------------------------------------------------------


@dataclass
class PhaseReport:
    method: str
    phase1_seconds: float
    face_rank: int
    full_size: int
    phase2_iterations: int
    rounds: int
    face: FaceBasis | None = field(default=None, repr=False)

    def as_dict(self):
        return {
            "method": self.method,
            "phase1_seconds": self.phase1_seconds,
            "face_rank": self.face_rank,
            "full_size": self.full_size,
            "phase2_iterations": self.phase2_iterations,
            "rounds": self.rounds,
        }


def _box_from_orthants(model: Model, cols):
    """Per-variable bounds implied by single-variable orthant rows."""
    lower = np.full(len(cols), -np.inf)
    upper = np.full(len(cols), np.inf)
    pos = {c: i for i, c in enumerate(cols)}
    for blk in model.blocks:
        if blk.kind is not ConeKind.ORTHANT:
            continue
        A = blk.A.toarray() if sp.issparse(blk.A) else blk.A
        for row, bval in zip(A, blk.b):
            nz = np.flatnonzero(row)
            if len(nz) != 1 or nz[0] not in pos:
                continue
            a, i = row[nz[0]], pos[nz[0]]
            # b - a x > 0
            if a > 0:
                upper[i] = min(upper[i], bval / a)
            else:
                lower[i] = max(lower[i], bval / a)
    return lower, upper


def _start_for(model: Model, x_hint, opts):
    if x_hint is not None:
        x = np.array(x_hint, dtype=float)
        # lift epigraph variables so t - qre > 0
        for blk in model.blocks:
            if blk.kind is not ConeKind.QRE:
                continue
            A = blk.A.toarray() if sp.issparse(blk.A) else blk.A
            trow = A[0]
            nz = np.flatnonzero(trow)
            if len(nz) != 1 or trow[nz[0]] >= 0:
                continue
            n = blk.size
            z = blk.b - A @ x
            try:
                q = qre_value(mat(z[1 : 1 + n * n], n), mat(z[1 + n * n :], n))
            except Exception:
                continue
            x[nz[0]] += (z[0] - q - 1.0) / trow[nz[0]]
        if model.equalities is None and is_interior(model, x):
            return x
    x = initial_point(model)
    if x is not NO_HEURISTIC:
        return x
    return find_interior(model, x_hint, opts)


def _phase1(model: Model, block: int, method: Method, opts, rank_tol):
    blk = model.blocks[block]
    A0, A_list = block_matrices(blk, 0)
    cols = [i for i, A in enumerate(A_list) if np.any(A)]
    mats = [A_list[i] for i in cols]
    if method is Method.PRIMAL:
        lower, upper = _box_from_orthants(model, cols)
        if not mats:
            return None, FULL_DIMENSIONAL
        x_sub, face = phase1_primal(mats, A0, lower, upper, opts, rank_tol)
        x = np.zeros(model.k)
        x[cols] = x_sub
        return x, face
    data = mats + ([A0] if np.any(A0) else [])
    if not data:
        return None, FULL_DIMENSIONAL
    return None, phase1_dual(data, None, opts, rank_tol)


def two_phase_solve(model: Model, method: Method | str = Method.PRIMAL, opts: SolverOptions | None = None,
                    block: int | None = None, fr_rounds: int = 1, rank_tol: float = RANK_TOL):
    """Phase-I facial reduction on one matrix block, then a Phase-II solve.

    Returns (SolveResult, PhaseReport); the composed face is ``report.face``
    (None when nothing was reduced).  Decision variables are shared by
    the original and reduced models, so ``result.x`` is directly a solution
    of ``model``.
    """
    opts = opts or SolverOptions()
    method = Method(method)
    if block is None:
        block = next((j for j, b in enumerate(model.blocks) if b.kind is ConeKind.QRE), None)
        if block is None:
            raise DimensionMismatch("two-phase solve needs a qre block")
    t0 = time.perf_counter()
    n = model.blocks[block].size
    current, face_total, x_hint, rounds = model, None, None, 0
    for _ in range(max(1, fr_rounds)):
        x1, face = _phase1(current, block, method, opts, rank_tol)
        rounds += 1
        if x1 is not None:
            x_hint = x1
        if not face or face.full:
            break
        current = reduce_problem(current, face, block).model
        face_total = face if face_total is None else compose_faces(face_total, face)
    t1 = time.perf_counter() - t0
    x0 = _start_for(current, x_hint, opts)
    res = solve(current, x0, opts)
    rank = n if face_total is None else face_total.rank
    report = PhaseReport(method.value, t1, rank, n, res.iterations, rounds, face_total)
    res.message = (res.message + "; " if res.message else "") + f"face rank {rank}/{n}"
    return res, report


def direct_solve(model: Model, opts: SolverOptions | None = None) -> SolveResult:
    """One-phase solve: interior start when one is known, shifted homotopy otherwise."""
    opts = opts or SolverOptions()
    x0 = initial_point(model)
    if x0 is not NO_HEURISTIC:
        return solve(model, x0, opts)
    return solve_shifted(model, None, opts)
