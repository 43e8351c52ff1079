"""Feasible-start predictor-corrector path following.

Minimizes ``<c, x>`` over ``{x : b_j - A_j x in int dom_j for all j, E x = d}``
by tracking minimizers of

    f_mu(x) = <c, x>/mu + sum_j Phi_j(b_j - A_j x)

as mu -> 0.  The proximity measure is the Newton decrement of f_mu.  Each
outer iteration takes one predictor step (first-order extrapolation along
the central path, guarded so the decrement at the new mu stays <= delta2)
followed by damped Newton corrector steps until the decrement is < delta1.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cones import ConeBlock, ConeKind, model_barrier
from .errors import DimensionMismatch, DomainViolation, Inconsistent, NoConvergence, NotInterior, QreError

log = logging.getLogger(__name__)


@dataclass
class Model:
    c: np.ndarray
    blocks: list[ConeBlock]
    equalities: tuple[np.ndarray, np.ndarray] | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        k = self.c.shape[0]
        for j, blk in enumerate(self.blocks):
            if blk.ncols != k:
                raise DimensionMismatch(f"block {j} has {blk.ncols} columns, objective has {k}")
        if self.equalities is not None:
            E, d = self.equalities
            E = np.atleast_2d(np.asarray(E.toarray() if sp.issparse(E) else E, dtype=float))
            d = np.asarray(d, dtype=float).ravel()
            if E.shape[1] != k or E.shape[0] != d.shape[0]:
                raise DimensionMismatch(f"equalities E{E.shape} / d{d.shape} do not match k={k}")
            self.equalities = (E, d)

    @property
    def k(self) -> int:
        return self.c.shape[0]

    @property
    def nu(self) -> float:
        return float(sum(blk.nu for blk in self.blocks))


@dataclass
class SolverOptions:
    tol: float = 1e-8
    delta1: float = 0.1
    delta2: float = 0.5
    mu_shrink: float = 0.3
    max_iters: int = 400
    ls_backtrack: float = 0.5
    corrector_max: int = 50
    dense_max: int = 2000
    # analytic-center solves (zero objective) stop at this decrement
    center_tol: float = 1e-9

    def __post_init__(self):
        if not 0 < self.delta1 < self.delta2:
            raise ValueError("need 0 < delta1 < delta2")
        if not 0 < self.mu_shrink < 1:
            raise ValueError("need 0 < mu_shrink < 1")
        if not self.tol > 0:
            raise ValueError("need tol > 0")
        if not 0 < self.ls_backtrack < 1:
            raise ValueError("need 0 < ls_backtrack < 1")


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITERS = "MaxIters"
    NUMERICAL_TROUBLE = "NumericalTrouble"


@dataclass
class IterRecord:
    kind: str
    mu: float
    omega: float
    step: float
    objective: float
    x: np.ndarray = field(repr=False)


@dataclass
class SolveResult:
    x: np.ndarray
    objective: float
    status: Status
    iterations: int
    newton_steps: int
    mu_final: float
    nu: float
    trace: list[IterRecord] = field(default_factory=list, repr=False)
    message: str = ""
    seconds: float = 0.0
    shift_final: float = 0.0

    def certificate_holds(self, tol: float) -> bool:
        return self.mu_final * self.nu <= tol * (1 + abs(self.objective))


class _Stall(QreError):
    pass


class NoHeuristic:
    """Returned by :func:`initial_point` when no family heuristic applies."""

    def __repr__(self):
        return "NoHeuristic"

    def __bool__(self):
        return False


NO_HEURISTIC = NoHeuristic()


# -- equality constraints ---------------------------------------------------


def nullspace_parametrize(E, d, x_ref=None, rtol: float = 1e-8):
    """Return (N, x_particular) with {x : E x = d} = {x_particular + N w}.

    N has orthonormal columns spanning null(E).  x_particular is the
    least-norm solution, or the projection of ``x_ref`` onto the affine set.
    """
    E = np.atleast_2d(np.asarray(E.toarray() if sp.issparse(E) else E, dtype=float))
    d = np.asarray(d, dtype=float).ravel()
    k = E.shape[1]
    if E.shape[0] == 0:
        xp = np.zeros(k) if x_ref is None else np.asarray(x_ref, dtype=float).copy()
        return np.eye(k), xp
    U, s, Vt = np.linalg.svd(E, full_matrices=True)
    rank = int(np.sum(s > max(E.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)))
    xp = Vt[:rank].T @ ((U[:, :rank].T @ d) / s[:rank])
    resid = np.linalg.norm(E @ xp - d)
    if resid > rtol * (1 + np.linalg.norm(d)):
        raise Inconsistent(f"equality constraints inconsistent (residual {resid:.3e})")
    N = Vt[rank:].T.copy()
    if x_ref is not None:
        x_ref = np.asarray(x_ref, dtype=float)
        xp = xp + N @ (N.T @ (x_ref - xp))
    return N, xp


@dataclass
class _Reduced:
    model: Model
    N: np.ndarray | None
    xp: np.ndarray | None
    offset: float

    def lift(self, w):
        return w if self.N is None else self.xp + self.N @ w

    def project(self, x):
        return x if self.N is None else self.N.T @ (x - self.xp)


def eliminate_equalities(model: Model, x_ref=None) -> _Reduced:
    if model.equalities is None:
        return _Reduced(model, None, None, 0.0)
    E, d = model.equalities
    N, xp = nullspace_parametrize(E, d, x_ref)
    blocks = [ConeBlock(blk.kind, blk.size, np.asarray(blk.A @ N), blk.b - blk.A @ xp, blk.label) for blk in model.blocks]
    reduced = Model(N.T @ model.c, blocks, None, model.name, dict(model.meta))
    return _Reduced(reduced, N, xp, float(model.c @ xp))


# -- Newton systems -----------------------------------------------------------


@dataclass
class _Newton:
    x: np.ndarray
    mu: float
    omega: float
    direction: np.ndarray
    solve: Callable[[np.ndarray], np.ndarray]
    agg: object


def _hessian_solver(agg, opts: SolverOptions):
    k = agg.grad.shape[0]
    if k == 0:
        return lambda r: np.zeros(0)
    if k <= opts.dense_max:
        H = agg.hess_matrix()
        scale = np.sqrt(np.clip(np.diag(H), np.finfo(float).tiny, None))
        Hs = H / np.outer(scale, scale)
        try:
            cho = sla.cho_factor(Hs, check_finite=True)
            return lambda r: sla.cho_solve(cho, r / scale) / scale
        except (np.linalg.LinAlgError, ValueError):
            w, V = np.linalg.eigh(Hs)
            if not np.all(np.isfinite(w)) or w[-1] <= 0:
                raise NoConvergence("aggregate Hessian is not positive definite") from None
            w = np.clip(w, w[-1] * 1e-15, None)
            return lambda r: (V @ ((V.T @ (r / scale)) / w)) / scale
    op = spla.LinearOperator((k, k), matvec=agg.hess_apply, dtype=float)

    def cg_solve(r):
        z, info = spla.cg(op, r, rtol=1e-11, maxiter=10 * k)
        if info != 0:
            raise NoConvergence(f"CG on the aggregate Hessian failed (info={info})")
        return z

    return cg_solve


def _newton(model: Model, x, mu, opts, shift=0.0) -> _Newton:
    agg = model_barrier(model, x, shift)
    g = model.c / mu + agg.grad
    solve = _hessian_solver(agg, opts)
    direction = -solve(g)
    dec2 = -g @ direction
    omega = float(np.sqrt(max(dec2, 0.0)))
    return _Newton(x, mu, omega, direction, solve, agg)


def centrality(model: Model, x, mu, opts: SolverOptions | None = None, shift: float = 0.0):
    """Newton decrement of f_mu at x and the Newton direction."""
    nt = _newton(model, np.asarray(x, dtype=float), mu, opts or SolverOptions(), shift)
    return nt.omega, nt.direction


def _interior(model, x, shift):
    try:
        model_barrier(model, x, shift)
    except (NotInterior, DomainViolation, np.linalg.LinAlgError):
        return False
    return True


class _Run:
    """Mutable state of one solver run."""

    def __init__(self, model: Model, opts: SolverOptions, shift_rate: float = 0.0):
        self.model = model
        self.opts = opts
        self.shift_rate = shift_rate
        self.trace: list[IterRecord] = []
        self.newton_steps = 0

    def shift(self, mu):
        return self.shift_rate * mu

    def record(self, kind, x, mu, omega, step):
        self.trace.append(IterRecord(kind, mu, omega, step, float(self.model.c @ x), x.copy()))

    def corrector(self, x, mu, threshold=None, cap=None):
        threshold = self.opts.delta1 if threshold is None else threshold
        cap = self.opts.corrector_max if cap is None else cap
        tau = self.shift(mu)
        nt = _newton(self.model, x, mu, self.opts, tau)
        for _ in range(cap):
            if nt.omega < threshold:
                return x, nt
            alpha = 1.0 if nt.omega < 0.25 else 1.0 / (1.0 + nt.omega)
            while True:
                cand = x + alpha * nt.direction
                if _interior(self.model, cand, tau):
                    break
                alpha *= self.opts.ls_backtrack
                if alpha < 1e-12:
                    raise _Stall("corrector step collapsed")
            x = cand
            self.newton_steps += 1
            nt = _newton(self.model, x, mu, self.opts, tau)
            self.record("corrector", x, mu, nt.omega, alpha)
        if nt.omega < threshold:
            return x, nt
        raise NoConvergence(f"corrector did not reach decrement {threshold} in {cap} steps (omega={nt.omega:.3e})")

    def predictor(self, nt: _Newton):
        """Extrapolate along the central path from a near-central point.

        dx/dmu = H^{-1} (c/mu^2 + rate * sum_j A_j^T Phi_j'' e_j); the current
        centering residual is corrected in the same step.
        """
        x, mu = nt.x, nt.mu
        rhs = self.model.c / mu**2
        if self.shift_rate:
            q = np.zeros_like(x)
            for blk, ev in zip(self.model.blocks, nt.agg.evals):
                q += blk.A.T @ ev.hess_apply(blk.unit())
            rhs = rhs + self.shift_rate * q
        tangent = nt.solve(rhs)
        reduction = 1.0 - self.opts.mu_shrink
        while reduction > 1e-12:
            mu_new = mu * (1.0 - reduction)
            cand = x + nt.direction + (mu_new - mu) * tangent
            if _interior(self.model, cand, self.shift(mu_new)):
                nt_new = _newton(self.model, cand, mu_new, self.opts, self.shift(mu_new))
                if nt_new.omega <= self.opts.delta2:
                    self.newton_steps += 1
                    self.record("predictor", cand, mu_new, nt_new.omega, 1.0 - reduction)
                    return cand, mu_new, nt_new
            reduction *= self.opts.ls_backtrack
        raise _Stall("predictor could not reduce mu")


def _initial_mu(model: Model, x, opts, shift=0.0):
    agg = model_barrier(model, x, shift)
    solve = _hessian_solver(agg, opts)
    Hc = solve(model.c)
    cHc = float(model.c @ Hc)
    if not cHc > 0:
        return 1.0
    s = -float(agg.grad @ Hc) / cHc
    mu_min = np.sqrt(cHc) / (10 * np.sqrt(max(agg.nu, 1.0)))
    if s > 0 and np.isfinite(s):
        return max(1.0 / s, mu_min)
    return float(np.sqrt(cHc))


def _run(model: Model, x0, opts: SolverOptions, shift_rate=0.0, mu0=None, stop_when=None) -> SolveResult:
    t_start = time.perf_counter()
    nu = model.nu
    run = _Run(model, opts, shift_rate)
    x = np.asarray(x0, dtype=float).copy()
    zero_objective = not np.any(np.abs(model.c) > 1e-14 * max(1.0, np.max(np.abs(model.c), initial=0.0)))
    mu = 1.0 if zero_objective else (mu0 if mu0 is not None else _initial_mu(model, x, opts, run.shift(1.0)))
    status, message, iterations = Status.NUMERICAL_TROUBLE, "", 0

    def done(status, message=""):
        obj = float(model.c @ x)
        return SolveResult(
            x=x, objective=obj, status=status, iterations=iterations, newton_steps=run.newton_steps,
            mu_final=mu, nu=nu, trace=run.trace, message=message,
            seconds=time.perf_counter() - t_start, shift_final=run.shift(mu),
        )

    try:
        if zero_objective:
            x, _ = run.corrector(x, mu, threshold=opts.center_tol, cap=max(opts.corrector_max, 100))
            mu = 0.0
            return done(Status.OPTIMAL, "analytic center (objective is constant)")
        x, nt = run.corrector(x, mu, cap=max(opts.corrector_max, 200))
        while True:
            if stop_when is not None and stop_when(x):
                return done(Status.OPTIMAL, "stopping predicate satisfied")
            if mu * nu <= opts.tol * (1 + abs(float(model.c @ x))):
                return done(Status.OPTIMAL)
            if iterations >= opts.max_iters:
                return done(Status.MAX_ITERS, f"reached {opts.max_iters} predictor iterations")
            x, mu, nt = run.predictor(nt)
            iterations += 1
            x, nt = run.corrector(x, mu)
    except (_Stall, NoConvergence, NotInterior, np.linalg.LinAlgError, FloatingPointError, QreError) as exc:
        log.debug("solver stopped: %s", exc)
        status, message = Status.NUMERICAL_TROUBLE, str(exc)
    return done(status, message)


def _lift_result(res: SolveResult, red: _Reduced, model: Model) -> SolveResult:
    x = red.lift(res.x)
    trace = [replace(r, x=red.lift(r.x), objective=r.objective + red.offset) for r in res.trace]
    return replace(res, x=x, objective=float(model.c @ x), trace=trace)


def solve(model: Model, x0, opts: SolverOptions | None = None, stop_when=None) -> SolveResult:
    """Path-following solve from a strictly interior x0 (E x0 = d if equalities exist)."""
    opts = opts or SolverOptions()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.k,):
        raise DimensionMismatch(f"x0 has shape {x0.shape}, expected ({model.k},)")
    red = eliminate_equalities(model, x_ref=x0)
    if red.N is not None:
        E, d = model.equalities
        if np.linalg.norm(E @ x0 - d) > 1e-8 * (1 + np.linalg.norm(d)):
            raise NotInterior("E x0 = d")
    w0 = red.project(x0)
    model_barrier(red.model, w0)  # raises NotInterior with the block index
    sw = None if stop_when is None else (lambda w: stop_when(red.lift(w)))
    res = _run(red.model, w0, opts, stop_when=sw)
    return _lift_result(res, red, model)


def solve_shifted(model: Model, x0=None, opts: SolverOptions | None = None) -> SolveResult:
    """Path following for models without a known interior point.

    Every block is relaxed to ``b - A x + tau e_j`` with ``tau`` proportional
    to mu, so the relaxation vanishes along the path.  The returned x is
    feasible up to ``result.shift_final``.
    """
    opts = opts or SolverOptions()
    red = eliminate_equalities(model, x_ref=x0)
    w = np.zeros(red.model.k) if x0 is None else red.project(np.asarray(x0, dtype=float))
    tau = 0.0
    if not _interior(red.model, w, 0.0):
        tau = 1.0
        while not _interior(red.model, w, tau):
            tau *= 2.0
            if tau > 1e12:
                raise NotInterior("no shift makes the start interior")
        tau *= 2.0
    if tau == 0.0:
        return _lift_result(_run(red.model, w, opts), red, model)
    mu0 = _initial_mu(red.model, w, opts, tau)
    res = _run(red.model, w, opts, shift_rate=tau / mu0, mu0=mu0)
    return _lift_result(res, red, model)


# -- starting points ------------------------------------------------------------


def initial_point(model: Model):
    """Family heuristics for a strictly interior start; NO_HEURISTIC otherwise."""
    hint = model.meta.get("initial_point")
    if hint is not None:
        x = np.asarray(hint, dtype=float)
        if x.shape == (model.k,) and _feasible_start(model, x):
            return x
    if model.meta.get("family") == "nearcorr":
        x = _nearcorr_start(model)
        if x is not None and _feasible_start(model, x):
            return x
    x = np.zeros(model.k)
    if _feasible_start(model, x):
        return x
    return NO_HEURISTIC


def _feasible_start(model, x):
    if model.equalities is not None:
        E, d = model.equalities
        if np.linalg.norm(E @ x - d) > 1e-8 * (1 + np.linalg.norm(d)):
            return False
    return _interior(model, x, 0.0)


def _nearcorr_start(model: Model):
    """Y = I (all off-diagonal variables zero) and t = qre(M, I) + 1."""
    from .qre_barrier import qre_value
    from .matcalc import mat

    t_index = model.meta.get("t_index", 0)
    blk = next((b for b in model.blocks if b.kind is ConeKind.QRE), None)
    if blk is None:
        return None
    n = blk.size
    x = np.zeros(model.k)
    z = blk.slack(x)
    try:
        q = qre_value(mat(z[1 : 1 + n * n], n), mat(z[1 + n * n :], n))
    except QreError:
        return None
    x[t_index] = q + 1.0
    return x


def find_interior(model: Model, x_guess=None, opts: SolverOptions | None = None) -> np.ndarray:
    """Phase-I: maximize sigma with b_j - A_j x - sigma e_j interior, sigma <= 1.

    Stops as soon as the original blocks are interior.  Raises NotInterior
    when the optimal sigma is not positive.
    """
    opts = opts or SolverOptions()
    red = eliminate_equalities(model, x_ref=x_guess)
    base = red.model
    k = base.k
    w = np.zeros(k) if x_guess is None else red.project(np.asarray(x_guess, dtype=float))
    if _interior(base, w, 0.0):
        return red.lift(w)
    blocks = []
    for blk in base.blocks:
        A = blk.A.toarray() if sp.issparse(blk.A) else blk.A
        blocks.append(ConeBlock(blk.kind, blk.size, np.hstack([A, blk.unit()[:, None]]), blk.b, blk.label))
    cap = np.zeros((1, k + 1))
    cap[0, k] = 1.0
    blocks.append(ConeBlock(ConeKind.ORTHANT, 1, cap, [1.0], "sigma<=1"))
    tau = 1.0
    while not _interior(base, w, tau):
        tau *= 2.0
        if tau > 1e12:
            raise NotInterior("could not build a phase-I start")
    # a wide box around the guess keeps epigraph variables from running off,
    # which would leave the auxiliary barrier without a minimizer
    radius = 1e3 * max(1.0, tau, np.max(np.abs(w), initial=0.0))
    box = np.hstack([np.vstack([np.eye(k), -np.eye(k)]), np.zeros((2 * k, 1))])
    blocks.append(ConeBlock(ConeKind.ORTHANT, 2 * k, box, np.concatenate([w + radius, radius - w]), "box"))
    c = np.zeros(k + 1)
    c[k] = -1.0
    aux = Model(c, blocks)
    start = np.concatenate([w, [-2.0 * tau]])

    def interior_now(v):
        return v[k] > 0 and _interior(base, v[:k], 0.0)

    res = _run(aux, start, opts, stop_when=interior_now)
    if not interior_now(res.x):
        raise NotInterior("no strictly feasible point", detail=f"phase-I sigma = {res.x[k]:.3e} ({res.status.value})")
    return red.lift(res.x[:k])
