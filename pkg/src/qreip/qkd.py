"""Key-rate computation for QKD protocols.

    p = min qre(G(rho), Z(G(rho)))   s.t.  <A_i, rho> = b_i,  rho psd
    R = p / ln 2 - delta_EC

G is a Kraus channel and Z a pinching.  Complex Hermitian data is carried
as numpy complex arrays and only enters the solver through the real
embedding X -> [[Re X, -Im X], [Im X, Re X]], which doubles qre values.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .cones import ConeBlock, ConeKind, is_interior
from .errors import (
    DimensionMismatch,
    DomainViolation,
    Infeasible,
    Inconsistent,
    InvariantViolation,
    NotHermitian,
    ParseError,
)
from .ipm import Model, SolverOptions, Status, find_interior, nullspace_parametrize, solve, solve_shifted
from .matcalc import vec
from .qre_barrier import qre_value
from .twophase import RANK_TOL, FULL_DIMENSIONAL, phase1_dual

HERM_TOL = 1e-12
CHANNEL_TOL = 1e-10
REDUCE_EPS = 1e-10


@dataclass(frozen=True)
class ComplexMatrix:
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        re = np.atleast_2d(np.asarray(self.re, dtype=float))
        im = np.zeros_like(re) if self.im is None else np.atleast_2d(np.asarray(self.im, dtype=float))
        if re.shape != im.shape:
            raise DimensionMismatch(f"real part {re.shape} and imaginary part {im.shape} differ")
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @classmethod
    def from_array(cls, M) -> "ComplexMatrix":
        M = np.asarray(M, dtype=complex)
        return cls(M.real.copy(), M.imag.copy())

    def to_array(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def shape(self):
        return self.re.shape

    def is_hermitian(self, tol: float = HERM_TOL) -> bool:
        if self.re.shape[0] != self.re.shape[1]:
            return False
        scale = max(1.0, np.max(np.abs(self.re), initial=0.0), np.max(np.abs(self.im), initial=0.0))
        return (np.max(np.abs(self.re - self.re.T), initial=0.0) <= tol * scale
                and np.max(np.abs(self.im + self.im.T), initial=0.0) <= tol * scale)


def bar(M) -> np.ndarray:
    """Real 2n x 2m image of a complex n x m matrix (a *-homomorphism)."""
    M = M.to_array() if isinstance(M, ComplexMatrix) else np.asarray(M, dtype=complex)
    return np.block([[M.real, -M.imag], [M.imag, M.real]])


def unbar(B: np.ndarray) -> np.ndarray:
    n, m = B.shape[0] // 2, B.shape[1] // 2
    return B[:n, :m] + 1j * B[n:, :m]


def herm_to_real(X) -> np.ndarray:
    """Symmetric embedding of a Hermitian matrix; eigenvalues are doubled."""
    X = X if isinstance(X, ComplexMatrix) else ComplexMatrix.from_array(X)
    if not X.is_hermitian():
        raise NotHermitian("matrix is not Hermitian within 1e-12")
    B = bar(X)
    return 0.5 * (B + B.T)


def _herm(M):
    return 0.5 * (M + M.conj().T)


@dataclass
class KrausChannel:
    K: list

    def __post_init__(self):
        self.K = [np.atleast_2d(np.asarray(k, dtype=complex)) for k in self.K]
        if not self.K:
            raise DimensionMismatch("a channel needs at least one Kraus operator")
        shape = self.K[0].shape
        if any(k.shape != shape for k in self.K):
            raise DimensionMismatch("Kraus operators must share one shape")

    @property
    def n_in(self) -> int:
        return self.K[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.K[0].shape[0]

    def check(self, tol: float = CHANNEL_TOL):
        S = sum(k @ k.conj().T for k in self.K)
        top = np.linalg.eigvalsh(_herm(S))[-1]
        if top > 1.0 + tol:
            raise InvariantViolation("kraus trace non-increase", f"largest eigenvalue of sum K K^dag is {top:.12g}")

    def restrict(self, V) -> "KrausChannel":
        return KrausChannel([k @ V for k in self.K])


@dataclass
class PinchingMap:
    Z: list

    def __post_init__(self):
        self.Z = [np.atleast_2d(np.asarray(z, dtype=complex)) for z in self.Z]
        if not self.Z:
            raise DimensionMismatch("a pinching needs at least one projector")
        n = self.Z[0].shape[0]
        if any(z.shape != (n, n) for z in self.Z):
            raise DimensionMismatch("pinching projectors must be square and of equal size")

    @property
    def n(self) -> int:
        return self.Z[0].shape[0]

    def check(self, tol: float = CHANNEL_TOL):
        for j, z in enumerate(self.Z):
            if np.max(np.abs(z - z.conj().T)) > tol:
                raise InvariantViolation("pinching hermiticity", f"Z[{j}] is not Hermitian")
            if np.max(np.abs(z @ z - z)) > tol:
                raise InvariantViolation("pinching idempotence", f"Z[{j}]^2 != Z[{j}]")
        if np.max(np.abs(sum(self.Z) - np.eye(self.n))) > tol:
            raise InvariantViolation("pinching completeness", "sum of projectors is not the identity")

    def is_orthogonal(self, tol: float = CHANNEL_TOL) -> bool:
        return all(np.max(np.abs(a @ b), initial=0.0) <= tol
                   for i, a in enumerate(self.Z) for b in self.Z[i + 1 :])


def apply_G(ch: KrausChannel, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (ch.n_in, ch.n_in):
        raise DimensionMismatch(f"rho is {rho.shape}, channel input is {ch.n_in}")
    return _herm(sum(k @ rho @ k.conj().T for k in ch.K))


def apply_Z(p: PinchingMap, delta) -> np.ndarray:
    delta = np.asarray(delta, dtype=complex)
    if delta.shape != (p.n, p.n):
        raise DimensionMismatch(f"delta is {delta.shape}, pinching acts on {p.n}")
    return _herm(sum(z @ delta @ z for z in p.Z))


def _herm_log_on_range(M, eps=1e-14):
    lam, U = np.linalg.eigh(_herm(M))
    if lam[0] < -eps * max(1.0, abs(lam[-1])):
        raise DomainViolation(f"matrix has eigenvalue {lam[0]:.3e} < 0")
    keep = lam > eps * max(1.0, lam[-1])
    Ur = U[:, keep]
    return Ur, lam[keep]


def pinching_identity_check(p: PinchingMap, delta) -> float:
    """|Tr(delta ln Z(delta)) - Tr(Z(delta) ln Z(delta))|, logs taken on the range."""
    delta = np.asarray(delta, dtype=complex)
    Zd = apply_Z(p, delta)
    U, lam = _herm_log_on_range(Zd)
    L = (U * np.log(lam)) @ U.conj().T
    lhs = np.trace(delta @ L).real
    rhs = float(np.sum(lam * np.log(lam)))
    return abs(lhs - rhs)


def qre_complex(X, Y) -> float:
    """qre for Hermitian X psd, Y pd through complex eigendecompositions."""
    lx, Ux = np.linalg.eigh(_herm(np.asarray(X, dtype=complex)))
    ly, Uy = np.linalg.eigh(_herm(np.asarray(Y, dtype=complex)))
    if ly[0] <= 0:
        raise DomainViolation("Y must be positive definite")
    lx = np.clip(lx, 0.0, None)
    xlnx = float(np.sum(np.where(lx > 0, lx * np.log(np.where(lx > 0, lx, 1.0)), 0.0)))
    lnY = (Uy * np.log(ly)) @ Uy.conj().T
    return xlnx - float(np.trace(np.asarray(X) @ lnY).real)


@dataclass
class DimensionReduction:
    U: np.ndarray
    V: np.ndarray
    eigvals: np.ndarray
    channel: KrausChannel
    pinching: PinchingMap

    @property
    def n_bar(self) -> int:
        return self.U.shape[1]

    def G_red(self, rho):
        return _herm(self.U.conj().T @ apply_G(self.channel, rho) @ self.U)

    def ZG_red(self, rho):
        return _herm(self.U.conj().T @ apply_Z(self.pinching, apply_G(self.channel, rho)) @ self.U)

    def null_residuals(self):
        """max ||K_j^dag v|| and max ||K_j^dag Z_i^dag v|| over discarded v."""
        if self.V.shape[1] == 0:
            return 0.0, 0.0
        r1 = max(np.linalg.norm(k.conj().T @ self.V, axis=0).max() for k in self.channel.K)
        r2 = max(np.linalg.norm(k.conj().T @ z.conj().T @ self.V, axis=0).max()
                 for k in self.channel.K for z in self.pinching.Z)
        return float(r1), float(r2)


def reduce_dimension(G: KrausChannel, Z: PinchingMap, eps: float = REDUCE_EPS) -> DimensionReduction:
    """Compress both qre arguments onto the range of Z(G(I))."""
    if Z.n != G.n_out:
        raise DimensionMismatch(f"pinching acts on {Z.n}, channel outputs {G.n_out}")
    W = apply_Z(Z, apply_G(G, np.eye(G.n_in)))
    lam, Q = np.linalg.eigh(W)
    lam, Q = lam[::-1], Q[:, ::-1]
    keep = lam > eps * max(lam[0], 0.0)
    return DimensionReduction(Q[:, keep], Q[:, ~keep], lam, G, Z)


@dataclass
class QkdProblem:
    G: KrausChannel
    Z: PinchingMap
    constraints: list
    delta_EC: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.constraints = [(np.atleast_2d(np.asarray(A, dtype=complex)), float(b)) for A, b in self.constraints]

    @property
    def n(self) -> int:
        return self.G.n_in

    def validate(self):
        self.G.check()
        self.Z.check()
        if self.Z.n != self.G.n_out:
            raise DimensionMismatch(f"pinching acts on {self.Z.n}, channel outputs {self.G.n_out}")
        n = self.n
        has_trace = False
        for i, (A, b) in enumerate(self.constraints):
            if A.shape != (n, n):
                raise DimensionMismatch(f"constraint {i} matrix is {A.shape}, rho is {n}x{n}")
            if np.max(np.abs(A - A.conj().T)) > HERM_TOL * max(1.0, np.max(np.abs(A))):
                raise NotHermitian(f"constraint {i} matrix is not Hermitian")
            c = A[0, 0].real
            if c != 0 and np.max(np.abs(A - c * np.eye(n))) <= HERM_TOL * abs(c) and abs(b - c) <= 1e-12 * abs(c):
                has_trace = True
        if not has_trace:
            raise InvariantViolation("trace constraint", "no constraint fixes Tr rho = 1")
        return self


def _herm_basis(n):
    """Real-coefficient basis of n x n Hermitian matrices (n^2 elements)."""
    out = []
    for i in range(n):
        E = np.zeros((n, n), dtype=complex)
        E[i, i] = 1.0
        out.append(E)
    for i in range(n):
        for j in range(i + 1, n):
            E = np.zeros((n, n), dtype=complex)
            E[i, j] = E[j, i] = 1.0
            out.append(E)
            F = np.zeros((n, n), dtype=complex)
            F[i, j], F[j, i] = -1j, 1j
            out.append(F)
    return out


@dataclass
class RateReport:
    n: int
    k: int
    n_face: int
    k_bar: int
    embedded_sizes: tuple
    status: str
    iterations: int
    newton_steps: int
    seconds: float
    phase1_seconds: float
    pinching_residual: float
    message: str = ""
    result: object = field(default=None, repr=False)

    def as_dict(self):
        d = {key: val for key, val in self.__dict__.items() if key != "result"}
        d["embedded_sizes"] = list(self.embedded_sizes)
        return d


def _rho_face(prob: QkdProblem, opts, rank_tol):
    """Facial reduction of {rho psd : <A_i, rho> = b_i} through the real embedding."""
    mats = [herm_to_real(_herm(A)) for A, _ in prob.constraints]
    b = np.array([bv for _, bv in prob.constraints])
    face = phase1_dual(mats, b, opts, rank_tol)
    if not face:
        return None
    W = unbar(0.5 * (face.witness + face.witness.T))
    lam, Q = np.linalg.eigh(_herm(W))
    keep = lam <= rank_tol * max(lam[-1], 0.0)
    if np.all(keep):
        return None
    return Q[:, keep]


def build_rate_model(prob: QkdProblem, V, red: DimensionReduction):
    """Real model over x = (t, theta) with rho_bar = sum theta_p H_p.

    Blocks: qre(bar U^dag G(V rho_bar V^dag) U, bar U^dag Z(G(...)) U) <= t
    and bar(rho_bar) psd.  Equalities carry <V^dag A_i V, rho_bar> = b_i.
    """
    nb = V.shape[1]
    basis = _herm_basis(nb)
    m = 2 * red.n_bar
    Xcols, Ycols, Rcols = [], [], []
    for H in basis:
        rho = V @ H @ V.conj().T
        Xcols.append(vec(herm_to_real(red.G_red(rho))))
        Ycols.append(vec(herm_to_real(red.ZG_red(rho))))
        Rcols.append(vec(herm_to_real(H)))
    p = len(basis)
    k = 1 + p
    A = np.zeros((1 + 2 * m * m, k))
    A[0, 0] = -1.0
    A[1 : 1 + m * m, 1:] = -np.column_stack(Xcols)
    A[1 + m * m :, 1:] = -np.column_stack(Ycols)
    qblk = ConeBlock(ConeKind.QRE, m, A, np.zeros(1 + 2 * m * m), "qre(G(rho), Z(G(rho)))")
    R = np.zeros((4 * nb * nb, k))
    R[:, 1:] = -np.column_stack(Rcols)
    pblk = ConeBlock(ConeKind.PSD, 2 * nb, R, np.zeros(4 * nb * nb), "rho psd")
    E = np.zeros((len(prob.constraints), k))
    d = np.zeros(len(prob.constraints))
    for i, (Ai, bi) in enumerate(prob.constraints):
        Ar = V.conj().T @ Ai @ V
        E[i, 1:] = [np.trace(Ar @ H).real for H in basis]
        d[i] = bi
    c = np.zeros(k)
    c[0] = 1.0
    return Model(c, [qblk, pblk], (E, d), name=prob.meta.get("name", "qkd"), meta={"family": "qkd"}), basis


def _center_rho(model: Model, opts):
    """Analytic center of the rho-spectrahedron, with t lifted above the qre."""
    qblk, pblk = model.blocks
    E, d = model.equalities
    rho_only = Model(np.zeros(model.k - 1), [pblk.with_columns(pblk.A[:, 1:])], (E[:, 1:], d))
    theta = find_interior(rho_only, None, opts)
    theta = solve(rho_only, theta, opts).x
    x = np.concatenate([[0.0], theta])
    m = qblk.size
    z = qblk.slack(x)
    try:
        val = qre_value(z[1 : 1 + m * m].reshape(m, m, order="F"), z[1 + m * m :].reshape(m, m, order="F"))
    except (DomainViolation, ValueError):
        return None
    x[0] = val + 1.0
    return x


def qkd_rate(prob: QkdProblem, opts: SolverOptions | None = None, rank_tol: float = RANK_TOL,
             eps: float = REDUCE_EPS, facial_reduction: bool = True):
    """Returns (rate, p_opt, RateReport)."""
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    prob.validate()
    n, k_out = prob.n, prob.G.n_out
    V = None
    t_ph1 = 0.0
    if facial_reduction:
        V = _rho_face(prob, opts, rank_tol)
        t_ph1 = time.perf_counter() - t0
    if V is None:
        V = np.eye(n, dtype=complex)
    G_face = prob.G.restrict(V)
    red = reduce_dimension(G_face, prob.Z, eps)
    red_full = DimensionReduction(red.U, red.V, red.eigvals, prob.G, prob.Z)
    # sanity gate on the data: the pinching identity at Z(G(I))
    delta = apply_G(prob.G, V @ V.conj().T / V.shape[1])
    try:
        resid = pinching_identity_check(prob.Z, delta)
    except DomainViolation:
        resid = float("nan")
    try:
        model, basis = build_rate_model(prob, V, red_full)
        nullspace_parametrize(*model.equalities)
    except Inconsistent as exc:
        raise Infeasible(f"observation constraints are inconsistent: {exc}") from exc
    x0 = _center_rho(model, opts)
    if x0 is not None and is_interior(model, x0):
        res = solve(model, x0, opts)
    else:
        res = solve_shifted(model, x0, opts)
    p_opt = 0.5 * res.objective
    rate = p_opt / np.log(2.0) - prob.delta_EC
    m = red.n_bar
    report = RateReport(
        n=n, k=k_out, n_face=V.shape[1], k_bar=m, embedded_sizes=(2 * V.shape[1], 2 * m),
        status=res.status.value, iterations=res.iterations, newton_steps=res.newton_steps,
        seconds=time.perf_counter() - t0, phase1_seconds=t_ph1, pinching_residual=resid, message=res.message,
        result=res,
    )
    return rate, p_opt, report


def rho_from_solution(x, V, basis) -> np.ndarray:
    rho_bar = sum(th * H for th, H in zip(x[1:], basis))
    return V @ rho_bar @ V.conj().T


def toy_protocol(coherence: float | None = None, delta_EC: float = 0.0, name: str | None = None) -> QkdProblem:
    """Identity channel on a qubit with the computational-basis pinching.

    With ``coherence`` set, Re rho_12 is fixed to it; the optimum is then
    ln 2 - S(rho) with rho = [[1/2, c], [c, 1/2]].
    """
    G = KrausChannel([np.eye(2)])
    Z = PinchingMap([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])])
    cons = [(np.eye(2), 1.0)]
    if coherence is not None:
        cons.append((np.array([[0.0, 0.5], [0.5, 0.0]]), float(coherence)))
    label = name or ("toy-identity" if coherence is None else f"toy-coherence-{coherence:g}")
    return QkdProblem(G, Z, cons, delta_EC, {"name": label})


# -- protocol files -------------------------------------------------------------

_MATRIX = {
    "type": "object",
    "properties": {
        "re": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}, "minItems": 1},
        "im": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
    },
    "required": ["re"],
    "additionalProperties": False,
}

PROTOCOL_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "QKD protocol",
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "pz": {"type": "number"},
        "e": {"type": "number"},
        "deltaEC": {"type": "number"},
        "kraus": {"type": "array", "items": _MATRIX, "minItems": 1},
        "pinching": {"type": "array", "items": _MATRIX, "minItems": 1},
        "constraints": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {"A": _MATRIX, "b": {"type": "number"}},
                "required": ["A", "b"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["name", "deltaEC", "kraus", "pinching", "constraints"],
}


def _matrix(obj, where):
    try:
        re = np.array(obj["re"], dtype=float)
        im = np.array(obj["im"], dtype=float) if "im" in obj else None
        if re.ndim != 2:
            raise ValueError("matrix rows have unequal lengths")
        return ComplexMatrix(re, im).to_array()
    except (ValueError, DimensionMismatch) as exc:
        raise ParseError(str(exc), where) from None


def parse_protocol(data: dict, source: str = "<protocol>") -> QkdProblem:
    try:
        jsonschema.validate(data, PROTOCOL_SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path)
        raise ParseError(exc.message, f"{source}:/{loc}") from None
    K = [_matrix(m, f"{source}:/kraus/{i}") for i, m in enumerate(data["kraus"])]
    Z = [_matrix(m, f"{source}:/pinching/{i}") for i, m in enumerate(data["pinching"])]
    cons = [(_matrix(c["A"], f"{source}:/constraints/{i}/A"), c["b"]) for i, c in enumerate(data["constraints"])]
    try:
        G, P = KrausChannel(K), PinchingMap(Z)
    except DimensionMismatch as exc:
        raise ParseError(str(exc), source) from None
    meta = {key: data[key] for key in ("name", "pz", "e") if key in data}
    prob = QkdProblem(G, P, cons, float(data["deltaEC"]), meta)
    try:
        return prob.validate()
    except (DimensionMismatch, NotHermitian) as exc:
        raise ParseError(str(exc), source) from None


def load_protocol(path) -> QkdProblem:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("file not found", str(path)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from None
    return parse_protocol(data, str(path))


def protocol_to_json(prob: QkdProblem) -> dict:
    def m(M):
        M = np.asarray(M, dtype=complex)
        out = {"re": M.real.tolist()}
        if np.any(M.imag):
            out["im"] = M.imag.tolist()
        return out

    data = {"name": prob.meta.get("name", "protocol")}
    data.update({key: prob.meta[key] for key in ("pz", "e") if key in prob.meta})
    data["deltaEC"] = prob.delta_EC
    data["kraus"] = [m(k) for k in prob.G.K]
    data["pinching"] = [m(z) for z in prob.Z.Z]
    data["constraints"] = [{"A": m(A), "b": b} for A, b in prob.constraints]
    return data
