"""Instance generators for the experiment families.

Each generator returns ``(problem_json, sidecar)``: a problem file dict (see
:mod:`qreip.problem`) and metadata recording how it was built.  All
randomness comes from ``numpy.random.default_rng(seed)``.
"""

from __future__ import annotations

import numpy as np

from .errors import BadParams
from .matcalc import vec
from .problem import problem_to_json
from .qre_barrier import qre_value


def _need(cond, msg):
    if not cond:
        raise BadParams(msg)


def _offdiag_unit(n, i, j):
    E = np.zeros((n, n))
    E[i, j] = E[j, i] = 1.0
    return E


def random_correlation(m, rng):
    """Random correlation matrix: normalized Gram matrix of Gaussian vectors."""
    G = rng.standard_normal((m, m + 2))
    C = G @ G.T
    d = 1.0 / np.sqrt(np.diag(C))
    C = d[:, None] * C * d[None, :]
    np.fill_diagonal(C, 1.0)
    return C


def nearcorr_matrix(kind: str, n: int, rng, m: int = 0):
    if kind == "2I":
        return 2.0 * np.eye(n)
    if kind == "higham2":
        M0 = rng.uniform(size=(n, n))
    elif kind == "higham1":
        _need(m >= 1, "higham1 needs m >= 1")
        A = random_correlation(m, rng)
        B = rng.uniform(size=(n, n))
        B = np.triu(B, 1)
        B = B + B.T + np.eye(n)
        Yb = rng.uniform(size=(m, n))
        M0 = np.block([[A, Yb], [Yb.T, B]])
    else:
        raise BadParams(f"unknown M kind '{kind}' (use 2I, higham1 or higham2)")
    M = M0 @ M0.T
    return M / np.max(np.abs(np.diag(M)))


def nearcorr(n: int = 5, M: str = "2I", structure: str = "tridiag", m: int = 0, seed: int | None = 0):
    """min qre(M, Y) over Y with unit diagonal; x = (t, free entries of Y)."""
    _need(n >= 2, "nearcorr needs n >= 2")
    _need(structure in ("tridiag", "full"), "structure must be tridiag or full")
    rng = np.random.default_rng(seed)
    Mm = nearcorr_matrix(M, n, rng, m)
    N = Mm.shape[0]
    if structure == "tridiag":
        pairs = [(i, i + 1) for i in range(N - 1)]
    else:
        pairs = [(i, j) for i in range(N) for j in range(i + 1, N)]
    k = 1 + len(pairs)
    A = np.zeros((1 + 2 * N * N, k))
    A[0, 0] = -1.0
    for p, (i, j) in enumerate(pairs):
        A[1 + N * N :, 1 + p] = -vec(_offdiag_unit(N, i, j))
    b = np.concatenate([[0.0], vec(Mm), vec(np.eye(N))])
    c = np.zeros(k)
    c[0] = 1.0
    x0 = np.zeros(k)
    x0[0] = qre_value(Mm, np.eye(N)) + 1.0
    meta = {"family": "nearcorr", "t_index": 0, "n": N, "M": M, "structure": structure, "seed": seed,
            "pairs": pairs}
    side = dict(meta)
    if M == "2I":
        side["optimum"] = 2.0 * N * np.log(2.0)
    meta.pop("pairs")
    return problem_to_json(c, [("qre", N, A, b, "qre(M,Y)")], initial_point=x0, meta=meta), side


def _sparse01(n, rng):
    i, j = rng.choice(n, size=2, replace=False)
    return _offdiag_unit(n, i, j)


def qre_lp(n: int = 10, k: int | None = None, lower: float = -1.0, seed: int | None = 0):
    """min qre(2I + sum x_i A_i, I + sum x_i B_i) s.t. x >= lower; x = (t, x_1..x_k)."""
    _need(n >= 2, "qre-lp needs n >= 2")
    k = n if k is None else k
    _need(k >= 1, "qre-lp needs k >= 1")
    _need(lower < 0, "qre-lp needs lower < 0 so that x = 0 is interior")
    rng = np.random.default_rng(seed)
    As = [_sparse01(n, rng) for _ in range(k)]
    Bs = [_sparse01(n, rng) for _ in range(k)]
    A0, B0 = 2.0 * np.eye(n), np.eye(n)
    K = 1 + k
    A = np.zeros((1 + 2 * n * n, K))
    A[0, 0] = -1.0
    A[1 : 1 + n * n, 1:] = -np.column_stack([vec(M) for M in As])
    A[1 + n * n :, 1:] = -np.column_stack([vec(M) for M in Bs])
    b = np.concatenate([[0.0], vec(A0), vec(B0)])
    box = np.hstack([np.zeros((k, 1)), -np.eye(k)])
    c = np.zeros(K)
    c[0] = 1.0
    x0 = np.zeros(K)
    x0[0] = qre_value(A0, B0) + 1.0
    meta = {"family": "qre-lp", "n": n, "k": k, "lower": lower, "seed": seed, "t_index": 0}
    blocks = [("qre", n, A, b, "qre"), ("orthant", k, box, -lower * np.ones(k), "x>=lower")]
    return problem_to_json(c, blocks, initial_point=x0, meta=meta), dict(meta)


def qre_kl(n: int = 10, k: int | None = None, gamma: float = 1.0, seed: int | None = 0):
    """min qre(2I + sum x_i A_i, I + sum y_i B_i) s.t. KL(x, y) <= gamma; x = (t, x, y)."""
    _need(n >= 2, "qre-kl needs n >= 2")
    k = n if k is None else k
    _need(k >= 1, "qre-kl needs k >= 1")
    _need(gamma > 0, "qre-kl needs gamma > 0")
    rng = np.random.default_rng(seed)
    As = [_sparse01(n, rng) for _ in range(k)]
    Bs = [_sparse01(n, rng) for _ in range(k)]
    A0, B0 = 2.0 * np.eye(n), np.eye(n)
    K = 1 + 2 * k
    A = np.zeros((1 + 2 * n * n, K))
    A[0, 0] = -1.0
    A[1 : 1 + n * n, 1 : 1 + k] = -np.column_stack([vec(M) for M in As])
    A[1 + n * n :, 1 + k :] = -np.column_stack([vec(M) for M in Bs])
    b = np.concatenate([[0.0], vec(A0), vec(B0)])
    Akl = np.zeros((1 + 2 * k, K))
    Akl[1:, 1:] = -np.eye(2 * k)
    bkl = np.concatenate([[gamma], np.zeros(2 * k)])
    # start: x = y = s 1 with X and Y safely positive definite
    S = max(np.linalg.norm(sum(As), 2), np.linalg.norm(sum(Bs), 2), 1.0)
    s = 0.5 / S
    x0 = np.concatenate([[0.0], s * np.ones(2 * k)])
    x0[0] = qre_value(A0 + s * sum(As), B0 + s * sum(Bs)) + 1.0
    c = np.zeros(K)
    c[0] = 1.0
    meta = {"family": "qre-kl", "n": n, "k": k, "gamma": gamma, "seed": seed, "t_index": 0}
    blocks = [("qre", n, A, b, "qre"), ("kl", k, Akl, bkl, "KL(x,y)<=gamma")]
    return problem_to_json(c, blocks, initial_point=x0, meta=meta), dict(meta)


def twophase_synth(n: int = 25, r: int = 5, seed: int | None = 0):
    """min qre(sum x_i V E_i V^T, I) s.t. x_i <= 1 with V the leading-r embedding.

    The matrix argument lives on a rank-r face, so there is no interior
    point; the optimum is x_i = 1/e with value -r/e.
    """
    _need(1 <= r < n, "twophase-synth needs 1 <= r < n")
    k = 1 + r
    A = np.zeros((1 + 2 * n * n, k))
    A[0, 0] = -1.0
    for i in range(r):
        E = np.zeros((n, n))
        E[i, i] = 1.0
        A[1 : 1 + n * n, 1 + i] = -vec(E)
    b = np.concatenate([[0.0], np.zeros(n * n), vec(np.eye(n))])
    box = np.hstack([np.zeros((r, 1)), np.eye(r)])
    c = np.zeros(k)
    c[0] = 1.0
    meta = {"family": "twophase-synth", "n": n, "r": r, "seed": seed, "t_index": 0}
    side = dict(meta, face_rank=r, optimum=-r / np.e)
    blocks = [("qre", n, A, b, "qre(X,I)"), ("orthant", r, box, np.ones(r), "x<=1")]
    return problem_to_json(c, blocks, meta=meta), side


def sqre_pair(n: int = 10, k: int | None = None, lower: float = -2.0, seed: int | None = 0):
    """The qre and sqre variants of min d(I + sum x_i A_i, I + sum x_i B_i), x >= lower.

    Both share the data matrices; x = (t, x_1..x_k) and x = 0 (t large) is
    interior for both.
    """
    _need(n >= 2, "sqre-pair needs n >= 2")
    k = n if k is None else k
    _need(k >= 1, "sqre-pair needs k >= 1")
    _need(lower < 0, "sqre-pair needs lower < 0")
    rng = np.random.default_rng(seed)
    As = [_sparse01(n, rng) for _ in range(k)]
    Bs = [_sparse01(n, rng) for _ in range(k)]
    K = 1 + k
    A = np.zeros((1 + 2 * n * n, K))
    A[0, 0] = -1.0
    A[1 : 1 + n * n, 1:] = -np.column_stack([vec(M) for M in As])
    A[1 + n * n :, 1:] = -np.column_stack([vec(M) for M in Bs])
    b = np.concatenate([[0.0], vec(np.eye(n)), vec(np.eye(n))])
    box = np.hstack([np.zeros((k, 1)), -np.eye(k)])
    c = np.zeros(K)
    c[0] = 1.0
    x0 = np.zeros(K)
    x0[0] = 1.0
    meta = {"n": n, "k": k, "lower": lower, "seed": seed, "t_index": 0}
    lin = ("orthant", k, box, -lower * np.ones(k), "x>=lower")
    q = problem_to_json(c, [("qre", n, A, b, "qre"), lin], initial_point=x0, meta=dict(meta, family="sqre-pair:qre"))
    s = problem_to_json(c, [("sqre", n, A, b, "sqre"), lin], initial_point=x0, meta=dict(meta, family="sqre-pair:sqre"))
    return {"qre": q, "sqre": s}, dict(meta, family="sqre-pair")


def lp_min():
    """min x s.t. x >= 1."""
    return problem_to_json([1.0], [("orthant", 1, [[-1.0]], [-1.0], "x>=1")], initial_point=[2.0],
                           meta={"family": "lp"}), {"optimum": 1.0}


FAMILIES = {
    "nearcorr": nearcorr,
    "qre-lp": qre_lp,
    "qre-kl": qre_kl,
    "twophase-synth": twophase_synth,
    "sqre-pair": sqre_pair,
}


def generate(family: str, seed: int | None = 0, **params):
    if family not in FAMILIES:
        raise BadParams(f"unknown family '{family}' (choose from {', '.join(FAMILIES)})")
    params = {key: val for key, val in params.items() if val is not None}
    try:
        return FAMILIES[family](seed=seed, **params)
    except TypeError as exc:
        raise BadParams(f"{family}: {exc}") from None
