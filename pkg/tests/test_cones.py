import numpy as np
import pytest

from qreip.cones import ConeBlock, ConeKind, block_eval, expand_sqre, is_interior, kl_value, model_barrier
from qreip.errors import DimensionMismatch, DomainViolation, NonSymmetric, NotInterior
from qreip.ipm import Model, SolverOptions, solve
from qreip.matcalc import vec
from qreip.qre_barrier import qre_value
from conftest import rand_pd


def test_diagonal_qre_is_kl(rng):
    for _ in range(50):
        x, y = rng.uniform(0.01, 5, 4), rng.uniform(0.01, 5, 4)
        assert qre_value(np.diag(x), np.diag(y)) == pytest.approx(kl_value(x, y), abs=1e-12)


def test_kl_domain():
    with pytest.raises(DomainViolation):
        kl_value([1.0, 0.0], [1.0, 1.0])
    with pytest.raises(DimensionMismatch):
        kl_value([1.0], [1.0, 2.0])


@pytest.mark.parametrize("kind,size", [("orthant", 3), ("psd", 3), ("kl", 2), ("qre", 2)])
def test_block_gradient_fd(rng, kind, size):
    n = size
    if kind == "orthant":
        z = rng.uniform(0.5, 2, n)
    elif kind == "psd":
        z = vec(rand_pd(rng, n))
    elif kind == "kl":
        x, y = rng.uniform(0.5, 2, n), rng.uniform(0.5, 2, n)
        z = np.concatenate([[kl_value(x, y) + 1.0], x, y])
    else:
        X, Y = rand_pd(rng, n), rand_pd(rng, n)
        z = np.concatenate([[qre_value(X, Y) + 1.0], vec(X), vec(Y)])
    dim = z.shape[0]
    blk = ConeBlock(kind, size, np.eye(dim), z)
    ev = block_eval(blk, z)
    v = rng.standard_normal(dim)
    if kind in ("psd", "qre"):
        # symmetric directions only
        for s in range(1, dim, n * n) if kind == "qre" else [0]:
            V = v[s : s + n * n].reshape(n, n)
            v[s : s + n * n] = vec(V + V.T)
    h = 1e-6
    fd = (block_eval(blk, z + h * v).value - block_eval(blk, z - h * v).value) / (2 * h)
    assert ev.grad @ v == pytest.approx(fd, rel=1e-6)
    hv = ev.hess_apply(v)
    assert ev.hess_solve(hv) == pytest.approx(v, rel=1e-7, abs=1e-9)


def test_not_interior_and_symmetry_checks():
    blk = ConeBlock("orthant", 2, np.eye(2), np.ones(2))
    with pytest.raises(NotInterior):
        block_eval(blk, np.array([1.0, -1.0]))
    bad = ConeBlock("psd", 2, np.array([[1.0], [2.0], [0.0], [1.0]]), vec(np.eye(2)))
    with pytest.raises(NonSymmetric):
        bad.check_symmetric()
    with pytest.raises(DimensionMismatch):
        ConeBlock("qre", 2, np.zeros((8, 1)), np.zeros(8))


def test_sqre_expansion_evaluates_consistently(rng):
    n = 2
    X, Y = rand_pd(rng, n), rand_pd(rng, n)
    # x = (t), X and Y constant
    exp = expand_sqre(0, (np.zeros((n * n, 1)), vec(X)), (np.zeros((n * n, 1)), vec(Y)), 1, n)
    assert exp.ncols == 3
    assert sum(b.nu for b in exp.blocks) == 2 * (2 * n + 1) + 1
    q1, q2 = qre_value(X, Y), qre_value(Y, X)
    model = Model(np.array([1.0, 0.0, 0.0]), exp.blocks)
    assert is_interior(model, np.array([q1 + q2 + 0.3, q1 + 0.1, q2 + 0.1]))
    assert not is_interior(model, np.array([q1 + q2 - 0.1, q1 - 0.05, q2 - 0.05]))


def test_sqre_toy_solve_matches_direct_evaluation(rng):
    # min t s.t. sqre(X(s), I) <= t, X(s) = diag(1+s, 1-s), |s| <= 1/2: optimum s = 0
    n = 2
    XA = -vec(np.diag([1.0, -1.0]))[:, None]
    XA = np.hstack([np.zeros((n * n, 1)), XA])
    exp = expand_sqre(0, (XA, vec(np.eye(n))), (np.zeros((n * n, 2)), vec(np.eye(n))), 2, n)
    box = ConeBlock("orthant", 2, np.array([[0, 1.0, 0, 0], [0, -1.0, 0, 0]]), np.array([0.5, 0.5]))
    model = Model(np.array([1.0, 0, 0, 0]), exp.blocks + [box])
    res = solve(model, np.array([3.0, 0.2, 1.0, 1.0]), SolverOptions())
    s = res.x[1]
    X = np.diag([1 + s, 1 - s])
    assert res.objective == pytest.approx(qre_value(X, np.eye(2)) + qre_value(np.eye(2), X), abs=1e-7)
    assert abs(res.objective) < 1e-7


def test_sqre_swap_symmetry(rng):
    n = 2
    X0, Y0 = rand_pd(rng, n), rand_pd(rng, n)
    D = -vec(np.diag([1.0, -1.0]))[:, None]

    def build(first, second):
        (A1, b1), (A2, b2) = first, second
        exp = expand_sqre(0, (np.hstack([np.zeros((n * n, 1)), A1]), b1),
                          (np.hstack([np.zeros((n * n, 1)), A2]), b2), 2, n)
        box = ConeBlock("orthant", 2, np.array([[0, 1.0, 0, 0], [0, -1.0, 0, 0]]), np.array([0.3, 0.3]))
        return Model(np.array([1.0, 0, 0, 0]), exp.blocks + [box])

    xm, ym = (D, vec(X0)), (np.zeros((n * n, 1)), vec(Y0))
    q1, q2 = qre_value(X0, Y0), qre_value(Y0, X0)
    a = solve(build(xm, ym), np.array([q1 + q2 + 3.0, 0.0, q1 + 1.0, q2 + 1.0])).objective
    b = solve(build(ym, xm), np.array([q1 + q2 + 3.0, 0.0, q2 + 1.0, q1 + 1.0])).objective
    assert a == pytest.approx(b, abs=1e-6)


def test_aggregate_hessian_matrix_symmetric_and_consistent(rng):
    n = 2
    X, Y = rand_pd(rng, n), rand_pd(rng, n)
    A = rng.standard_normal((1 + 2 * n * n, 3))
    A[1:] = 0.0
    A[0] = [-1.0, 0.2, 0.1]
    b = np.concatenate([[qre_value(X, Y) + 1.0], vec(X), vec(Y)])
    model = Model(np.ones(3), [ConeBlock("qre", n, A, b), ConeBlock("orthant", 3, np.eye(3), np.ones(3) * 2)])
    agg = model_barrier(model, np.zeros(3))
    H = agg.hess_matrix()
    np.testing.assert_allclose(H, H.T)
    v = rng.standard_normal(3)
    np.testing.assert_allclose(H @ v, agg.hess_apply(v), rtol=1e-10)
