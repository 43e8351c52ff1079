import numpy as np
import pytest

from qreip.errors import DimensionMismatch, NotInterior
from qreip.matcalc import vec
from qreip.qre_barrier import QrePoint, phi_eval, phi_hess_apply, phi_hess_solve, qre_value
from conftest import rand_pd


def interior_point(rng, n):
    X, Y = rand_pd(rng, n), rand_pd(rng, n)
    t = qre_value(X, Y) + rng.uniform(0.1, 2.0)
    return QrePoint(t, X, Y)


def sym_direction(rng, n):
    def s():
        H = rng.standard_normal((n, n))
        return H + H.T

    return np.concatenate([[rng.standard_normal()], vec(s()), vec(s())])


def phi_direct(z, n):
    p = QrePoint.from_vector(z, n)
    return -np.log(p.t - qre_value(p.X, p.Y)) - np.linalg.slogdet(p.X)[1] - np.linalg.slogdet(p.Y)[1]


def test_qre_value_known_cases():
    assert qre_value(2 * np.eye(3), np.eye(3)) == pytest.approx(6 * np.log(2), abs=1e-14)
    X = np.diag([1.0, 2.0])
    assert qre_value(X, X) == pytest.approx(0.0, abs=1e-14)


def test_value_matches_direct_formula(rng):
    p = interior_point(rng, 4)
    assert phi_eval(p).value == pytest.approx(phi_direct(p.to_vector(), 4), rel=1e-12)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_gradient_and_hessian_fd(rng, n):
    for _ in range(5):
        p = interior_point(rng, n)
        z = p.to_vector()
        d = phi_eval(p)
        v = sym_direction(rng, n)
        h = 1e-6
        fd = (phi_direct(z + h * v, n) - phi_direct(z - h * v, n)) / (2 * h)
        assert d.grad @ v == pytest.approx(fd, rel=1e-6)
        gp = phi_eval(QrePoint.from_vector(z + h * v, n)).grad
        gm = phi_eval(QrePoint.from_vector(z - h * v, n)).grad
        hv = phi_hess_apply(d, v)
        np.testing.assert_allclose(hv, (gp - gm) / (2 * h), rtol=1e-5, atol=1e-5 * np.abs(hv).max())


def test_hess_solve_round_trip(rng):
    n = 4
    d = phi_eval(interior_point(rng, n))
    v = sym_direction(rng, n)
    w, iters = phi_hess_solve(d, phi_hess_apply(d, v), return_iters=True)
    assert np.linalg.norm(w - v) <= 1e-7 * np.linalg.norm(v)
    assert iters <= 50


def test_hess_apply_batched_matches_columns(rng):
    n = 3
    d = phi_eval(interior_point(rng, n))
    V = np.column_stack([sym_direction(rng, n) for _ in range(3)])
    np.testing.assert_allclose(phi_hess_apply(d, V)[:, 1], phi_hess_apply(d, V[:, 1]), rtol=1e-12)


def test_not_interior_raises(rng):
    X, Y = rand_pd(rng, 3), rand_pd(rng, 3)
    with pytest.raises(NotInterior):
        phi_eval(QrePoint(qre_value(X, Y) - 0.1, X, Y))
    with pytest.raises(NotInterior):
        phi_eval(QrePoint(10.0, -np.eye(3), Y))


def test_dimension_check():
    with pytest.raises(DimensionMismatch):
        QrePoint.from_vector(np.ones(5), 3)
