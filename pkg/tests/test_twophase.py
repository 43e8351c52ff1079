import numpy as np
import pytest
from scipy.linalg import subspace_angles

from qreip.cones import ConeBlock
from qreip.errors import DimensionMismatch, Infeasible, InvariantViolation
from qreip.generators import twophase_synth
from qreip.ipm import Model, Status, initial_point, solve
from qreip.matcalc import vec
from qreip.problem import build_model
from qreip.qre_barrier import qre_value
from qreip.twophase import (
    FULL_DIMENSIONAL, direct_solve, phase1_dual, phase1_primal, reduce_problem, two_phase_solve,
)


def synth(n, r):
    return build_model(twophase_synth(n=n, r=r)[0]).model


def test_dual_rank_one_family():
    # Y = y Diag(1, 0) with y.0 = 0: witness Diag(2, 0), face e_2
    face = phase1_dual([np.diag([1.0, 0.0])], b=[0.0])
    assert face.rank == 1
    assert abs(face.V[:, 0] @ np.array([0.0, 1.0])) == pytest.approx(1.0, abs=1e-8)


def test_dual_full_span_is_full_dimensional():
    basis = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0]), np.array([[0.0, 1.0], [1.0, 0.0]])]
    assert phase1_dual(basis) is FULL_DIMENSIONAL


def test_primal_trivial_full_rank():
    x, face = phase1_primal([np.eye(3)], lower=[-2.0], upper=[1.0])
    assert face.full
    assert x[0] > 0


def test_primal_common_kernel(rng):
    n = 5
    K = np.linalg.qr(rng.standard_normal((n, 2)))[0]
    P = np.eye(n) - K @ K.T
    mats = []
    for _ in range(4):
        G = rng.standard_normal((n, n))
        mats.append(P @ (G + G.T) @ P)
    mats.append(P)
    x, face = phase1_primal(mats, lower=-np.ones(5), upper=np.ones(5))
    assert face.rank == 3
    # range of the witness is orthogonal to the common kernel
    assert np.linalg.norm(K.T @ face.V) <= 1e-6


def test_primal_infeasible_box():
    with pytest.raises(Infeasible):
        phase1_primal([np.eye(2)], A0=-np.eye(2), lower=[-1.0], upper=[0.5])


@pytest.mark.parametrize("method", ["primal", "dual"])
def test_synthetic_face_recovery(method):
    n, r = 12, 3
    res, rep = two_phase_solve(synth(n, r), method)
    assert rep.face_rank == r
    V0 = np.eye(n)[:, :r]
    assert np.max(subspace_angles(rep.face.V, V0)) <= 1e-6
    assert res.status is Status.OPTIMAL
    assert res.objective == pytest.approx(-r / np.e, abs=1e-6)


def test_two_phase_matches_direct():
    model = synth(10, 4)
    a, _ = two_phase_solve(model, "primal")
    b = direct_solve(model)
    assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_reduce_full_dimensional_is_identity():
    model = synth(6, 2)
    red = reduce_problem(model, FULL_DIMENSIONAL)
    assert red.model is model


def test_rank_one_face_closed_form():
    # face e_1: reduced problem is min t s.t. x ln x <= t, x <= 1 with optimum -1/e
    model = synth(4, 1)
    _, face = phase1_primal([np.diag([1.0, 0, 0, 0])], lower=[-np.inf], upper=[1.0])
    red = reduce_problem(model, face).model
    assert red.blocks[0].size == 1
    res = solve(red, [1.0, 0.5])
    assert res.objective == pytest.approx(-1 / np.e, abs=1e-7)


def test_face_invariance_guard():
    # second argument with an off-face coupling term cannot be compressed
    n = 2
    A = np.zeros((1 + 2 * n * n, 2))
    A[0, 0] = -1
    A[1 : 1 + n * n, 1] = -vec(np.diag([1.0, 0.0]))
    Y = np.array([[2.0, 1.0], [1.0, 2.0]])
    blk = ConeBlock("qre", n, A, np.concatenate([[0], np.zeros(n * n), vec(Y)]))
    model = Model(np.array([1.0, 0]), [blk])
    _, face = phase1_primal([np.diag([1.0, 0.0])], lower=[-np.inf], upper=[1.0])
    with pytest.raises(InvariantViolation):
        reduce_problem(model, face)
    with pytest.raises(DimensionMismatch):
        reduce_problem(model, type(face)(np.eye(3)[:, :1], face.rank_tol, None))


def test_reconstructed_solution_feasible():
    n, r = 10, 3
    res, rep = two_phase_solve(synth(n, r), "primal")
    X = np.diag(np.concatenate([res.x[1:], np.zeros(n - r)]))
    assert np.linalg.eigvalsh(X)[0] >= -1e-8
    assert res.x[0] >= qre_value(X, np.eye(n)) - 1e-8
    assert np.all(res.x[1:] <= 1 + 1e-8)
