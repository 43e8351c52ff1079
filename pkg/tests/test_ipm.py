import itertools

import numpy as np
import pytest

from qreip.cones import ConeBlock, is_interior, kl_value
from qreip.errors import DimensionMismatch, NotInterior
from qreip.generators import nearcorr, qre_kl
from qreip.ipm import (
    NO_HEURISTIC, Model, SolverOptions, Status, centrality, find_interior, initial_point,
    nullspace_parametrize, solve, solve_shifted,
)
from qreip.matcalc import vec
from qreip.problem import build_model
from qreip.qre_barrier import qre_value


def scalar_model():
    # min x s.t. x - 1 >= 0
    return Model(np.array([1.0]), [ConeBlock("orthant", 1, [[-1.0]], [-1.0])])


def test_nullspace_parametrize(rng):
    N, xp = nullspace_parametrize(np.eye(3), np.array([1.0, 2.0, 3.0]))
    assert N.shape[1] == 0
    np.testing.assert_allclose(xp, [1, 2, 3])
    N, xp = nullspace_parametrize(np.array([[1.0, 1.0]]), np.zeros(1))
    assert abs(abs(N[:, 0] @ np.array([1, -1]) / np.sqrt(2)) - 1) < 1e-12
    E, d = rng.standard_normal((3, 7)), rng.standard_normal(3)
    N, xp = nullspace_parametrize(E, d)
    w = rng.standard_normal(N.shape[1])
    assert np.linalg.norm(E @ (xp + N @ w) - d) <= 1e-10


def test_centrality_scalar():
    # x - ln(x - 1) shifted: block slack is x - 1; use x > 0 variant instead
    model = Model(np.array([1.0]), [ConeBlock("orthant", 1, [[-1.0]], [0.0])])
    om, _ = centrality(model, [1.0], 1.0)
    assert om == pytest.approx(0.0, abs=1e-14)
    om, d = centrality(model, [2.0], 1.0)
    assert om == pytest.approx(1.0, abs=1e-12)
    assert d[0] == pytest.approx(-2.0, abs=1e-12)


def test_scalar_lp():
    res = solve(scalar_model(), [2.0])
    assert res.status is Status.OPTIMAL
    assert res.objective == pytest.approx(1.0, abs=1e-7)
    assert res.certificate_holds(1e-8)


def test_central_path_is_tracked_scalar():
    # x/mu - ln x: central path x(mu) = mu
    model = Model(np.array([1.0]), [ConeBlock("orthant", 1, [[-1.0]], [0.0])])
    res = solve(model, [3.0], SolverOptions(tol=1e-6))
    for rec in res.trace:
        if rec.kind == "corrector" and rec.omega < 0.1:
            assert rec.x[0] == pytest.approx(rec.mu, rel=0.2)


def _lp_vertex_oracle(c, G, h):
    """min c.x s.t. G x <= h by enumerating all k-subsets of active rows."""
    m, k = G.shape
    best = np.inf
    for rows in itertools.combinations(range(m), k):
        Gs = G[list(rows)]
        if abs(np.linalg.det(Gs)) < 1e-10:
            continue
        x = np.linalg.solve(Gs, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = min(best, c @ x)
    return best


def random_bounded_lp(rng, k, m):
    # a box keeps the LP bounded; x = 0 is strictly interior
    G = np.vstack([rng.standard_normal((m - 2 * k, k)), np.eye(k), -np.eye(k)])
    h = np.concatenate([rng.uniform(0.5, 2.0, m - 2 * k), rng.uniform(1, 3, 2 * k)])
    return rng.standard_normal(k), G, h


@pytest.mark.parametrize("seed", range(20))
def test_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 5))
    m = 2 * k + int(rng.integers(1, 4))
    c, G, h = random_bounded_lp(rng, k, m)
    model = Model(c, [ConeBlock("orthant", m, G, h)])
    res = solve(model, np.zeros(k))
    assert res.status is Status.OPTIMAL
    assert res.objective == pytest.approx(_lp_vertex_oracle(c, G, h), abs=1e-6)


def test_interiority_and_proximity_invariants():
    built = build_model(nearcorr(n=5, M="2I")[0])
    opts = SolverOptions()
    res = solve(built.model, initial_point(built.model), opts)
    assert res.status is Status.OPTIMAL
    mus = []
    for rec in res.trace:
        assert is_interior(built.model, rec.x)
        if rec.kind == "predictor":
            assert rec.omega <= opts.delta2
            mus.append(rec.mu)
    # mu strictly decreases; the first reduction is at least the nominal one only when no relaxation was needed
    assert all(b < a for a, b in zip(mus, mus[1:]))
    assert all(b / a >= opts.mu_shrink - 1e-12 for a, b in zip(mus, mus[1:]))
    assert res.certificate_holds(opts.tol)


def test_nearcorr_2I_grid_oracle_n3():
    n = 3
    res = solve(*(lambda b: (b.model, initial_point(b.model)))(build_model(nearcorr(n=n, M="2I")[0])))
    M = 2 * np.eye(n)
    best = np.inf
    grid = np.linspace(-0.95, 0.95, 77)
    for a in grid:
        for b in grid:
            Y = np.eye(n)
            Y[0, 1] = Y[1, 0] = a
            Y[1, 2] = Y[2, 1] = b
            if np.linalg.eigvalsh(Y)[0] > 1e-9:
                best = min(best, qre_value(M, Y))
    assert res.objective <= best + 1e-6
    assert res.objective == pytest.approx(2 * n * np.log(2), abs=1e-6)


def test_kl_toy_grid_oracle():
    # min qre(2I + x1 A, I + y1 B) in 2x2 with KL(x, y) <= gamma, k = 1
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    B = A
    gamma = 0.05
    n = 2
    Aq = np.zeros((1 + 2 * n * n, 3))
    Aq[0, 0] = -1
    Aq[1 : 1 + n * n, 1] = -vec(A)
    Aq[1 + n * n :, 2] = -vec(B)
    bq = np.concatenate([[0], vec(2 * np.eye(n)), vec(np.eye(n))])
    Akl = np.zeros((3, 3))
    Akl[1:, 1:] = -np.eye(2)
    model = Model(np.array([1.0, 0, 0]), [ConeBlock("qre", n, Aq, bq), ConeBlock("kl", 1, Akl, [gamma, 0, 0])])
    x0 = np.array([qre_value(2.2 * np.eye(2) - 0.2 * np.eye(2), np.eye(2)) + 1, 0.3, 0.3])
    x0[0] = qre_value(2 * np.eye(2) + 0.3 * A, np.eye(2) + 0.3 * B) + 1
    res = solve(model, x0)
    best = np.inf
    for x in np.linspace(1e-3, 0.999, 400):
        for y in np.linspace(1e-3, 0.999, 400):
            if kl_value([x], [y]) <= gamma:
                best = min(best, qre_value(2 * np.eye(2) + x * A, np.eye(2) + y * B))
    assert res.status is Status.OPTIMAL
    assert res.objective <= best + 1e-6
    assert res.objective == pytest.approx(best, abs=1e-3)
    assert kl_value(res.x[1:2], res.x[2:3]) <= gamma + 1e-7


def test_qre_kl_family_solves():
    built = build_model(qre_kl(n=4, gamma=1.0)[0])
    res = solve(built.model, built.initial_point)
    assert res.status is Status.OPTIMAL
    assert res.objective <= qre_value(2 * np.eye(4), np.eye(4)) + 1e-6


def test_constant_objective_returns_analytic_center():
    model = Model(np.zeros(1), [ConeBlock("orthant", 2, [[1.0], [-1.0]], [1.0, 1.0])])
    res = solve(model, [0.5])
    assert res.x[0] == pytest.approx(0.0, abs=1e-8)


def test_equalities_are_respected(rng):
    # min x1 + 2 x2 s.t. x1 + x2 = 1, x >= 0
    model = Model(np.array([1.0, 2.0]), [ConeBlock("orthant", 2, -np.eye(2), np.zeros(2))],
                  (np.array([[1.0, 1.0]]), np.array([1.0])))
    res = solve(model, np.array([0.5, 0.5]))
    assert res.objective == pytest.approx(1.0, abs=1e-7)
    assert res.x.sum() == pytest.approx(1.0, abs=1e-10)


def test_start_errors():
    with pytest.raises(NotInterior):
        solve(scalar_model(), [0.5])
    with pytest.raises(DimensionMismatch):
        solve(scalar_model(), [1.0, 2.0])


def test_initial_point_heuristics():
    built = build_model(nearcorr(n=4, M="2I")[0])
    x = initial_point(built.model)
    assert is_interior(built.model, x)
    # x = 0 interior is accepted
    assert initial_point(Model(np.ones(1), [ConeBlock("orthant", 1, [[1.0]], [1.0])]))[0] == 0.0
    assert initial_point(scalar_model()) is NO_HEURISTIC


def test_find_interior_and_shifted():
    x = find_interior(scalar_model())
    assert x[0] > 1.0
    res = solve_shifted(scalar_model())
    assert res.objective == pytest.approx(1.0, abs=1e-6)
