import json

import numpy as np
import pytest

from qreip.errors import DimensionMismatch, InvariantViolation, NotHermitian, ParseError
from qreip.ipm import Status
from qreip.qkd import (
    ComplexMatrix, KrausChannel, PinchingMap, QkdProblem, apply_G, apply_Z, bar, herm_to_real, load_protocol,
    parse_protocol, pinching_identity_check, protocol_to_json, qkd_rate, qre_complex, reduce_dimension,
    toy_protocol, unbar,
)
from qreip.qre_barrier import qre_value
from conftest import rand_herm_pd


def rand_density(rng, n, rank=None):
    rank = rank or n
    G = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    R = G @ G.conj().T
    return R / np.trace(R).real


def test_embedding_law(rng):
    for n in (1, 2, 4):
        X, Y = rand_herm_pd(rng, n), rand_herm_pd(rng, n)
        assert qre_value(bar(X), bar(Y)) == pytest.approx(2 * qre_complex(X, Y), abs=1e-10)
        np.testing.assert_allclose(unbar(bar(X)), X, atol=1e-15)


def test_herm_to_real_cases():
    X = np.array([[1.0, 2.0], [2.0, 3.0]])
    np.testing.assert_allclose(herm_to_real(X), np.block([[X, 0 * X], [0 * X, X]]))
    pauli_y = np.array([[0, -1j], [1j, 0]])
    np.testing.assert_allclose(np.linalg.eigvalsh(herm_to_real(pauli_y)), [-1, -1, 1, 1], atol=1e-14)
    with pytest.raises(NotHermitian):
        herm_to_real(np.array([[0, 1j], [1j, 0]]))
    assert ComplexMatrix.from_array(pauli_y).is_hermitian()


def test_channel_and_pinching_maps(rng):
    rho = rand_density(rng, 2)
    np.testing.assert_allclose(apply_G(KrausChannel([np.eye(2)]), rho), rho)
    np.testing.assert_allclose(apply_G(KrausChannel([np.diag([1.0, 0.0])]), np.eye(2)), np.diag([1.0, 0.0]))
    Z = PinchingMap([np.diag([1.0, 0]), np.diag([0, 1.0])])
    np.testing.assert_allclose(apply_Z(Z, rho), np.diag(np.diag(rho)))
    np.testing.assert_allclose(apply_Z(PinchingMap([np.eye(2)]), rho), rho)
    with pytest.raises(DimensionMismatch):
        apply_Z(Z, np.eye(3))
    # random channel keeps psd
    K = [rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2)) for _ in range(2)]
    assert np.linalg.eigvalsh(apply_G(KrausChannel(K), rho))[0] >= -1e-12


def test_pinching_identity(rng):
    diag = PinchingMap([np.diag(e) for e in np.eye(3)])
    block = PinchingMap([np.diag([1.0, 1.0, 0, 0]), np.diag([0, 0, 1.0, 1.0])])
    for _ in range(20):
        assert pinching_identity_check(diag, rand_density(rng, 3)) <= 1e-10
        assert pinching_identity_check(block, rand_density(rng, 4, rank=2)) <= 1e-10
    d = np.diag([0.2, 0.3, 0.5])
    assert pinching_identity_check(diag, d) <= 1e-14
    assert pinching_identity_check(PinchingMap([np.eye(3)]), rand_density(rng, 3)) <= 1e-12


def test_invariant_checks():
    with pytest.raises(InvariantViolation, match="kraus"):
        KrausChannel([2 * np.eye(2)]).check()
    with pytest.raises(InvariantViolation) as exc:
        PinchingMap([np.diag([1.0, 0.0])]).check()
    assert exc.value.invariant == "pinching completeness"
    with pytest.raises(InvariantViolation) as exc:
        PinchingMap([0.5 * np.eye(2), 0.5 * np.eye(2)]).check()
    assert exc.value.invariant == "pinching idempotence"
    prob = QkdProblem(KrausChannel([np.eye(2)]), PinchingMap([np.eye(2)]), [(np.diag([1.0, 0.0]), 0.5)])
    with pytest.raises(InvariantViolation, match="trace"):
        prob.validate()


def _embedding_channel():
    # rho (2x2) into a 4-dimensional output with zero rows, plus a partial isometry
    K1 = np.zeros((4, 2))
    K1[0, 0] = K1[2, 1] = np.sqrt(0.5)
    K2 = np.zeros((4, 2))
    K2[0, 1] = K2[2, 0] = np.sqrt(0.5)
    Z = PinchingMap([np.diag([1.0, 1, 0, 0]), np.diag([0, 0, 1.0, 1])])
    return KrausChannel([K1, K2]), Z


def test_dimension_reduction_preserves_objective(rng):
    G, Z = _embedding_channel()
    red = reduce_dimension(G, Z)
    assert red.n_bar == 2
    r1, r2 = red.null_residuals()
    assert r1 <= 1e-8 and r2 <= 1e-8
    for _ in range(20):
        rho = rand_density(rng, 2)
        g = apply_G(G, rho)
        zg = apply_Z(Z, g)
        # full-space value with logs restricted to the support of zg
        lam, U = np.linalg.eigh(zg)
        keep = lam > 1e-12
        lnZ = (U[:, keep] * np.log(lam[keep])) @ U[:, keep].conj().T
        lg, Ug = np.linalg.eigh(g)
        kg = lg > 1e-14
        full = float(np.sum(lg[kg] * np.log(lg[kg]))) - np.trace(g @ lnZ).real
        assert qre_complex(red.G_red(rho), red.ZG_red(rho)) == pytest.approx(full, abs=1e-9)


def test_identity_channel_identity_rate():
    rate, p, rep = qkd_rate(toy_protocol(delta_EC=0.1))
    assert rep.status == Status.OPTIMAL.value
    assert rate == pytest.approx(-0.1, abs=1e-7)


def test_constrained_toy_grid_oracle():
    c = 0.25
    _, p, _ = qkd_rate(toy_protocol(coherence=c))
    best = np.inf
    for a in np.linspace(0.001, 0.999, 999):
        for s in np.linspace(-0.5, 0.5, 201):
            rho = np.array([[a, c + 1j * s], [c - 1j * s, 1 - a]])
            if np.linalg.eigvalsh(rho)[0] > 1e-12:
                best = min(best, qre_complex(rho, np.diag(np.diag(rho))))
    assert p <= best + 1e-6
    assert p == pytest.approx(best, abs=1e-3)
    # closed form: ln 2 - S(rho) at rho = [[1/2, c], [c, 1/2]]
    ev = np.array([0.5 + c, 0.5 - c])
    assert p == pytest.approx(np.log(2) + np.sum(ev * np.log(ev)), abs=1e-7)


def test_rate_monotone_in_coherence():
    ps = [qkd_rate(toy_protocol(coherence=c))[1] for c in (0.05, 0.2, 0.35)]
    assert ps[0] < ps[1] < ps[2]


def test_facial_reduction_on_rho():
    n = 3
    E33 = np.diag([0.0, 0, 1.0])
    prob = QkdProblem(KrausChannel([np.eye(n)]), PinchingMap([np.diag(e) for e in np.eye(n)]),
                      [(np.eye(n), 1.0), (E33, 0.0)])
    rate, p, rep = qkd_rate(prob)
    assert rep.n_face == 2
    assert p == pytest.approx(0.0, abs=1e-7)


def test_protocol_round_trip(tmp_path):
    prob = toy_protocol(coherence=0.1, delta_EC=0.02, name="rt")
    path = tmp_path / "p.json"
    path.write_text(json.dumps(protocol_to_json(prob)))
    back = load_protocol(path)
    assert back.delta_EC == 0.02
    assert len(back.constraints) == 2
    np.testing.assert_allclose(back.constraints[1][0], prob.constraints[1][0])


def test_protocol_schema_errors(tmp_path):
    with pytest.raises(ParseError) as exc:
        parse_protocol({"name": "x"}, "f.json")
    assert exc.value.location.startswith("f.json:")
    data = protocol_to_json(toy_protocol())
    data["pinching"][0]["re"] = "nope"
    with pytest.raises(ParseError):
        parse_protocol(data, "f.json")
    data = protocol_to_json(toy_protocol())
    data["pinching"] = data["pinching"][:1]
    with pytest.raises(InvariantViolation, match="completeness"):
        parse_protocol(data)
