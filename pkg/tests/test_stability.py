import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platoon_dos.dynamics import integrate_delayed
from platoon_dos.errors import InvalidCertificate, InvalidInput
from platoon_dos.stability import (
    InfeasibleReport, LmiCertificate, LmiProblem, assemble, is_negative_definite,
    monotonicity_probe, search_certificate, verify,
)


def scalar(a, b, U, d=0.1):
    return LmiProblem(np.array([[a]]), np.array([[b]]), U, d)


def test_problem_validation():
    with pytest.raises(InvalidInput):
        scalar(-1, 0, 0.0)
    with pytest.raises(InvalidInput):
        scalar(-1, 0, 1.0, d=1.0)
    with pytest.raises(InvalidInput):
        LmiProblem(np.eye(2), np.eye(3), 1.0, 0.1)


def test_assemble_layout_scalar():
    m = assemble(scalar(-1.0, -0.1, 0.5), [[2.0]], [[3.0]], [[1.0]])
    t11 = 0.25 * 2 - 2 + 3 - 2
    t12 = 0.25 * 2 * 0.1 - 0.1
    t22 = 0.25 * 0.02 - 0.9 * 3
    assert np.allclose(m, [[t11, t12, 2], [t12, t22, 0], [2, 0, -2]])


def test_assemble_rejects_asymmetric():
    with pytest.raises(InvalidCertificate):
        assemble(LmiProblem(-np.eye(2), np.zeros((2, 2)), 1.0, 0.1),
                 np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2), np.eye(2))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1), st.floats(-3.0, 1.0))
def test_definiteness_matches_eigenvalues(n, seed, shift):
    r = np.random.default_rng(seed)
    b = r.normal(size=(n, n))
    m = -(b @ b.T) / n + shift * np.eye(n)
    res = is_negative_definite(m)
    assert res.negative == (np.max(np.linalg.eigvals(m).real) < -1e-9)
    assert res.margin == pytest.approx(np.max(np.linalg.eigvalsh(m)), abs=1e-10)


def test_definiteness_boundary_cases():
    assert not is_negative_definite(np.zeros((3, 3))).negative
    assert not is_negative_definite(np.diag([-1.0, -1e-12])).negative
    assert is_negative_definite(np.diag([-1.0, -1e-6])).negative
    with pytest.raises(InvalidInput):
        is_negative_definite(np.array([[np.inf]]))


def test_certificate_found_and_reverified():
    p = scalar(-1.0, -0.1, 0.1)
    cert = search_certificate(p, seed=3)
    assert isinstance(cert, LmiCertificate)
    res = verify(p, cert.Q, cert.S, cert.H_p)
    assert res.negative and res.margin < 0
    assert res.margin == pytest.approx(cert.margin)


def test_search_is_deterministic():
    p = scalar(-1.0, -0.1, 0.1)
    a, b = search_certificate(p, seed=7), search_certificate(p, seed=7)
    assert np.array_equal(a.Q, b.Q) and a.margin == b.margin


def test_tampered_certificate_fails():
    p = scalar(-1.0, -0.1, 0.1)
    cert = search_certificate(p)
    assert not verify(p, -cert.Q, cert.S, cert.H_p).negative
    assert not verify(p, cert.Q, cert.S * 1e6, cert.H_p).negative


def test_unstable_system_gets_no_certificate():
    res = search_certificate(scalar(0.5, -0.1, 0.1), budget=500)
    assert isinstance(res, InfeasibleReport) and res.inconclusive
    assert res.evaluations <= 510
    assert res.to_dict()["feasible"] is False


@pytest.mark.parametrize("U", [1.8, 2.5, 4.0])
def test_no_certificate_past_the_delay_margin(U):
    # x' = -0.1 x - x(t - tau) loses stability near tau = 1.68
    tr = integrate_delayed([[-0.1]], [[-1.0]], [1.0], 0.99 * U, 80.0, 1e-2)
    assert np.max(np.abs(tr.X[-500:])) > 1.0
    assert not isinstance(search_certificate(scalar(-0.1, -1.0, U), budget=1500), LmiCertificate)


def test_delay_free_hurwitz_system_is_certified():
    a = np.array([[0.0, 1.0], [-2.0, -3.0]])
    cert = search_certificate(LmiProblem(a, np.zeros((2, 2)), 0.5, 0.2))
    assert isinstance(cert, LmiCertificate)


def test_monotonicity_probe_grows_with_U():
    p = scalar(-1.0, -0.1, 0.1)
    cert = search_certificate(p)
    margins = monotonicity_probe(p, cert, [0.05, 0.1, 1.0, 10.0])
    assert margins == sorted(margins)
    assert margins[1] == pytest.approx(cert.margin)
