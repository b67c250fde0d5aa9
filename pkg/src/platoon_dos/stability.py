"""Delay-dependent LMI stability certificate for the reduced error dynamics.

For ``Theta' = A Theta(t) + A1 Theta(t - tau(t))`` with ``0 < tau < U`` and
``tau' < d < 1`` the certificate is a triple ``(Q, S, H)`` of positive definite
matrices making

    [[t11, t12,  Q],
     [t21, t22,  0],
     [ Q,   0,  -Q]]

negative definite, where

    t11 = U^2 A'QA - Q + S + A'H + HA
    t12 = U^2 A'QA1 + HA1          (t21 = t12')
    t22 = U^2 A1'QA1 - (1 - d) S

A found certificate proves stability. The search is a heuristic, so failing
to find one proves nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .errors import InvalidCertificate, InvalidInput

TOL = 1e-9


@dataclass(frozen=True)
class LmiProblem:
    Psi_tilde: np.ndarray
    Psi_tilde1: np.ndarray
    U: float
    d: float

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.Psi_tilde, dtype=float))
        a1 = np.atleast_2d(np.asarray(self.Psi_tilde1, dtype=float))
        if a.shape != a1.shape or a.shape[0] != a.shape[1]:
            raise InvalidInput(f"system matrices must be square and equal-sized: {a.shape}, {a1.shape}")
        if not self.U > 0:
            raise InvalidInput("U must be > 0")
        if not 0 < self.d < 1:
            raise InvalidInput("d must lie in (0, 1)")
        object.__setattr__(self, "Psi_tilde", a)
        object.__setattr__(self, "Psi_tilde1", a1)

    @property
    def dim(self) -> int:
        return self.Psi_tilde.shape[0]


@dataclass(frozen=True)
class LmiCertificate:
    Q: np.ndarray
    S: np.ndarray
    H_p: np.ndarray
    margin: float

    def to_dict(self) -> dict:
        return {"feasible": True, "margin": self.margin, "Q": self.Q.tolist(),
                "S": self.S.tolist(), "H_p": self.H_p.tolist()}


@dataclass(frozen=True)
class InfeasibleReport:
    """Budget ran out without a certificate. Inconclusive, not a proof of instability."""

    best_margin: float
    evaluations: int
    candidate: str
    inconclusive: bool = True

    def to_dict(self) -> dict:
        return {"feasible": False, "inconclusive": True, "best_margin": self.best_margin,
                "evaluations": self.evaluations, "best_candidate": self.candidate}


class Definiteness(NamedTuple):
    negative: bool
    margin: float


def _check_sym(name: str, m: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > tol * scale:
        raise InvalidCertificate(f"{name} is not symmetric")
    return m


def assemble(problem: LmiProblem, Q, S, H_p) -> np.ndarray:
    """The 3x3 block matrix of the certificate, dimension ``3 * problem.dim``."""
    Q = _check_sym("Q", Q)
    S = _check_sym("S", S)
    H = _check_sym("H_p", H_p)
    m = problem.dim
    if not Q.shape == S.shape == H.shape == (m, m):
        raise InvalidCertificate(f"certificate matrices must be {m}x{m}")
    A, A1, U2 = problem.Psi_tilde, problem.Psi_tilde1, problem.U ** 2
    t11 = U2 * A.T @ Q @ A - Q + S + A.T @ H + H @ A
    t12 = U2 * A.T @ Q @ A1 + H @ A1
    t22 = U2 * A1.T @ Q @ A1 - (1.0 - problem.d) * S
    z = np.zeros((m, m))
    M = np.block([[t11, t12, Q], [t12.T, t22, z], [Q, z, -Q]])
    return 0.5 * (M + M.T)


def is_negative_definite(M, tol: float = TOL) -> Definiteness:
    """``lambda_max(sym(M)) < -tol``; a Cholesky attempt on ``-M - tol I`` answers
    most cases, the eigenvalues settle the margin and borderline ones."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise InvalidInput("matrix has non-finite entries")
    M = 0.5 * (M + M.T)
    margin = float(np.linalg.eigvalsh(M)[-1])
    try:
        np.linalg.cholesky(-M - tol * np.eye(M.shape[0]))
        factored = True
    except np.linalg.LinAlgError:
        factored = False
    if factored != (margin < -tol):
        # rounding at the boundary: the eigenvalue decides
        factored = margin < -tol
    return Definiteness(factored, margin)


def _pd(m: np.ndarray, tol: float) -> bool:
    return float(np.linalg.eigvalsh(m)[0]) > tol


def verify(problem: LmiProblem, Q, S, H_p, tol: float = TOL) -> Definiteness:
    """Full re-verification: ``Q, S, H_p`` positive definite and the block matrix negative definite."""
    res = is_negative_definite(assemble(problem, Q, S, H_p), tol)
    ok = res.negative and all(_pd(np.asarray(x, dtype=float), tol) for x in (Q, S, H_p))
    return Definiteness(ok, res.margin)


def _lyap(A: np.ndarray) -> np.ndarray | None:
    """Solution of ``A'H + HA = -I`` when ``A`` is Hurwitz."""
    if np.max(np.linalg.eigvals(A).real) >= 0:
        return None
    H = solve_continuous_lyapunov(A.T, -np.eye(A.shape[0]))
    H = 0.5 * (H + H.T)
    return H if _pd(H, 0.0) else None


def _unit(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, 2)


def _bases(problem: LmiProblem, rng: np.random.Generator, n_random: int):
    m = problem.dim
    eye = np.eye(m)
    for name, A in (("lyapunov", problem.Psi_tilde),
                    ("lyapunov-sum", problem.Psi_tilde + problem.Psi_tilde1)):
        H = _lyap(A)
        if H is not None:
            H = _unit(H)
            yield name, eye, eye, H
            yield name + "-shaped", H, H, H
    yield "identity", eye, eye, eye
    for k in range(n_random):
        mats = []
        for _ in range(3):
            R = rng.standard_normal((m, m))
            mats.append(_unit(R @ R.T / m + 0.1 * eye))
        yield f"gram-{k}", *mats


def search_certificate(problem: LmiProblem, budget: int = 2000, seed: int = 0, tol: float = TOL,
                       n_random: int = 4):
    """Multistart search over scaled candidate families with coordinate descent.

    Each family fixes shapes ``(Q0, S0, H0)``; the search scales ``Q`` and
    ``S`` (the LMI is homogeneous, so ``H`` keeps unit scale) to push the
    largest eigenvalue down. Returns an :class:`LmiCertificate` or an
    :class:`InfeasibleReport` once ``budget`` evaluations are spent.
    """
    rng = np.random.default_rng(seed)
    evals = 0
    best = (math.inf, "none")
    starts = [(math.log(q), math.log(s)) for q in (1e-4, 1e-2, 1.0) for s in (1e-2, 1.0)]

    for name, Q0, S0, H0 in _bases(problem, rng, n_random):
        def objective(theta):
            Q, S = math.exp(theta[0]) * Q0, math.exp(theta[1]) * S0
            return is_negative_definite(assemble(problem, Q, S, H0), tol).margin, Q, S

        for start in starts:
            if evals >= budget:
                break
            theta = list(start)
            val, Q, S = objective(theta)
            evals += 1
            step = 1.0
            while step > 1e-3 and evals < budget:
                improved = False
                for i in range(2):
                    for sgn in (1.0, -1.0):
                        trial = list(theta)
                        trial[i] += sgn * step
                        tv, tQ, tS = objective(trial)
                        evals += 1
                        if tv < val:
                            theta, val, Q, S = trial, tv, tQ, tS
                            improved = True
                            break
                if not improved:
                    step *= 0.5
            if val < best[0]:
                best = (val, name)
            res = verify(problem, Q, S, H0, tol)
            if res.negative:
                return LmiCertificate(Q, S, H0.copy(), res.margin)
        if evals >= budget:
            break
    return InfeasibleReport(best[0], evals, best[1])


def monotonicity_probe(problem: LmiProblem, cert: LmiCertificate, U_values) -> list[float]:
    """Largest eigenvalue of the assembled matrix for a fixed certificate as ``U`` varies."""
    out = []
    for U in U_values:
        p = LmiProblem(problem.Psi_tilde, problem.Psi_tilde1, float(U), problem.d)
        out.append(is_negative_definite(assemble(p, cert.Q, cert.S, cert.H_p)).margin)
    return out
