"""Closed-loop platoon matrices and fixed-step RK4 integrators (plain and delayed).

State vectors are stacked as ``[P; V]``: the first ``n`` entries are positions
(or spacing errors), the last ``n`` velocities (or velocity errors).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation, DivergenceError, HistoryUnderrun, InvalidInput
from .topology import CommTopology, laplacian, pinning_matrix, reduce, split_victim

DEFAULT_STEP = 1e-3


@dataclass(frozen=True)
class PlatoonModel:
    """Homogeneous double-integrator platoon under the distributed consensus law.

    ``a_loc``/``b_loc`` describe the optional per-vehicle stabiliser
    ``x' = a_loc x + b_loc u``. Its feedback row is applied to each follower's
    error relative to the leader, so ``a_loc = [[0, 1], [-kp, -kv]]`` adds
    ``-kp * shat_i - kv * zetahat_i`` to the consensus input.
    """

    n: int
    gamma: float
    spacings: tuple
    leader: int
    a_loc: tuple | None = None
    b_loc: tuple = ((0.0,), (1.0,))

    def __post_init__(self):
        if self.gamma <= 0:
            raise InvalidInput(f"gamma must be > 0, got {self.gamma}")
        if len(self.spacings) != self.n:
            raise InvalidInput(f"expected {self.n} spacings, got {len(self.spacings)}")
        if not 0 <= self.leader < self.n:
            raise InvalidInput(f"leader {self.leader} outside [0, {self.n})")
        if self.spacings[self.leader] != 0:
            raise InvalidInput("the leader's own spacing must be 0")
        object.__setattr__(self, "spacings", tuple(float(d) for d in self.spacings))
        b = np.asarray(self.b_loc, dtype=float).reshape(-1)
        if b.shape != (2,) or b[0] != 0 or b[1] != 1:
            raise InvalidInput("b_loc must be [[0], [1]] (input enters the acceleration)")
        if self.a_loc is not None:
            a = np.asarray(self.a_loc, dtype=float)
            if a.shape != (2, 2) or a[0, 0] != 0 or a[0, 1] != 1:
                raise InvalidInput("a_loc must have the form [[0, 1], [-kp, -kv]]")
            object.__setattr__(self, "a_loc", tuple(map(tuple, a.tolist())))

    @property
    def local_gains(self) -> tuple[float, float]:
        if self.a_loc is None:
            return 0.0, 0.0
        return -self.a_loc[1][0], -self.a_loc[1][1]

    @classmethod
    def from_formation(cls, formation: Sequence[float], leader: int, gamma: float,
                       a_loc=None) -> "PlatoonModel":
        """Spacings ``d_i = f_i - f_leader`` from absolute formation offsets ``f``."""
        f = [float(x) for x in formation]
        return cls(len(f), gamma, tuple(x - f[leader] for x in f), leader, a_loc)

    def with_leader(self, leader: int, spacings: Sequence[float]) -> "PlatoonModel":
        return PlatoonModel(self.n, self.gamma, tuple(spacings), leader, self.a_loc, self.b_loc)


@dataclass(frozen=True)
class StackedState:
    t: float
    X: np.ndarray


@dataclass(frozen=True)
class SystemMatrices:
    Psi: np.ndarray
    Psi_hat: np.ndarray
    Psi_hat1: np.ndarray
    Psi_tilde: np.ndarray
    Psi_tilde1: np.ndarray


def error_coordinates(abs_states, leader: int, spacings, t: float = 0.0) -> StackedState:
    """Spacing and velocity errors relative to the leader.

    ``abs_states`` is a sequence of ``(s_i, zeta_i)`` pairs.
    """
    st = np.asarray(abs_states, dtype=float)
    d = np.asarray(spacings, dtype=float)
    s, z = st[:, 0], st[:, 1]
    shat = s - s[leader] - d
    zhat = z - z[leader]
    shat[leader] = 0.0
    zhat[leader] = 0.0
    return StackedState(t, np.concatenate([shat, zhat]))


def _state_block(pos: np.ndarray, vel: np.ndarray) -> np.ndarray:
    m = pos.shape[0]
    return np.block([[np.zeros((m, m)), np.eye(m)], [-pos, -vel]])


def _delay_block(pos: np.ndarray, vel: np.ndarray) -> np.ndarray:
    m = pos.shape[0]
    return np.block([[np.zeros((m, m)), np.zeros((m, m))], [-pos, -vel]])


def build_nominal(model: PlatoonModel, L: np.ndarray, K: np.ndarray | None = None) -> np.ndarray:
    """``[[0, I], [-L, -gamma L]]``, plus the local feedback through ``K`` if given."""
    L = np.asarray(L, dtype=float)
    kp, kv = model.local_gains
    K = np.zeros_like(L) if K is None else np.asarray(K, dtype=float)
    return _state_block(L + kp * K, model.gamma * L + kv * K)


def build_attacked(model: PlatoonModel, L_hat: np.ndarray, G: np.ndarray,
                   K_hat: np.ndarray | None = None,
                   K_G: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Undelayed/delayed pair ``(Psi_hat, Psi_hat1)``."""
    L_hat = np.asarray(L_hat, dtype=float)
    G = np.asarray(G, dtype=float)
    kp, kv = model.local_gains
    K_hat = np.zeros_like(L_hat) if K_hat is None else K_hat
    K_G = np.zeros_like(G) if K_G is None else K_G
    psi_hat = _state_block(L_hat + kp * K_hat, model.gamma * L_hat + kv * K_hat)
    psi_hat1 = _delay_block(G + kp * K_G, model.gamma * G + kv * K_G)
    return psi_hat, psi_hat1


def build_reduced(model: PlatoonModel, Q_red: np.ndarray, W_red: np.ndarray,
                  pinned: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Reduced pair ``(Psi_tilde, Psi_tilde1)`` in follower error coordinates.

    ``pinned`` is the 0/1 mask of followers carrying the local feedback term.
    The delay block keeps a zero top-right block.
    """
    Q = np.asarray(Q_red, dtype=float)
    W = np.asarray(W_red, dtype=float)
    kp, kv = model.local_gains
    P = np.zeros_like(Q) if pinned is None else np.diag(np.asarray(pinned, dtype=float))
    return (_state_block(Q + kp * P, model.gamma * Q + kv * P),
            _delay_block(W, model.gamma * W))


def phase_matrices(model: PlatoonModel, t: CommTopology, victim: int | None = None) -> SystemMatrices:
    """Every matrix of the closed loop for topology ``t`` with ``victim`` delayed."""
    L = laplacian(t)
    K = pinning_matrix(t) if model.a_loc is not None else np.zeros_like(L)
    L_hat, G = split_victim(L, victim)
    K_hat, K_G = split_victim(K, victim)
    psi = build_nominal(model, L, K)
    psi_hat, psi_hat1 = build_attacked(model, L_hat, G, K_hat, K_G)
    Q, W = reduce(L_hat, G, t.leader)
    keep = [i for i in range(t.n) if i != t.leader]
    pinned = np.diag(K)[keep]
    psi_t, psi_t1 = build_reduced(model, Q, W, pinned)
    return SystemMatrices(psi, psi_hat, psi_hat1, psi_t, psi_t1)


class StateHistory:
    """Ring buffer of uniformly spaced samples with linear interpolation.

    Lookups before ``t0`` return the constant initial state ``x0`` as long as
    they stay inside ``span``.
    """

    def __init__(self, x0, h: float, span: float, t0: float = 0.0):
        if h <= 0:
            raise InvalidInput("step h must be positive")
        x0 = np.array(x0, dtype=float)
        self.h = h
        self.span = max(float(span), h)
        self.t0 = t0
        self.cap = int(math.ceil(self.span / h)) + 2
        self.buf = np.empty((self.cap, x0.shape[0]))
        self.buf[0] = x0
        self.x0 = x0
        self.k = 0

    @property
    def t_newest(self) -> float:
        return self.t0 + self.k * self.h

    @property
    def t_oldest(self) -> float:
        first = max(0, self.k - self.cap + 1)
        if first == 0:
            return self.t0 - self.span
        return self.t0 + first * self.h

    def push(self, x) -> None:
        self.k += 1
        self.buf[self.k % self.cap] = x

    def newest(self) -> np.ndarray:
        return self.buf[self.k % self.cap]

    def at(self, t: float) -> np.ndarray:
        tol = 1e-9 * self.h
        if t > self.t_newest + tol:
            raise ContractViolation(f"history lookup at t={t:.6g} is in the future")
        if t < self.t_oldest - tol:
            raise HistoryUnderrun(t, self.t_oldest)
        if t <= self.t0:
            return self.x0
        pos = (t - self.t0) / self.h
        i = int(math.floor(pos))
        if i >= self.k:
            return self.buf[self.k % self.cap]
        w = pos - i
        a = self.buf[i % self.cap]
        if w == 0.0:
            return a
        b = self.buf[(i + 1) % self.cap]
        return (1.0 - w) * a + w * b


Rhs = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


class DelayedRK4:
    """Fixed-step RK4 for ``x' = f(t, x(t), x(t - tau(t)))``.

    Delayed arguments come from a :class:`StateHistory`. When the lag lands
    inside the step being taken, it is interpolated between the step start and
    the current stage estimate; ``tau = 0`` therefore reproduces plain RK4.
    """

    def __init__(self, rhs: Rhs, x0, h: float, span: float, lag: Callable[[float], float] | None = None,
                 t0: float = 0.0):
        self.rhs = rhs
        self.h = h
        self.lag = lag
        self.t0 = t0
        self.k = 0
        self.x = np.array(x0, dtype=float)
        self.history = StateHistory(self.x, h, span, t0)

    @property
    def t(self) -> float:
        return self.t0 + self.k * self.h

    def delayed(self, ts: float, xs: np.ndarray) -> np.ndarray:
        tau = 0.0 if self.lag is None else self.lag(ts)
        if tau == 0.0:
            return xs
        tl = ts - tau
        tk = self.t
        if tl >= tk:
            if ts == tk:
                return self.x
            w = (tl - tk) / (ts - tk)
            return (1.0 - w) * self.x + w * xs
        return self.history.at(tl)

    def amend(self, x) -> None:
        """Overwrite the state just reached (e.g. after clamping) in place."""
        self.x = np.array(x, dtype=float)
        self.history.buf[self.history.k % self.history.cap] = self.x

    def slope(self) -> np.ndarray:
        """``f`` at the current step start (the first RK4 stage)."""
        return self.rhs(self.t, self.x, self.delayed(self.t, self.x))

    def step(self, k1: np.ndarray | None = None) -> np.ndarray:
        h, t, x = self.h, self.t, self.x
        if k1 is None:
            k1 = self.slope()
        with np.errstate(over="ignore", invalid="ignore"):
            x2 = x + 0.5 * h * k1
            k2 = self.rhs(t + 0.5 * h, x2, self.delayed(t + 0.5 * h, x2))
            x3 = x + 0.5 * h * k2
            k3 = self.rhs(t + 0.5 * h, x3, self.delayed(t + 0.5 * h, x3))
            x4 = x + h * k3
            k4 = self.rhs(t + h, x4, self.delayed(t + h, x4))
            x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        self.k += 1
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(self.t)
        self.x = x_new
        self.history.push(x_new)
        return x_new


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    X: np.ndarray


def _n_steps(t_end: float, h: float) -> int:
    if h <= 0 or t_end <= 0:
        raise InvalidInput("h and t_end must be positive")
    return int(round(t_end / h))


def integrate_nominal(Psi, X0, t_end: float, h: float = DEFAULT_STEP) -> Trajectory:
    """Classical RK4 for ``X' = Psi X``, one sample per step including t=0."""
    Psi = np.asarray(Psi, dtype=float)
    x = np.array(X0, dtype=float).reshape(-1)
    steps = _n_steps(t_end, h)
    out = np.empty((steps + 1, x.shape[0]))
    out[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            k1 = Psi @ x
            k2 = Psi @ (x + 0.5 * h * k1)
            k3 = Psi @ (x + 0.5 * h * k2)
            k4 = Psi @ (x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise DivergenceError((k + 1) * h)
            out[k + 1] = x
    return Trajectory(np.arange(steps + 1) * h, out)


def integrate_delayed(Psi_a, Psi_a1, X0, delay, t_end: float, h: float = DEFAULT_STEP) -> Trajectory:
    """RK4 for ``X' = Psi_a X(t) + Psi_a1 X(t - tau(t))`` with constant history ``X0``.

    ``delay`` is either a number (constant lag) or an object with
    ``sample(t)`` and an upper bound ``U``; the history keeps ``2 U`` seconds.
    """
    A = np.asarray(Psi_a, dtype=float)
    A1 = np.asarray(Psi_a1, dtype=float)
    x0 = np.array(X0, dtype=float).reshape(-1)
    if isinstance(delay, (int, float)):
        tau0 = float(delay)
        lag = (lambda t: tau0) if tau0 > 0 else None
        span = 2.0 * tau0
    else:
        lag = delay.sample
        span = 2.0 * delay.U
    steps = _n_steps(t_end, h)
    integ = DelayedRK4(lambda t, x, xd: A @ x + A1 @ xd, x0, h, span, lag)
    out = np.empty((steps + 1, x0.shape[0]))
    out[0] = x0
    for k in range(steps):
        out[k + 1] = integ.step()
    return Trajectory(np.arange(steps + 1) * h, out)
