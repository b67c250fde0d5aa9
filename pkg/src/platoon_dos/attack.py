"""DoS attacks modelled as a time-varying delay on one vehicle's transmissions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import PlatoonModel, StateHistory
from .errors import HistoryUnderrun, InvalidInput
from .topology import CommTopology, pinning_matrix

KINDS = ("constant", "ramp", "sinusoidal", "piecewise")

_REQUIRED = {
    "constant": ("tau0",),
    "ramp": ("tau0", "slope"),
    "sinusoidal": ("mean", "amplitude", "omega"),
    "piecewise": ("times", "values"),
}


@dataclass(frozen=True)
class DelayProfile:
    """Delay ``tau(t)`` applied to every link carrying ``victim``'s state.

    ``tau`` is zero before ``onset`` and after ``onset + duration`` (when a
    duration is given). ``U`` bounds the delay and ``d`` its derivative.
    Parameters by kind (times relative to onset):

    - constant: ``tau0``
    - ramp: ``tau0 + slope * s``, optionally saturated at ``tau_max``
    - sinusoidal: ``mean + amplitude * sin(omega * s + phase)``
    - piecewise: linear interpolation of ``values`` at ``times``
    """

    kind: str
    U: float
    d: float
    victim: int
    onset: float = 0.0
    params: dict = field(default_factory=dict)
    duration: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown delay kind {self.kind!r}; expected one of {KINDS}")
        missing = [p for p in _REQUIRED[self.kind] if p not in self.params]
        if missing:
            raise InvalidInput(f"{self.kind} profile is missing parameters {missing}")
        if self.kind == "piecewise":
            times = np.asarray(self.params["times"], dtype=float)
            values = np.asarray(self.params["values"], dtype=float)
            if times.shape != values.shape or times.size < 1 or np.any(np.diff(times) <= 0):
                raise InvalidInput("piecewise times must be strictly increasing and match values")

    @classmethod
    def constant(cls, tau0: float, U: float, d: float, victim: int, onset: float = 0.0,
                 duration: float | None = None) -> "DelayProfile":
        return cls("constant", U, d, victim, onset, {"tau0": tau0}, duration)

    def snapped(self, h: float) -> "DelayProfile":
        """Copy with onset (and duration) moved onto the integration grid."""
        onset = round(self.onset / h) * h
        duration = None if self.duration is None else round(self.duration / h) * h
        return replace(self, onset=onset, duration=duration)

    @property
    def end(self) -> float:
        return math.inf if self.duration is None else self.onset + self.duration

    def active(self, t: float) -> bool:
        return self.onset <= t < self.end

    def _tau(self, s: float) -> float:
        p = self.params
        if self.kind == "constant":
            return float(p["tau0"])
        if self.kind == "ramp":
            tau = p["tau0"] + p["slope"] * s
            cap = p.get("tau_max")
            return float(tau if cap is None else min(tau, cap))
        if self.kind == "sinusoidal":
            return float(p["mean"] + p["amplitude"] * math.sin(p["omega"] * s + p.get("phase", 0.0)))
        return float(np.interp(s, p["times"], p["values"]))

    def sample(self, t: float) -> float:
        if not self.active(t):
            return 0.0
        return self._tau(t - self.onset)

    def derivative(self, t: float) -> float | None:
        """Analytic ``d tau / dt`` for built-in kinds; None for piecewise data."""
        if not self.active(t):
            return 0.0
        s = t - self.onset
        p = self.params
        if self.kind == "constant":
            return 0.0
        if self.kind == "ramp":
            cap = p.get("tau_max")
            if cap is not None and p["tau0"] + p["slope"] * s >= cap:
                return 0.0
            return float(p["slope"])
        if self.kind == "sinusoidal":
            return float(p["amplitude"] * p["omega"] * math.cos(p["omega"] * s + p.get("phase", 0.0)))
        return None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "onset": self.onset, "params": dict(self.params),
                "U": self.U, "d": self.d, "victim": self.victim, "duration": self.duration}


@dataclass(frozen=True)
class Violation:
    t: float | None
    rule: str
    value: float


@dataclass
class DelayReport:
    ok: bool
    violations: list

    @property
    def first_violation(self) -> float | None:
        times = [v.t for v in self.violations if v.t is not None]
        if any(v.t is None for v in self.violations):
            return None if not times else min(times)
        return min(times) if times else None


def validate(profile: DelayProfile, horizon: float, h: float = 1e-3) -> DelayReport:
    """Check ``0 < tau < U``, ``U + tau < 2U`` and ``tau' < d < 1`` on the active window.

    Samples every ``h``; derivatives are analytic where available and forward
    differences otherwise. Only the first violation of each rule is reported.
    """
    found: dict[str, Violation] = {}

    def flag(t, rule, value):
        found.setdefault(rule, Violation(t, rule, float(value)))

    if not profile.U > 0:
        flag(None, "U > 0", profile.U)
    if not profile.d < 1:
        flag(None, "d < 1", profile.d)
    start = profile.onset
    stop = min(horizon, profile.end)
    n = int(math.floor((stop - start) / h + 1e-9))
    for k in range(max(n, 0)):
        t = start + k * h
        tau = profile.sample(t)
        if not tau > 0:
            flag(t, "tau > 0", tau)
        if not tau < profile.U:
            flag(t, "tau < U", tau)
        if not profile.U + tau < 2 * profile.U:
            flag(t, "U + tau < 2U", tau)
        rate = profile.derivative(t)
        if rate is None:
            if t + h >= stop:
                continue
            rate = (profile.sample(t + h) - tau) / h
        if not rate < profile.d:
            flag(t, "dtau/dt < d", rate)
    violations = sorted(found.values(), key=lambda v: (-1.0 if v.t is None else v.t, v.rule))
    return DelayReport(not violations, violations)


def delayed_control(model: PlatoonModel, topology: CommTopology, states_now, history: StateHistory,
                    profile: DelayProfile | None, t: float) -> np.ndarray:
    """Per-vehicle consensus input with the victim's state read ``tau(t)`` late.

    ``states_now`` and the history hold absolute stacked states ``[s; zeta]``.
    Terms that use the victim's transmitted state read it from the history;
    everything else is current. With ``tau = 0`` this is the undelayed law.
    """
    n = topology.n
    x = np.asarray(states_now, dtype=float)
    d = np.asarray(model.spacings, dtype=float)
    victim = None if profile is None else profile.victim
    tau = 0.0 if profile is None else profile.sample(t)
    if tau > 0:
        if t - tau < history.t_oldest - 1e-9 * history.h:
            raise HistoryUnderrun(t - tau, history.t_oldest)
        x_late = history.at(t - tau)
    else:
        x_late = x
    p_now, v_now = x[:n] - d, x[n:]
    p_late, v_late = x_late[:n] - d, x_late[n:]

    def received(j):
        if j == victim:
            return p_late[j], v_late[j]
        return p_now[j], v_now[j]

    a = topology.adjacency
    kp, kv = model.local_gains
    pinned = np.diag(pinning_matrix(topology)) > 0
    u = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            if j == i or a[i, j] == 0:
                continue
            pj, vj = received(j)
            acc -= a[i, j] * ((p_now[i] - pj) + model.gamma * (v_now[i] - vj))
        if pinned[i] and model.a_loc is not None:
            pl, vl = received(topology.leader)
            acc -= kp * (p_now[i] - pl) + kv * (v_now[i] - vl)
        u[i] = acc
    return u
