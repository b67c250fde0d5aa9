"""Leader re-election, victim isolation/readmission and the dwell-time switching law.

The engine reacts to detector events:

* first ``detected`` event: the victim is isolated and the vehicle closest to
  it becomes the leader (phase ``isolated``);
* ``measured`` with ``tau_hat < C``: retrieval. The switching signal toggles
  between ``retrieval`` (victim follows the new leader while its delayed
  transmissions still reach its old receivers) and ``isolated``, until the
  victim's error to the new leader drops below ``eps_recover``; then the
  platoon moves to ``recovered`` (victim receives only) for good;
* ``measured`` with ``tau_hat >= C``: the victim is stopped. Its input is
  overridden by a constant deceleration until its velocity reaches zero.

Every switch the engine emits is checked against the mode-dependent average
dwell time law beforehand and deferred while it would break it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics import PlatoonModel, SystemMatrices, phase_matrices
from .errors import ElectionFailed, InvalidInput
from .topology import (
    ISOLATED, NOMINAL, RECOVERED, RETRIEVAL, CommTopology, TopologyPhase,
    isolate, readmit, reroot,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ResilienceConfig:
    C: float = 15.0
    decel_rate: float = 1.0
    tau_a: float = 2.0
    N0: float = 1.0
    retrieval_dwell: float = 4.0
    isolated_dwell: float = 2.0
    eps_recover: float = 1e-2

    def __post_init__(self):
        for name in ("C", "decel_rate", "tau_a", "retrieval_dwell", "isolated_dwell", "eps_recover"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"{name} must be > 0")
        if self.N0 < 0:
            raise InvalidInput("N0 must be >= 0")


@dataclass
class SwitchingSchedule:
    """Append-only log of ``(t, mode)``; the first entry is the initial mode, not a switch."""

    events: list = field(default_factory=list)
    tau_a: dict = field(default_factory=dict)
    N0: dict = field(default_factory=dict)
    default_tau_a: float = 2.0
    default_N0: float = 1.0

    def append(self, t: float, mode: str) -> None:
        if self.events and not t > self.events[-1][0]:
            raise InvalidInput(f"switch times must increase strictly ({t} after {self.events[-1][0]})")
        self.events.append((float(t), mode))

    def mode_tau_a(self, mode: str) -> float:
        return self.tau_a.get(mode, self.default_tau_a)

    def mode_N0(self, mode: str) -> float:
        return self.N0.get(mode, self.default_N0)

    @property
    def modes(self) -> list[str]:
        return sorted({m for _, m in self.events})


@dataclass(frozen=True)
class LawCheck:
    ok: bool
    counts: dict  # mode -> (switches, residence time, allowed switches)


def switching_law_check(schedule: SwitchingSchedule, window: tuple[float, float]) -> LawCheck:
    """Check ``N_i <= N0_i + T_i / tau_a_i`` for every mode over ``[t_a, t_b]``.

    ``N_i`` counts switches into mode ``i`` inside the closed window and
    ``T_i`` is the time spent in mode ``i`` inside it.
    """
    if not schedule.events:
        raise InvalidInput("schedule is empty")
    t_a, t_b = window
    counts = {}
    ok = True
    ev = schedule.events
    for mode in schedule.modes:
        n_sw = sum(1 for k, (t, m) in enumerate(ev) if k > 0 and m == mode and t_a <= t <= t_b)
        resid = 0.0
        for k, (t, m) in enumerate(ev):
            if m != mode:
                continue
            end = ev[k + 1][0] if k + 1 < len(ev) else max(t_b, t)
            lo, hi = max(t, t_a), min(end, t_b)
            if hi > lo:
                resid += hi - lo
        allowed = schedule.mode_N0(mode) + resid / schedule.mode_tau_a(mode)
        counts[mode] = (n_sw, resid, allowed)
        if n_sw > allowed + 1e-12:
            ok = False
    return LawCheck(ok, counts)


def audit(schedule: SwitchingSchedule, t_end: float) -> bool:
    """Check the switching law over every window spanned by two event times (or ``t_end``)."""
    times = [t for t, _ in schedule.events]
    if t_end > times[-1]:
        times.append(t_end)
    return all(
        switching_law_check(schedule, (a, b)).ok
        for i, a in enumerate(times) for b in times[i + 1:]
    )


def _law_allows(schedule: SwitchingSchedule, t: float, mode: str) -> bool:
    trial = SwitchingSchedule(list(schedule.events), schedule.tau_a, schedule.N0,
                              schedule.default_tau_a, schedule.default_N0)
    trial.append(t, mode)
    return all(switching_law_check(trial, (a, t)).ok for a, _ in schedule.events)


def elect_leader(topology: CommTopology, positions, victim: int) -> int:
    """Vehicle closest to ``victim`` whose re-rooted, victim-isolated graph stays rooted.

    Ties go to the lower index.
    """
    s = np.asarray(positions, dtype=float)
    candidates = sorted((abs(s[i] - s[victim]), i) for i in range(topology.n) if i != victim)
    if not candidates:
        raise ElectionFailed("no vehicle other than the victim")
    for _, i in candidates:
        if reroot(isolate(topology, victim, i), i).is_rooted():
            return i
    raise ElectionFailed(f"no candidate roots a spanning tree once vehicle {victim} is isolated")


def recovery_phases(nominal: CommTopology, victim: int, new_leader: int) -> dict[str, TopologyPhase]:
    """Derived isolated / retrieval / recovered phases for one victim."""
    iso = reroot(isolate(nominal, victim, new_leader), new_leader)
    rec = readmit(iso, victim, [new_leader])
    a = np.array(rec.adjacency)
    for i in range(nominal.n):
        if i not in (victim, new_leader):
            a[i, victim] = nominal.adjacency[i, victim]
    retr = CommTopology(a, new_leader)
    return {
        ISOLATED: TopologyPhase(ISOLATED, iso),
        RETRIEVAL: TopologyPhase(RETRIEVAL, retr),
        RECOVERED: TopologyPhase(RECOVERED, rec),
    }


def apply_phase(phase: TopologyPhase, model: PlatoonModel, victim: int | None = None) -> SystemMatrices:
    """Closed-loop matrices for ``phase``; the model must be referenced to the phase leader."""
    if model.leader != phase.topology.leader:
        raise InvalidInput(
            f"model leader {model.leader} differs from phase leader {phase.topology.leader}")
    return phase_matrices(model, phase.topology, victim)


@dataclass(frozen=True)
class SwitchEvent:
    t: float
    from_phase: str
    to_phase: str
    reason: str  # detected | retrieval_toggle | recovered | stopped


class ResilienceEngine:
    """Deterministic state machine driving topology phases from detector events."""

    def __init__(self, config: ResilienceConfig, nominal: TopologyPhase,
                 overrides: dict[str, TopologyPhase] | None = None, t0: float = 0.0):
        self.config = config
        self.phases: dict[str, TopologyPhase] = {NOMINAL: nominal}
        self.overrides = dict(overrides or {})
        self.phase_id = NOMINAL
        self.schedule = SwitchingSchedule(default_tau_a=config.tau_a, default_N0=config.N0)
        self.schedule.append(t0, NOMINAL)
        self.log: list[SwitchEvent] = []
        self.victim: int | None = None
        self.new_leader: int | None = None
        self.elected: int | None = None
        self.branch: str | None = None  # retrieval | stop
        self.stopped: int | None = None
        self.stop_time: float | None = None
        self.recovered_time: float | None = None
        self.tau_hat: float | None = None
        self._entered = t0
        self._pending: tuple[str, str] | None = None

    @property
    def phase(self) -> TopologyPhase:
        return self.phases[self.phase_id]

    def _switch(self, t: float, to: str, reason: str, force: bool = False) -> SwitchEvent | None:
        if to == self.phase_id:
            return None
        if not force and not _law_allows(self.schedule, t, to):
            self._pending = (to, reason)
            return None
        self._pending = None
        ev = SwitchEvent(t, self.phase_id, to, reason)
        if len(self.schedule.events) == 1 and t == self.schedule.events[0][0]:
            # switching at the start time just changes the initial mode
            self.schedule.events[0] = (float(t), to)
        else:
            self.schedule.append(t, to)
        self.log.append(ev)
        self.phase_id = to
        self._entered = t
        if to == RECOVERED:
            self.recovered_time = t
        return ev

    def _start(self, t: float, victim: int, positions) -> SwitchEvent:
        self.victim = victim
        nominal = self.phases[NOMINAL].topology
        if self.overrides:
            self.phases.update(self.overrides)
            self.new_leader = self.phases[ISOLATED].topology.leader
            if victim == nominal.leader:
                self.elected = elect_leader(nominal, positions, victim)
        else:
            self.new_leader = self.elected = elect_leader(nominal, positions, victim)
            self.phases.update(recovery_phases(nominal, victim, self.new_leader))
        log.info("t=%.3f: vehicle %d flagged, isolated; vehicle %d leads", t, victim, self.new_leader)
        return self._switch(t, ISOLATED, "detected", force=True)

    def handle(self, t: float, events, positions, victim_error: float | None = None) -> list[SwitchEvent]:
        """Process this step's detector events; ``victim_error`` is the victim's
        error norm relative to the new leader (None before isolation)."""
        out: list[SwitchEvent] = []
        for ev in events:
            if ev.event == "detected" and self.victim is None:
                out.append(self._start(t, ev.vehicle, positions))
            elif ev.event == "measured" and ev.vehicle == self.victim:
                self.tau_hat = ev.tau_hat
                if self.branch in (None, "retrieval") and self.recovered_time is None:
                    if ev.tau_hat < self.config.C:
                        if self.branch is None:
                            self.branch = "retrieval"
                            sw = self._switch(t, RETRIEVAL, "retrieval_toggle")
                            if sw:
                                out.append(sw)
                    else:
                        self.branch = "stop"
                        self.stopped = self.victim
                        self.stop_time = t
                        sw = self._switch(t, ISOLATED, "stopped")
                        if sw is None and self.phase_id == ISOLATED:
                            self.log.append(SwitchEvent(t, ISOLATED, ISOLATED, "stopped"))
                            out.append(self.log[-1])
                        elif sw:
                            out.append(sw)
        if self._pending is not None:
            sw = self._switch(t, *self._pending)
            if sw:
                out.append(sw)
        if self.branch == "retrieval" and self.recovered_time is None and not out:
            if victim_error is not None and victim_error < self.config.eps_recover:
                sw = self._switch(t, RECOVERED, "recovered")
                if sw:
                    out.append(sw)
            elif self._pending is None:
                dwell = (self.config.retrieval_dwell if self.phase_id == RETRIEVAL
                         else self.config.isolated_dwell)
                if t - self._entered >= dwell - 1e-12:
                    to = ISOLATED if self.phase_id == RETRIEVAL else RETRIEVAL
                    sw = self._switch(t, to, "retrieval_toggle")
                    if sw:
                        out.append(sw)
        return out
