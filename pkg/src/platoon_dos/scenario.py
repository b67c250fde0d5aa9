"""Scenario configuration and the end-to-end pipeline.

One run integrates the platoon in absolute coordinates ``[s; zeta]`` with a
fixed RK4 step, feeds every vehicle's received state to its detector,
lets the resilience engine switch topology phases, and records one trace row
per step. Given a config the run is fully deterministic.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import detection
from .attack import DelayProfile, validate as validate_profile
from .dynamics import DelayedRK4, PlatoonModel, phase_matrices
from .errors import ConfigError, PlatoonError
from .resilience import ResilienceConfig, ResilienceEngine, audit
from .stability import LmiProblem, search_certificate
from .topology import (
    ISOLATED, NOMINAL, RECOVERED, RETRIEVAL, CommTopology, TopologyPhase,
)

log = logging.getLogger(__name__)

SCHEMA = "platoon-dos/1"
PHASE_IDS = (NOMINAL, ISOLATED, RETRIEVAL, RECOVERED)


@dataclass(frozen=True)
class ScenarioConfig:
    n: int
    gamma: float
    formation: tuple
    recovery_formation: tuple
    initial_positions: tuple
    initial_velocities: tuple
    phases: dict  # phase id -> CommTopology; "nominal" required
    attack: DelayProfile | None = None
    epsilon: float = detection.DEFAULT_EPSILON
    resilience: ResilienceConfig = field(default_factory=ResilienceConfig)
    h: float = 1e-3
    t_end: float = 60.0
    a_loc: tuple | None = None
    output_dir: str = "out"
    seed: int = 0
    lmi_budget: int = 600

    @property
    def nominal(self) -> CommTopology:
        return self.phases[NOMINAL]

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.h))

    def model_for(self, leader: int, recovered: bool) -> PlatoonModel:
        f = self.recovery_formation if recovered else self.formation
        return PlatoonModel.from_formation(f, leader, self.gamma, self.a_loc)

    def without_attack(self) -> "ScenarioConfig":
        return _replace(self, attack=None)

    def to_dict(self) -> dict:
        r = self.resilience
        return {
            "schema": SCHEMA,
            "platoon": {"n": self.n, "gamma": self.gamma,
                        "local_feedback": None if self.a_loc is None else [list(r_) for r_ in self.a_loc],
                        "formation": list(self.formation),
                        "recovery_formation": list(self.recovery_formation)},
            "initial": {"positions": list(self.initial_positions),
                        "velocities": list(self.initial_velocities)},
            "topology": {"phases": {k: t.to_dict()
                                    for k, t in self.phases.items()}},
            "attack": None if self.attack is None else self.attack.to_dict(),
            "detector": {"epsilon": self.epsilon},
            "resilience": {"C": r.C, "decel_rate": r.decel_rate, "tau_a": r.tau_a, "N0": r.N0,
                           "retrieval_dwell": r.retrieval_dwell, "isolated_dwell": r.isolated_dwell,
                           "eps_recover": r.eps_recover},
            "integration": {"h": self.h, "t_end": self.t_end},
            "output_dir": self.output_dir,
            "seed": self.seed,
            "stability": {"budget": self.lmi_budget},
        }


def _replace(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    from dataclasses import replace
    return replace(cfg, **changes)


def _num_list(d: dict, key: str, where: str, problems: list, n: int | None = None):
    v = d.get(key)
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        problems.append(f"{where}.{key}: expected a list of numbers")
        return None
    if n is not None and len(v) != n:
        problems.append(f"{where}.{key}: expected {n} entries, got {len(v)}")
        return None
    return tuple(float(x) for x in v)


def _number(d: dict, key: str, where: str, problems: list, default=None, positive=False):
    v = d.get(key, default)
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        problems.append(f"{where}.{key}: expected a number")
        return default
    if positive and not v > 0:
        problems.append(f"{where}.{key}: must be > 0, got {v}")
    return float(v)


def config_from_dict(doc: dict, path: str | None = None) -> ScenarioConfig:
    """Build and cross-validate a config, collecting every problem before raising."""
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["top level must be a JSON object"], path)
    if doc.get("schema") != SCHEMA:
        problems.append(f"schema: expected {SCHEMA!r}, got {doc.get('schema')!r}")

    pl = doc.get("platoon") or {}
    n = pl.get("n")
    if not isinstance(n, int) or isinstance(n, bool) or n < 2:
        problems.append("platoon.n: expected an integer >= 2")
        raise ConfigError(problems, path)
    gamma = _number(pl, "gamma", "platoon", problems, positive=True)
    formation = _num_list(pl, "formation", "platoon", problems, n)
    rec_formation = formation
    if pl.get("recovery_formation") is not None:
        rec_formation = _num_list(pl, "recovery_formation", "platoon", problems, n)
    a_loc = pl.get("local_feedback")
    if a_loc is not None:
        a = np.asarray(a_loc, dtype=float) if isinstance(a_loc, list) else None
        if a is None or a.shape != (2, 2) or a[0, 0] != 0 or a[0, 1] != 1:
            problems.append("platoon.local_feedback: expected [[0, 1], [-kp, -kv]]")
            a_loc = None
        else:
            a_loc = tuple(map(tuple, a.tolist()))

    ini = doc.get("initial") or {}
    s0 = _num_list(ini, "positions", "initial", problems, n)
    z0 = _num_list(ini, "velocities", "initial", problems, n)

    phases: dict[str, CommTopology] = {}
    raw_phases = (doc.get("topology") or {}).get("phases") or {}
    if NOMINAL not in raw_phases:
        problems.append("topology.phases.nominal: missing")
    for pid, raw in raw_phases.items():
        where = f"topology.phases.{pid}"
        if pid not in PHASE_IDS:
            problems.append(f"{where}: unknown phase id (expected one of {PHASE_IDS})")
            continue
        try:
            t = CommTopology(np.asarray(raw["adjacency"], dtype=float), int(raw["leader"]),
                             frozenset(raw.get("detached", [])))
            if t.n != n:
                problems.append(f"{where}.adjacency: expected {n}x{n}")
                continue
            TopologyPhase(pid, t)
            phases[pid] = t
        except (KeyError, TypeError, ValueError, PlatoonError) as exc:
            problems.append(f"{where}: {exc}")
    overrides = {k for k in phases if k != NOMINAL}
    if overrides and overrides != {ISOLATED, RETRIEVAL, RECOVERED}:
        problems.append("topology.phases: give all of isolated/retrieval/recovered or none")

    integ = doc.get("integration") or {}
    h = _number(integ, "h", "integration", problems, default=1e-3, positive=True)
    t_end = _number(integ, "t_end", "integration", problems, positive=True)

    attack = None
    at = doc.get("attack")
    if at is not None:
        try:
            attack = DelayProfile(
                kind=at["kind"], U=float(at["U"]), d=float(at["d"]), victim=int(at["victim"]),
                onset=float(at.get("onset", 0.0)), params=dict(at.get("params") or {}),
                duration=None if at.get("duration") is None else float(at["duration"]),
            )
            if h:
                attack = attack.snapped(h)
            if not 0 <= attack.victim < n:
                problems.append(f"attack.victim: {attack.victim} outside [0, {n})")
            elif NOMINAL in phases and attack.victim != phases[NOMINAL].leader:
                problems.append("attack.victim: only attacks on the nominal leader are supported")
            if t_end and h:
                rep = validate_profile(attack, t_end, h)
                for v in rep.violations:
                    at_t = "" if v.t is None else f" at t={v.t:.6g}"
                    problems.append(f"attack: bound {v.rule} violated{at_t} (value {v.value:.6g})")
        except KeyError as exc:
            problems.append(f"attack: missing field {exc}")
        except (TypeError, ValueError, PlatoonError) as exc:
            problems.append(f"attack: {exc}")

    det = doc.get("detector") or {}
    eps = _number(det, "epsilon", "detector", problems, default=detection.DEFAULT_EPSILON, positive=True)

    res = doc.get("resilience") or {}
    resilience = None
    try:
        resilience = ResilienceConfig(**{k: float(v) for k, v in res.items()})
    except TypeError as exc:
        problems.append(f"resilience: {exc}")
    except PlatoonError as exc:
        problems.append(f"resilience: {exc}")
    if resilience is not None and attack is not None and not resilience.C < attack.U:
        problems.append(f"resilience.C: must be < attack.U ({resilience.C} >= {attack.U})")

    stab = doc.get("stability") or {}
    budget = stab.get("budget", 600)
    if not isinstance(budget, int) or budget < 1:
        problems.append("stability.budget: expected a positive integer")

    if problems:
        raise ConfigError(problems, path)
    return ScenarioConfig(
        n=n, gamma=gamma, formation=formation, recovery_formation=rec_formation,
        initial_positions=s0, initial_velocities=z0, phases=phases, attack=attack,
        epsilon=eps, resilience=resilience, h=h, t_end=t_end, a_loc=a_loc,
        output_dir=str(doc.get("output_dir", "out")), seed=int(doc.get("seed", 0)),
        lmi_budget=budget,
    )


def load_config(path) -> ScenarioConfig:
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read: {exc.strerror}"], path) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"], path) from exc
    return config_from_dict(doc, path)


@dataclass
class ScenarioTrace:
    config: ScenarioConfig
    t: np.ndarray
    s: np.ndarray
    zeta: np.ndarray
    shat: np.ndarray
    zetahat: np.ndarray
    u: np.ndarray
    phase: list
    detector_events: list
    switch_events: list
    schedule: object
    summary: dict

    @property
    def n(self) -> int:
        return self.s.shape[1]


class _Plant:
    """Right-hand side for the active phase; rebuilt on every switch."""

    def __init__(self, cfg: ScenarioConfig, victim: int | None):
        self.cfg = cfg
        self.victim = victim
        self.n = cfg.n
        self.stop_vehicle: int | None = None
        self.holding = False
        self.set_phase(cfg.nominal, recovered=False)

    def set_phase(self, topo: CommTopology, recovered: bool) -> None:
        self.model = self.cfg.model_for(topo.leader, recovered)
        self.topo = topo
        sm = phase_matrices(self.model, topo, self.victim)
        self.A = sm.Psi_hat
        self.A1 = sm.Psi_hat1
        self.offset = np.concatenate([np.asarray(self.model.spacings), np.zeros(self.n)])
        self.delayed = bool(np.any(self.A1))

    def __call__(self, t, x, xd):
        dx = self.A @ (x - self.offset)
        if self.delayed:
            dx = dx + self.A1 @ (xd - self.offset)
        v = self.stop_vehicle
        if v is not None:
            dx[v] = x[self.n + v]
            dx[self.n + v] = 0.0 if self.holding else -self.cfg.resilience.decel_rate
        return dx


def _errors(x: np.ndarray, n: int, leader: int, spacings) -> tuple[np.ndarray, np.ndarray]:
    s, z = x[:n], x[n:]
    shat = s - s[leader] - np.asarray(spacings)
    zhat = z - z[leader]
    return shat, zhat


def run(cfg: ScenarioConfig) -> ScenarioTrace:
    """Simulate -> detect -> respond -> certify for one config."""
    n, h, steps = cfg.n, cfg.h, cfg.steps
    profile = cfg.attack
    victim = None if profile is None else profile.victim
    span = 2.0 * profile.U if profile else h
    plant = _Plant(cfg, victim)
    x0 = np.concatenate([cfg.initial_positions, cfg.initial_velocities])
    stepper = DelayedRK4(plant, x0, h, span, lag=None if profile is None else profile.sample)
    overrides = {k: TopologyPhase(k, v) for k, v in cfg.phases.items() if k != NOMINAL}
    engine = ResilienceEngine(cfg.resilience, TopologyPhase(NOMINAL, cfg.nominal), overrides)
    detectors = [detection.DetectorState(i, cfg.epsilon, h) for i in range(n)]

    T = np.arange(steps + 1) * h
    S = np.empty((steps + 1, n))
    Z = np.empty((steps + 1, n))
    SH = np.empty((steps + 1, n))
    ZH = np.empty((steps + 1, n))
    Uu = np.empty((steps + 1, n))
    phase_log: list[str] = []
    det_events: list = []
    sw_events: list = []
    rec_model = None

    for k in range(steps + 1):
        t = float(T[k])
        x = stepper.x
        tau = 0.0 if profile is None else profile.sample(t)
        received = stepper.history.at(t - tau) if tau > 0 else x
        events = []
        for i in range(n):
            src = received if i == victim else x
            _, ev = detection.step(detectors[i], (src[i], src[n + i]), (x[i], x[n + i]), h, t)
            events.extend(ev)
        det_events.extend(events)

        verr = None
        if engine.new_leader is not None:
            if rec_model is None:
                rec_model = cfg.model_for(engine.new_leader, recovered=True)
            sh, zh = _errors(x, n, engine.new_leader, rec_model.spacings)
            verr = math.hypot(sh[victim], zh[victim])
        switched = engine.handle(t, events, x[:n], verr)
        if switched:
            sw_events.extend(switched)
            if engine.stopped is not None and plant.stop_vehicle is None:
                plant.stop_vehicle = engine.stopped
            plant.set_phase(engine.phase.topology, recovered=engine.phase_id != NOMINAL)

        k1 = stepper.slope()
        S[k], Z[k] = x[:n], x[n:]
        SH[k], ZH[k] = _errors(x, n, plant.topo.leader, plant.model.spacings)
        Uu[k] = k1[n:]
        phase_log.append(engine.phase_id)
        if k < steps:
            xn = stepper.step(k1)
            v = plant.stop_vehicle
            if v is not None and xn[n + v] <= 0.0:
                xn = xn.copy()
                xn[n + v] = 0.0
                stepper.amend(xn)
                plant.holding = True

    summary = _summarize(cfg, engine, det_events, T, S, Z, SH, ZH, plant)
    return ScenarioTrace(cfg, T, S, Z, SH, ZH, Uu, phase_log, det_events, sw_events,
                         engine.schedule, summary)


def certificate_for(cfg: ScenarioConfig, topo: CommTopology, recovered: bool):
    """Search the LMI certificate for ``topo`` with the attack's bounds."""
    if cfg.attack is None:
        return None
    victim = cfg.attack.victim
    if topo.detached:
        # a detached vehicle is a pure double integrator; certify the rest
        keep = [i for i in range(topo.n) if i not in topo.detached]
        f = cfg.recovery_formation if recovered else cfg.formation
        topo = CommTopology(topo.adjacency[np.ix_(keep, keep)], keep.index(topo.leader))
        model = PlatoonModel.from_formation([f[i] for i in keep], topo.leader, cfg.gamma, cfg.a_loc)
        victim = keep.index(victim) if victim in keep else None
    else:
        model = cfg.model_for(topo.leader, recovered)
    sm = phase_matrices(model, topo, victim)
    problem = LmiProblem(sm.Psi_tilde, sm.Psi_tilde1, cfg.attack.U, cfg.attack.d)
    return search_certificate(problem, budget=cfg.lmi_budget, seed=cfg.seed)


def _summarize(cfg, engine, det_events, T, S, Z, SH, ZH, plant) -> dict:
    victim = engine.victim
    first = lambda kind: next((e for e in det_events if e.event == kind and e.vehicle == victim), None)
    det = first("detected")
    meas = first("measured")
    followers = [i for i in range(cfg.n) if i not in (plant.topo.leader, engine.stopped)]
    cert = None
    if cfg.attack is not None:
        phase = engine.phases.get(RETRIEVAL) if engine.branch == "retrieval" else None
        topo = phase.topology if phase is not None else plant.topo
        res = certificate_for(cfg, topo, recovered=topo is not cfg.nominal)
        cert = {"phase": RETRIEVAL if phase is not None else engine.phase_id, **_cert_summary(res)}
    return {
        "schema": SCHEMA,
        "t_end": float(T[-1]),
        "steps": int(len(T) - 1),
        "victim": victim,
        "detection_time": None if det is None else det.t,
        "first_tau_hat": None if meas is None else meas.tau_hat,
        "last_tau_hat": engine.tau_hat,
        "branch": engine.branch,
        "elected_leader": engine.elected,
        "final_leader": plant.topo.leader,
        "final_phase": engine.phase_id,
        "recovery_time": engine.recovered_time,
        "stop_time": engine.stop_time,
        "switches": len(engine.log),
        "schedule_ok": audit(engine.schedule, float(T[-1])),
        "final_max_abs_spacing_error": float(np.max(np.abs(SH[-1, followers]))),
        "final_max_abs_velocity_error": float(np.max(np.abs(ZH[-1, followers]))),
        "final_positions": S[-1].tolist(),
        "final_velocities": Z[-1].tolist(),
        "certificate": cert,
    }


def _cert_summary(res) -> dict:
    if res is None:
        return {"feasible": None}
    d = res.to_dict()
    return {k: d[k] for k in d if k not in ("Q", "S", "H_p")}
