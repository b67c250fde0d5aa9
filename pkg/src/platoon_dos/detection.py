"""Twin-counter attack detection and delay measurement, one detector per vehicle.

While a vehicle's received state matches its reference both counters tick.
A deviation larger than ``epsilon`` freezes counter 1 and latches the
reference state. Counter 2 keeps ticking until the received state comes back
to the latched value; the counter difference is the measured delay.

The return to the latch is located on the polyline through consecutive
received samples, so a fast-moving state is not missed between grid points.
The closest approach inside the epsilon ball fixes the stop time of counter 2,
which is why the measurement is emitted one step after the match.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NOMINAL = "nominal"
COUNTING = "counting"
MEASURED = "measured"

DEFAULT_EPSILON = 1e-3


@dataclass(frozen=True)
class DetectorEvent:
    t: float
    vehicle: int
    event: str  # detected | measured | reset
    tau_hat: float


@dataclass
class DetectorState:
    vehicle: int
    epsilon: float = DEFAULT_EPSILON
    h: float = 1e-3
    n1: int = 0
    n2: int = 0
    mode: str = NOMINAL
    X_r: np.ndarray | None = None
    tau_hat: float = 0.0
    last_measured: float | None = None
    _prev: np.ndarray | None = field(default=None, repr=False)
    _best: tuple | None = field(default=None, repr=False)

    @property
    def T1(self) -> float:
        return self.n1 * self.h

    @property
    def T2(self) -> float:
        return self.n2 * self.h


def reset(det: DetectorState) -> DetectorState:
    """Zero both counters and drop the latch; a measurement in progress is abandoned."""
    det.n1 = det.n2 = 0
    det.mode = NOMINAL
    det.X_r = None
    det._prev = None
    det._best = None
    return det


def _segment_distance(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> tuple[float, float]:
    ab = b - a
    den = float(ab @ ab)
    lam = 0.0 if den == 0.0 else min(1.0, max(0.0, float((p - a) @ ab) / den))
    return float(np.linalg.norm(a + lam * ab - p)), lam


def step(det: DetectorState, x_i, x_ref, h: float, t: float = 0.0) -> tuple[DetectorState, list]:
    """Advance ``det`` by one step of length ``h`` at time ``t``; returns emitted events."""
    x_i = np.asarray(x_i, dtype=float)
    det.h = h
    events: list[DetectorEvent] = []
    if det.mode != COUNTING:
        det.mode = NOMINAL
        det.n1 += 1
        det.n2 += 1
        if float(np.linalg.norm(x_i - np.asarray(x_ref, dtype=float))) <= det.epsilon:
            det.tau_hat = 0.0
            return det, events
        det.mode = COUNTING
        det.X_r = np.array(x_ref, dtype=float)
        det._prev = x_i.copy()
        det._best = None
        events.append(DetectorEvent(t, det.vehicle, "detected", 0.0))
        return det, events

    det.n2 += 1
    dist, lam = _segment_distance(det._prev, x_i, det.X_r)
    det._prev = x_i.copy()
    pos = det.n2 - 1 + lam
    if det._best is not None and not dist < det._best[0]:
        stop = int(math.floor(det._best[1] + 0.5))
        det.n2 = stop
        det.tau_hat = (det.n2 - det.n1) * h
        det.last_measured = det.tau_hat
        det.mode = MEASURED
        events.append(DetectorEvent(t, det.vehicle, "measured", det.tau_hat))
        reset(det)
        events.append(DetectorEvent(t, det.vehicle, "reset", det.tau_hat))
        return det, events
    if dist <= det.epsilon:
        det._best = (dist, pos)
    return det, events
