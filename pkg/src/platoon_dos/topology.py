"""Communication graphs and the Laplacian-derived matrices used by the controller.

Adjacency convention: ``adjacency[i, j] = a_ij > 0`` means vehicle ``i``
receives vehicle ``j``'s state, i.e. information flows along the edge j -> i.
Vehicle indices are 0-based.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import AssumptionViolated, InvalidTopology

NOMINAL = "nominal"
ATTACKED = "attacked"
ISOLATED = "isolated"
RETRIEVAL = "retrieval"
RECOVERED = "recovered"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CommTopology:
    """Weighted directed communication graph with a designated leader.

    ``detached`` holds vehicles deliberately cut out of the information flow
    (an isolated attack victim); they are exempt from the spanning-tree check.
    """

    adjacency: np.ndarray
    leader: int
    detached: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidTopology(f"adjacency must be square, got shape {a.shape}")
        n = a.shape[0]
        if n < 2:
            raise InvalidTopology("a platoon needs at least 2 vehicles")
        if not np.all(np.isfinite(a)):
            raise InvalidTopology("adjacency has non-finite weights")
        if np.any(a < 0):
            raise InvalidTopology("adjacency weights must be non-negative")
        if np.any(np.diag(a) != 0):
            raise InvalidTopology("adjacency diagonal must be zero (no self-loops)")
        if not 0 <= self.leader < n:
            raise InvalidTopology(f"leader {self.leader} outside [0, {n})")
        bad = [v for v in self.detached if not 0 <= v < n or v == self.leader]
        if bad:
            raise InvalidTopology(f"invalid detached vehicles {sorted(bad)}")
        object.__setattr__(self, "adjacency", _frozen(a))
        object.__setattr__(self, "detached", frozenset(int(v) for v in self.detached))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def sources_of(self, i: int) -> list[int]:
        """Vehicles whose state vehicle ``i`` receives."""
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def is_rooted(self) -> bool:
        return has_rooted_spanning_tree(self, self.leader, exclude=self.detached)

    def require_rooted(self) -> "CommTopology":
        if not self.is_rooted():
            raise AssumptionViolated(
                f"no spanning tree rooted at leader {self.leader} "
                f"(detached: {sorted(self.detached)})"
            )
        return self

    def to_dict(self) -> dict:
        return {
            "adjacency": self.adjacency.tolist(),
            "leader": self.leader,
            "detached": sorted(self.detached),
        }


@dataclass(frozen=True)
class TopologyPhase:
    id: str
    topology: CommTopology

    def __post_init__(self):
        self.topology.require_rooted()


def laplacian(t: CommTopology | np.ndarray) -> np.ndarray:
    """L = D - A with D the diagonal of row sums (in-degrees)."""
    a = t.adjacency if isinstance(t, CommTopology) else np.asarray(t, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidTopology(f"adjacency must be square, got shape {a.shape}")
    return np.diag(a.sum(axis=1)) - a


def has_rooted_spanning_tree(t: CommTopology, root: int, exclude: Iterable[int] = ()) -> bool:
    """True iff every vehicle not in ``exclude`` is reachable from ``root``."""
    skip = set(exclude)
    seen = {root}
    queue = deque([root])
    while queue:
        j = queue.popleft()
        # receivers of j are the rows with a nonzero entry in column j
        for i in np.flatnonzero(t.adjacency[:, j]):
            i = int(i)
            if i not in seen and i not in skip:
                seen.add(i)
                queue.append(i)
    return all(v in seen for v in range(t.n) if v not in skip)


def pinning_matrix(t: CommTopology) -> np.ndarray:
    """Leader-tracking matrix for the local feedback term.

    Row i is ``e_i - e_leader`` for every follower that receives at least one
    neighbour, zero otherwise. Rows sum to zero like a Laplacian.
    """
    k = np.zeros((t.n, t.n))
    for i in range(t.n):
        if i != t.leader and t.adjacency[i].any():
            k[i, i] = 1.0
            k[i, t.leader] = -1.0
    return k


def split_victim(m: np.ndarray, victim: int | None) -> tuple[np.ndarray, np.ndarray]:
    """Split a coupling matrix into undelayed and delayed parts.

    The delayed part keeps only the off-diagonal entries of the victim's
    column: those terms read the victim's transmitted state. ``m == hat + delayed``.
    """
    hat = np.array(m, dtype=float)
    delayed = np.zeros_like(hat)
    if victim is None:
        return hat, delayed
    col = hat[:, victim].copy()
    col[victim] = 0.0
    delayed[:, victim] = col
    hat[:, victim] -= col
    return hat, delayed


def reduce(L_hat: np.ndarray, G: np.ndarray, leader: int) -> tuple[np.ndarray, np.ndarray]:
    """Error-coordinate reduction relative to ``leader``.

    ``Q[i, j] = L_hat[i, j] - L_hat[leader, j]`` and likewise for ``G``,
    restricted to non-leader rows and columns.
    """
    L_hat = np.asarray(L_hat, dtype=float)
    G = np.asarray(G, dtype=float)
    keep = [i for i in range(L_hat.shape[0]) if i != leader]
    ix = np.ix_(keep, keep)
    q = (L_hat - L_hat[leader][None, :])[ix]
    w = (G - G[leader][None, :])[ix]
    return q, w


@dataclass(frozen=True)
class LaplacianFamily:
    L: np.ndarray
    L_hat: np.ndarray
    G: np.ndarray
    Q_red: np.ndarray
    W_red: np.ndarray


def laplacian_family(t: CommTopology, victim: int | None = None) -> LaplacianFamily:
    """All Laplacian-derived matrices for ``t`` with ``victim``'s transmissions delayed."""
    L = laplacian(t)
    L_hat, G = split_victim(L, victim)
    Q_red, W_red = reduce(L_hat, G, t.leader)
    return LaplacianFamily(L, L_hat, G, Q_red, W_red)


def isolate(t: CommTopology, victim: int, new_leader: int | None = None) -> CommTopology:
    """Remove every edge carrying data from ``victim``.

    Isolating the current leader requires a ``new_leader``; the victim is then
    marked detached until it is readmitted.
    """
    if not 0 <= victim < t.n:
        raise InvalidTopology(f"victim {victim} outside [0, {t.n})")
    leader = t.leader
    if victim == t.leader:
        if new_leader is None:
            raise AssumptionViolated(f"isolating leader {victim} leaves the platoon without a root")
        leader = new_leader
    elif new_leader is not None:
        leader = new_leader
    a = np.array(t.adjacency)
    a[:, victim] = 0.0
    detached = set(t.detached)
    if not a[victim].any():
        detached.add(victim)
    return CommTopology(a, leader, frozenset(detached - {leader}))


def reroot(t: CommTopology, leader: int) -> CommTopology:
    """Make ``leader`` the root; a leader does not listen, so its row is cleared."""
    a = np.array(t.adjacency)
    a[leader, :] = 0.0
    return CommTopology(a, leader, t.detached - {leader})


def readmit(t: CommTopology, victim: int, sources: Iterable[int] | None = None,
            weight: float = 1.0) -> CommTopology:
    """Let ``victim`` receive again (receiver-only); its outgoing edges stay removed."""
    a = np.array(t.adjacency)
    srcs = [t.leader] if sources is None else list(sources)
    for j in srcs:
        if j != victim and a[victim, j] == 0:
            a[victim, j] = weight
    return CommTopology(a, t.leader, t.detached - {victim})
