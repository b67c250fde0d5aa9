"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class PlatoonError(Exception):
    """Base class for every error raised by this package."""


class InvalidTopology(PlatoonError, ValueError):
    pass


class AssumptionViolated(PlatoonError):
    """The communication graph no longer has a spanning tree rooted at the leader."""


class ElectionFailed(PlatoonError):
    pass


class InvalidCertificate(PlatoonError, ValueError):
    pass


class InvalidInput(PlatoonError, ValueError):
    pass


class ContractViolation(PlatoonError):
    """A runtime precondition of an integrator or controller was broken."""


class HistoryUnderrun(ContractViolation):
    def __init__(self, t_query: float, t_oldest: float):
        super().__init__(
            f"delayed lookup at t={t_query:.6g} s precedes buffered history (oldest t={t_oldest:.6g} s)"
        )
        self.t_query = t_query
        self.t_oldest = t_oldest


class DivergenceError(ContractViolation):
    def __init__(self, t: float):
        super().__init__(f"state became non-finite at t={t:.6g} s")
        self.t = t


class ConfigError(PlatoonError):
    """Config could not be parsed or failed cross-validation.

    ``problems`` lists every violated invariant, one message each.
    """

    def __init__(self, problems: list[str], path: str | None = None):
        self.problems = list(problems)
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(where + "; ".join(self.problems))
