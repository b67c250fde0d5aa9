import contextlib
from pathlib import Path

import numpy as np
import pytest

from platoon_dos.topology import CommTopology

CONFIGS = Path(__file__).resolve().parents[1] / "src" / "platoon_dos" / "configs"

_RESULTS: dict[int, tuple[str, str, str]] = {}


def random_rooted(rng: np.random.Generator, n: int, leader: int = 0, extra: float = 0.3,
                  weighted: bool = False) -> CommTopology:
    """Random digraph with a spanning tree rooted at ``leader`` (leader row empty)."""
    order = [leader] + [int(v) for v in rng.permutation([i for i in range(n) if i != leader])]
    a = np.zeros((n, n))
    for k in range(1, n):
        parent = order[int(rng.integers(0, k))]
        a[order[k], parent] = 1.0
    for i in range(n):
        for j in range(n):
            if i != j and i != leader and rng.random() < extra:
                a[i, j] = 1.0
    if weighted:
        a = a * rng.uniform(0.5, 2.0, size=a.shape)
    return CommTopology(a, leader)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion():
    """Record one acceptance criterion as PASS/FAIL and print it."""

    @contextlib.contextmanager
    def record(number: int, title: str):
        detail = {"text": ""}
        try:
            yield detail
        except BaseException:
            _RESULTS[number] = ("FAIL", title, detail["text"])
            print(f"[criterion {number:2d}] FAIL  {title}  {detail['text']}")
            raise
        _RESULTS[number] = ("PASS", title, detail["text"])
        print(f"[criterion {number:2d}] PASS  {title}  {detail['text']}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, title, text = _RESULTS[number]
        terminalreporter.write_line(f"{number:2d}. {status}  {title}  {text}".rstrip())
