from __future__ import annotations

import numpy as np
import pytest

from lobsim.gridfn import GridFunction


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_grid(rng, spacing=0.25, n=12, lo=-5):
    return GridFunction(spacing, lo, rng.normal(size=n))


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def report(ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} {request.node.name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, detail

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
