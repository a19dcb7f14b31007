from __future__ import annotations

import pytest

from insulopt.fem import assemble
from insulopt.mesh import disk, interval, two_disks

# criterion id -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def disk3_ops():
    return assemble(disk(1.0, 3))


@pytest.fixture(scope="session")
def disk4_ops():
    return assemble(disk(1.0, 4))


@pytest.fixture(scope="session")
def interval_ops():
    return assemble(interval(-1.0, 1.0, 100))


@pytest.fixture(scope="session")
def two_disk_ops():
    return assemble(two_disks(0.5, 1.0, 3.0, 3))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
