import numpy as np
import pytest
import torch

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(autouse=True)
def _seed_global_rngs():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def acceptance_report():
    """Record one 'criterion N: PASS/FAIL ...' line; printed at the end of the run."""
    def record(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"criterion {number} [{title}]: {'PASS' if passed else 'FAIL'} -- {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
