import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))
torch.set_num_threads(1)

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Print and remember one pass/fail line per acceptance criterion."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
