import json
from pathlib import Path

import pytest

from stone_erosion import kernels

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())

BACKENDS = list(kernels.available())


@pytest.fixture
def oracle():
    return ORACLES


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
