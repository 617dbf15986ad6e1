import shutil
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import FIXTURE_SPECS  # noqa: E402

from smug.fixtures import FixtureSpec, build_fixture  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def all_fixtures():
    return [build_fixture(FixtureSpec(kind, seed)) for kind, seed in FIXTURE_SPECS]


@pytest.fixture(scope="session")
def z3_path():
    path = shutil.which("z3")
    if path is None:
        pytest.skip("z3 not installed")
    return path

# Filled by the acceptance suite, one PASS/FAIL line per criterion.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
