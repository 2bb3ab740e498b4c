from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def fixture_config() -> Path:
    return ROOT / "configs" / "fixture.toml"


@pytest.fixture
def quadratic_config() -> Path:
    return ROOT / "configs" / "quadratic.toml"


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
