from pathlib import Path

import pytest

from cardsim.model import parse_raw_results, parse_study_config

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def study10():
    return parse_study_config((FIXTURES / "study10.json").read_text(encoding="utf-8"))


@pytest.fixture
def real10(study10):
    return parse_raw_results((FIXTURES / "real10.csv").read_text(encoding="utf-8"), study10)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
