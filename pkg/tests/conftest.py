import pytest

from lsts.envs_grid import data_path, make_env
from lsts.graph import compile_spec
from lsts.spec_lang import parse_spec

DOORKEY_SPEC = "((achieve k1 or achieve k2) ; achieve d ; achieve g) ensuring !l"


@pytest.fixture(scope="session")
def fig1b():
    return compile_spec(parse_spec(DOORKEY_SPEC))


@pytest.fixture(scope="session")
def doorkey_spec():
    return parse_spec(data_path("doorkey.spec").read_text())


@pytest.fixture(scope="session")
def doorkey():
    return make_env("doorkey")


@pytest.fixture(scope="session")
def rescue():
    return make_env("search_rescue")


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict = {}


def report(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
