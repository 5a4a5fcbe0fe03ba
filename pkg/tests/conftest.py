import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from socialrag.corpus import Post
from socialrag.index import build_index
from socialrag.llm import MockBackend, MockScript
from socialrag.synthetic import synthetic_posts


@pytest.fixture(scope="session")
def synthetic_index():
    return build_index(synthetic_posts(500, seed=7))


@pytest.fixture
def default_mock():
    from importlib import resources

    data = json.loads((resources.files("socialrag") / "data" / "mock_script.json").read_text())
    return MockBackend(MockScript.from_dict(data))


def make_post(id, body, title="", created_utc=0, deleted=False):
    return Post(id=id, title=title, body=body, created_utc=created_utc, deleted=deleted)


_acceptance: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and (report.when == "call" or report.outcome == "failed"):
        name = report.nodeid.split("::")[-1]
        _acceptance[name] = ("PASS" if report.passed else "FAIL", report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, (outcome, _) in sorted(_acceptance.items()):
        terminalreporter.write_line(f"{outcome}  {name}")
