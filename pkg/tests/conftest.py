"""Shared fixtures: one generated fixture set and one timed migration,
both session-scoped so the acceptance criteria all inspect the same run."""

import json
import time
from types import SimpleNamespace

import pytest

from relmig import runner
from relmig.config import load_config
from relmig.fixtures import gen_fixture

SEED = 7
STUDENTS_PER_SOURCE = 1000


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture")
    gen_fixture(out, seed=SEED, students_per_source=STUDENTS_PER_SOURCE)
    return out


@pytest.fixture(scope="session")
def manifest(fixture_dir):
    return json.loads((fixture_dir / "manifest.json").read_text())


@pytest.fixture(scope="session")
def migrated(fixture_dir):
    """The fixture migrated once; tests must leave the target unchanged."""
    config = load_config(fixture_dir / "config.json")
    started = time.perf_counter()
    outcome = runner.run(config)
    duration = time.perf_counter() - started
    return SimpleNamespace(
        dir=fixture_dir,
        config=config,
        outcome=outcome,
        duration=duration,
        target=fixture_dir / "target.db",
    )


_acceptance_lines: list[str] = []


@pytest.fixture()
def announce():
    """Record one acceptance verdict line, replayed after the test run."""

    def _announce(number: int, detail: str) -> None:
        line = f"PASS criterion {number}: {detail}"
        print(line)
        _acceptance_lines.append(line)

    return _announce


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.line(line)
