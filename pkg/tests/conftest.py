"""Shared fixtures, the hierarchy registry and the acceptance summary."""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from treeclust import dbscan as _dbscan

settings.register_profile(
    "treeclust",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("treeclust")

CALIBRATION = json.loads((Path(__file__).parent / "calibration.json").read_text())

# Every hierarchy constructed anywhere in the suite is checked for nesting
# as it is built; the acceptance test for nesting reads the tally at the end.
NESTING = {"checked": 0, "violations": 0, "algorithms": {}}
_original_init = _dbscan.ClusterHierarchy.__init__


def _recording_init(self, *args, **kwargs):
    _original_init(self, *args, **kwargs)
    NESTING["checked"] += 1
    NESTING["violations"] += self.nesting_violations()
    NESTING["algorithms"][self.algorithm] = NESTING["algorithms"].get(self.algorithm, 0) + 1


_dbscan.ClusterHierarchy.__init__ = _recording_init

ACCEPTANCE_LINES: list[str] = []


def pytest_collection_modifyitems(session, config, items):
    # the nesting criterion summarises all other tests, so it runs last
    last = [it for it in items if it.name == "test_criterion_02_nesting"]
    rest = [it for it in items if it.name != "test_criterion_02_nesting"]
    items[:] = rest + last


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def calibration() -> dict:
    return CALIBRATION
