from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from lpvinterval.cli import bundled
from lpvinterval.scenario_io import load_scenario

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when not in ("setup", "call"):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed or (rep.when == "call" and rep.passed) or rep.skipped:
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        if status == "FAIL" and not detail:
            detail = str(rep.longrepr).strip().splitlines()[-1][:200]
        _ACCEPTANCE[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[number]
        line = f"criterion {number:2d} {status}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))


@pytest.fixture
def detail(request):
    """Attach a one-line measurement to the acceptance summary (and print it for -s runs)."""

    def record(text: str) -> None:
        request.node.user_properties.append(("detail", text))
        print(text)

    return record


@pytest.fixture(scope="session")
def scalar_problem():
    return load_scenario(bundled("scalar_demo.json"))


@pytest.fixture(scope="session")
def two_vehicle():
    return load_scenario(bundled("two_vehicle.json"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def data_dir() -> Path:
    return bundled("scalar_demo.json").parent
