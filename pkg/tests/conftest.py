import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance = {}


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def roof_scene():
    """Default five-level roof sampled to about 59k ground-truth points."""
    from roofmetrics.synth import default_scene, generate_scene

    return generate_scene(default_scene(seed=1, density=220))


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m is not None:
            item.user_properties.append(("acceptance", tuple(m.args)))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "acceptance" not in props:
        return
    number, title = props["acceptance"]
    # a failure in setup, call or teardown fails the criterion
    if report.when == "call" or report.outcome != "passed":
        prev = _acceptance.get(number)
        if prev is None or prev[1] == "passed":
            _acceptance[number] = (title, report.outcome, report.duration if report.when == "call" else 0.0)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, outcome, duration = _acceptance[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {title} ({duration:.2f} s)")
