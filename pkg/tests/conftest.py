from __future__ import annotations

import shutil

import pytest

from helpers import FIXTURES, FREEBSD_CPE
from vulnposture.model import ComponentType, Control, Link, Rule, Upsert, mutate
from vulnposture.persistence import load_model

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's outcome for the terminal summary."""
    label = request.node.get_closest_marker("criterion").args[0]
    detail: list[str] = []
    yield detail
    failed = request.node.stash.get(_failed_key, True)
    _ACCEPTANCE.append((label, not failed, "; ".join(detail)))


_failed_key = pytest.StashKey[bool]()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        item.stash[_failed_key] = report.failed


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(_ACCEPTANCE):
        suffix = f"  ({detail})" if detail else ""
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}{suffix}")


@pytest.fixture
def scenario_a():
    return load_model(FIXTURES / "scenario_a.posture.json")


@pytest.fixture
def scenario_a_mitigated():
    return load_model(FIXTURES / "scenario_a_mitigated.posture.json")


@pytest.fixture
def nvd_fixtures(tmp_path):
    target = tmp_path / "nvd"
    shutil.copytree(FIXTURES / "nvd", target)
    return target


def freebsd_type_model(model):
    """Scenario A (mitigated) plus the FreeBSD 14 CPE component type."""
    return mutate(model, Upsert(ComponentType(FREEBSD_CPE, "FreeBSD 14.0")))


def with_rule4(model):
    model = mutate(model, Upsert(Control("capability_based_addressing_hardware", "capability based addressing hardware")))
    model = mutate(
        model,
        Upsert(Rule("rule4", "rule4", {"CWE-119"}, {FREEBSD_CPE}, {"capability_based_addressing_hardware"})),
    )
    return mutate(model, Link("control", "OperatingSystem", "capability_based_addressing_hardware"))
