"""Shared test scaffolding.

The whole suite runs with outbound networking disabled: a session-wide
guard replaces the socket primitives so any attempted connection fails
loudly instead of reaching the network. Tests build every image they need
from seeded noise or from fixture files they write themselves.
"""

from __future__ import annotations

import socket

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


class NetworkBlocked(RuntimeError):
    """Raised by the session guard when a test touches the network."""


def _deny(*_args, **_kwargs):
    raise NetworkBlocked("test suite attempted network access")


@pytest.fixture(autouse=True, scope="session")
def no_network():
    """Disable networking for the entire run."""
    mp = pytest.MonkeyPatch()
    mp.setattr(socket.socket, "connect", _deny)
    mp.setattr(socket.socket, "connect_ex", _deny)
    mp.setattr(socket, "create_connection", _deny)
    mp.setattr(socket, "getaddrinfo", _deny)
    yield
    mp.undo()


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(number, description): marks a test as one acceptance criterion",
    )
    config.addinivalue_line("markers", "slow: long-running test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """Emit one visible pass/fail line per acceptance criterion."""
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call":
        return
    verdict = "PASS" if report.passed else "FAIL"
    line = f"acceptance criterion {mark.args[0]}: {verdict} - {mark.args[1]}"
    reporter = item.config.pluginmanager.getplugin("terminalreporter")
    if reporter is not None:
        reporter.write_line(line)
