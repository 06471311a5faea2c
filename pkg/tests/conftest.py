"""Shared fixtures. Every test runs with outbound sockets disabled."""

from __future__ import annotations

import shutil
import socket
from importlib import resources
from pathlib import Path

import pytest

DEMO = Path(str(resources.files("threatprio").joinpath("data/demo")))
DEMO_CONFIG = DEMO / "config.yaml"


class NetworkBlocked(RuntimeError):
    pass


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    def refuse(*args, **kwargs):
        raise NetworkBlocked("tests must not open network connections")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)
    monkeypatch.setattr(socket, "getaddrinfo", refuse)


@pytest.fixture
def demo_copy(tmp_path) -> Path:
    """A writable copy of the demo directory (config, incidents, knowledge, fixtures)."""
    target = tmp_path / "demo"
    shutil.copytree(DEMO, target, ignore=shutil.ignore_patterns("out"))
    return target


# -- acceptance summary ---------------------------------------------------------------

_ACCEPTANCE: dict[int, list[str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = dict(report.user_properties).get("criterion")
    if marker is None:
        return
    _ACCEPTANCE.setdefault(marker, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    from test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        outcomes = _ACCEPTANCE.get(n)
        if outcomes is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"{status}  criterion {n}: {CRITERIA[n]}")
