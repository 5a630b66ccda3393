import socket
from pathlib import Path

import httpx
import pytest

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


def fixture_text(*parts: str) -> str:
    return FIXTURES.joinpath(*parts).read_text(encoding="utf-8")


class FailingTransport(httpx.BaseTransport):
    """Any use of this transport is a test failure."""

    def __init__(self):
        self.calls = 0

    def handle_request(self, request):
        self.calls += 1
        raise AssertionError(f"unexpected network request to {request.url}")


@pytest.fixture
def failing_transport():
    return FailingTransport()


@pytest.fixture
def no_network(monkeypatch):
    """Make any socket connection attempt blow up."""
    attempts = []

    def refuse(self, *args, **kwargs):
        attempts.append(args)
        raise AssertionError(f"network connection attempted: {args}")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)
    return attempts


@pytest.fixture
def todo_api():
    from resttsl.openapi_model import parse_openapi

    return parse_openapi(fixture_text("openapi", "todo-api.yaml"))


@pytest.fixture
def listing1_text():
    return fixture_text("canned", "listing1.tsl.yaml")


@pytest.fixture
def listing2_text():
    return fixture_text("canned", "listing2.completion.md")


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("tests.test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.summary_lines():
        terminalreporter.write_line(line)
