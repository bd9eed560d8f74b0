"""Fixtures: live reward service and stub servers on loopback ports."""

import pytest

pytest.importorskip("rubricrl_client")
pytest.importorskip("rubricrl")
pytest.importorskip("uvicorn")

from stubkit import ServerThread, build_service_app, make_stub_app  # noqa: E402
from stubkit import AUTH_ENV, AUTH_TOKEN  # noqa: E402,F401


@pytest.fixture(scope="session")
def live_service(tmp_path_factory):
    """(base_url, criteria_table, gold_answers) for a real service over HTTP."""
    import os

    os.environ[AUTH_ENV] = AUTH_TOKEN
    app, criteria, gold = build_service_app(tmp_path_factory.mktemp("sdk-live"))
    server = ServerThread(app)
    base_url = server.start()
    yield base_url, criteria, gold
    server.stop()


@pytest.fixture(scope="module")
def stub_server():
    """Factory: start(app) -> (base_url, app); all servers stopped at teardown."""
    servers = []

    def start(app):
        server = ServerThread(app)
        servers.append(server)
        return server.start(), app

    yield start
    for server in servers:
        server.stop()
