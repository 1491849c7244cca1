import json
import socket
import threading
import time

import httpx
import pytest
import uvicorn

from lace.service import create_app


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class ServerProcess:
    def __init__(self, config):
        self.app = create_app(config)
        self.port = free_port()
        self.base_url = f"http://127.0.0.1:{self.port}"
        uv_config = uvicorn.Config(self.app, host="127.0.0.1", port=self.port, log_level="error")
        self.server = uvicorn.Server(uv_config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def start(self):
        self.thread.start()
        deadline = time.time() + 10
        while time.time() < deadline:
            try:
                httpx.get(self.base_url + "/sessions/none/log", timeout=0.5)
                return self
            except httpx.TransportError:
                time.sleep(0.05)
        raise RuntimeError("server did not come up in time")

    def stop(self):
        self.server.should_exit = True
        self.thread.join(timeout=5)


@pytest.fixture()
def announce(request):
    """Write a line straight to the terminal reporter, visible even under capture."""
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def _announce(line: str) -> None:
        if reporter is not None:
            reporter.write_line(line)
        else:  # pragma: no cover - plain stdout fallback
            print(line)

    return _announce


@pytest.fixture(scope="session")
def server_factory():
    """Spawn real uvicorn servers on free ports; all torn down at session end."""
    servers = []

    def spawn(config) -> str:
        server = ServerProcess(config).start()
        servers.append(server)
        return server.base_url

    yield spawn
    for server in servers:
        server.stop()


def read_sse_frames(url: str, count: int, timeout: float = 10.0) -> list[dict]:
    """Read ``count`` frames from a server-sent event stream, then disconnect."""
    frames = []
    with httpx.stream("GET", url, timeout=timeout) as resp:
        assert resp.status_code == 200
        current: dict = {}
        for line in resp.iter_lines():
            if line == "":
                if current:
                    frames.append(current)
                    current = {}
                    if len(frames) >= count:
                        break
            elif line.startswith("id: "):
                current["id"] = int(line[4:])
            elif line.startswith("event: "):
                current["event"] = line[7:]
            elif line.startswith("data: "):
                current["data"] = json.loads(line[6:])
    return frames
