from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the stub_http helper

from stub_http import StubHttpServer

REPO_ROOT = Path(__file__).resolve().parent.parent
SAMPLE_50 = REPO_ROOT / "sample_data" / "metadata_50.csv"
SAMPLE_5 = REPO_ROOT / "sample_data" / "metadata_5.csv"


@pytest.fixture
def stub_server():
    servers: list[StubHttpServer] = []

    def _start(**kwargs) -> StubHttpServer:
        server = StubHttpServer(**kwargs).start()
        servers.append(server)
        return server

    yield _start
    for server in servers:
        server.stop()


def write_csv(path: Path, rows: list[tuple[str, str, str]]) -> Path:
    lines = ["id,genre,description"]
    for source_id, genre, desc in rows:
        lines.append(f"{source_id},{genre},{desc}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
