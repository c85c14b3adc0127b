from __future__ import annotations

import socket
from pathlib import Path

import pytest

from ragmark.adapters import QueryEndpointSpec, RestAdapterConfig, UploadEndpointSpec
from ragmark.config import DocumentSpec, FrameworkTarget, OutputConfig, QuerySpec, TestSuiteConfig

REPO_ROOT = Path(__file__).resolve().parent.parent
DEMO_DIR = REPO_ROOT / "demo"


def unused_port() -> int:
    """A port that was just free; nothing listens on it afterwards."""
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def mock_rest_config(base_url: str, contexts_pointer: str | None = "/contexts") -> RestAdapterConfig:
    """Adapter config matching the in-repo mock service's HTTP protocol."""
    return RestAdapterConfig(
        base_url=base_url,
        upload=UploadEndpointSpec(path="/upload"),
        query=QueryEndpointSpec(
            path="/query",
            body_template='{"question": "{message}"}',
            answer_pointer="/answer",
            contexts_pointer=contexts_pointer,
        ),
    )


def make_suite(
    frameworks: tuple[FrameworkTarget, ...],
    documents: tuple[DocumentSpec, ...],
    queries: tuple[QuerySpec, ...],
    out_dir: Path,
    **overrides,
) -> TestSuiteConfig:
    return TestSuiteConfig(
        frameworks=frameworks,
        documents=documents,
        queries=queries,
        output=OutputConfig(directory=out_dir, formats=("csv", "json")),
        **overrides,
    )


@pytest.fixture
def corpus(tmp_path: Path) -> dict[str, Path]:
    """Two small documents with disjoint content words per sentence."""
    cities = tmp_path / "cities.txt"
    cities.write_text("Paris is the capital of France. Berlin is the capital of Germany.", encoding="utf-8")
    space = tmp_path / "space.txt"
    space.write_text("The Moon orbits the Earth. Jupiter is the largest planet.", encoding="utf-8")
    return {"cities": cities, "space": space}
