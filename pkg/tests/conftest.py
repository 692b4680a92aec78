"""Shared fixtures: one golden four-stage build per test session."""

from __future__ import annotations

import io
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from denjoy.cli import RunConfig, cmd_build, load_run

ACCEPTANCE_RESULTS: dict = {}
"""Criterion number -> (passed, detail), filled by ``test_acceptance.py``."""


@dataclass
class BuiltRun:
    path: Path
    config: RunConfig
    stages: list
    exit_code: int
    elapsed: float
    output: str


def build_run(path: Path, **overrides) -> BuiltRun:
    config = RunConfig(out=str(path), **overrides)
    buf = io.StringIO()
    t0 = time.perf_counter()
    code = cmd_build(config, out=buf, resolution=256)
    elapsed = time.perf_counter() - t0
    _, stages = load_run(path)
    return BuiltRun(path, config, stages, code, elapsed, buf.getvalue())


@pytest.fixture(scope="session")
def golden_run(tmp_path_factory) -> BuiltRun:
    """``build --rho golden --stages 4`` through the CLI command."""
    return build_run(tmp_path_factory.mktemp("golden"), rho="golden", stages=4)


@pytest.fixture(scope="session")
def small_run(tmp_path_factory) -> BuiltRun:
    """A quick one-stage golden build for CLI and verifier unit tests."""
    return build_run(tmp_path_factory.mktemp("small"), rho="golden", stages=1)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
