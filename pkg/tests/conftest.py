"""Shared test infrastructure.

Native tests consume prebuilt fixture binaries from fixtures/build/. When
they are missing, the build harness runs once per session; the test run
itself never rebuilds them.
"""

from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import pytest

from membundle import nativeload
from membundle.errors import ImageUnloaded, OsLoaderFailure

REPO_ROOT = Path(__file__).resolve().parents[1]
FIXTURES_DIR = REPO_ROOT / "fixtures"
FIXTURES_BUILD = FIXTURES_DIR / "build"


class FixtureSet:
    """Paths, payloads, and contract records for the prebuilt fixtures."""

    def __init__(self, build_dir: Path):
        self.build_dir = build_dir
        self.exports: dict[str, dict[str, int]] = {}
        self.deps: dict[str, list[str]] = {}
        for line in (build_dir / "manifest.tsv").read_text().splitlines():
            name, record = line.split("\t")
            key, _, value = record.partition(":")
            if key == "deps":
                self.deps[name] = [] if value == "-" else value.split(",")
            else:
                self.exports.setdefault(name, {})[key] = int(value)

    def path(self, name: str) -> Path:
        return self.build_dir / f"{name}.so"

    def read(self, name: str) -> bytes:
        return self.path(name).read_bytes()

    @property
    def names(self) -> list[str]:
        return sorted(self.exports)


@pytest.fixture(scope="session")
def fixture_bins() -> FixtureSet:
    if not (FIXTURES_BUILD / "manifest.tsv").exists():
        subprocess.run(
            [sys.executable, str(FIXTURES_DIR / "build_fixtures.py")],
            check=True, cwd=REPO_ROOT)
    return FixtureSet(FIXTURES_BUILD)


@pytest.fixture
def tracked_loader():
    """load_from_memory wrapper that guarantees unload at test end, so no
    test leaks a live soname into the process link map."""
    images = []

    def load(blob, resolver=None, backend=None):
        image = nativeload.load_from_memory(blob, resolver, backend)
        images.append(image)
        return image

    def load_oracle(path, global_symbols=False):
        image = nativeload.os_load_oracle(str(path), global_symbols)
        images.append(image)
        return image

    load.oracle = load_oracle
    yield load
    for image in reversed(images):
        try:
            nativeload.unload(image)
        except (ImageUnloaded, OsLoaderFailure):
            pass


def region_count() -> int:
    with open("/proc/self/maps") as fh:
        return sum(1 for _ in fh)


def open_fd_count() -> int:
    import os
    return len(os.listdir("/proc/self/fd"))
