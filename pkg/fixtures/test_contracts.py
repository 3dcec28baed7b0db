"""Secondary-component check: the fixture suite builds from scratch and its
contracts hold, verified by the build harness against readelf and the OS
loader, within the time budget."""

import re
import subprocess
import sys
import time
from pathlib import Path

HERE = Path(__file__).resolve().parent
HARNESS = HERE / "build_fixtures.py"

EXPECTED_OBJECTS = {"core_stub", "libextra", "ext_basic", "ext_needs_core",
                    "ext_bad_dep", "ext_counter"}


def test_build_verifies_contracts_within_budget(tmp_path):
    started = time.monotonic()
    proc = subprocess.run(
        [sys.executable, str(HARNESS), "--out", str(tmp_path)],
        capture_output=True, text=True)
    elapsed = time.monotonic() - started

    assert proc.returncode == 0, proc.stderr
    assert elapsed < 60.0
    assert "verified" in proc.stdout

    for name in EXPECTED_OBJECTS:
        assert (tmp_path / f"{name}.so").exists(), name

    manifest = (tmp_path / "manifest.tsv").read_text()
    assert "ext_basic\tanswer:42" in manifest
    assert "ext_needs_core\tuses_core:106" in manifest
    assert "ext_needs_core\tdeps:core_stub" in manifest
    assert "ext_bad_dep\tdeps:libextra" in manifest


def test_objects_are_position_independent(tmp_path):
    subprocess.run([sys.executable, str(HARNESS), "--out", str(tmp_path),
                    "--skip-verify"], check=True)
    for name in EXPECTED_OBJECTS:
        header = subprocess.run(["readelf", "-h", str(tmp_path / f"{name}.so")],
                                capture_output=True, text=True, check=True).stdout
        assert re.search(r"Type:\s+DYN", header), name


def test_dependency_records_exact(tmp_path):
    subprocess.run([sys.executable, str(HARNESS), "--out", str(tmp_path),
                    "--skip-verify"], check=True)
    out = subprocess.run(["readelf", "-d", str(tmp_path / "ext_needs_core.so")],
                         capture_output=True, text=True, check=True).stdout
    needed = re.findall(r"\(NEEDED\)\s+Shared library: \[([^\]]+)\]", out)
    assert needed == ["core_stub"]
