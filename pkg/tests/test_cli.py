"""CLI command behavior and exit codes."""

import pytest

from membundle import cli
from membundle.bundler import parse_manifest_entries, write_archive


def plant(root, files):
    for rel, data in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)


@pytest.fixture
def lib_bundle(tmp_path):
    path = tmp_path / "lib.zip"
    path.write_bytes(write_archive([
        ("codecs.py", b"set codec 1\n"),
        ("greeter.py", b'set greeting "hi"\n'),
        ("pkg/__init__.py", b"set ready True\n"),
        ("pkg/mod.py", b"set v 7\n"),
        ("broken.py", b"frobnicate!\n"),
        ("badext.pyd", b"not an object"),
    ]))
    return str(path)


@pytest.fixture
def demo_bundle(tmp_path, fixture_bins):
    path = tmp_path / "demo.zip"
    path.write_bytes(write_archive([
        ("demo.py", b"call_native ext.hello\n"),
        ("ext.pyd", fixture_bins.read("ext_basic")),
    ]))
    return str(path)


def test_module_entry_point(lib_bundle):
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "membundle", "run",
                           lib_bundle, "greeter"])
    assert proc.returncode == 0


class TestBundleCommand:
    def test_bundle_success(self, tmp_path, capsys):
        tree = tmp_path / "tree"
        plant(tree, {"pkg/__init__.py": b"set ok True\n", "pkg/m.py": b"set v 1\n"})
        out_zip = tmp_path / "out.zip"
        rc = cli.main(["bundle", str(tree), str(out_zip)])
        assert rc == 0
        assert out_zip.exists()
        rows = parse_manifest_entries(capsys.readouterr().out)
        assert [(k, a) for k, a, _ in rows] == [
            ("package", "pkg/__init__.py"), ("source_module", "pkg/m.py")]

    def test_bundle_violation_exit_2(self, tmp_path, fixture_bins):
        tree = tmp_path / "tree"
        plant(tree, {"bad.pyd": fixture_bins.read("ext_bad_dep")})
        rc = cli.main(["bundle", str(tree), str(tmp_path / "o.zip"),
                       "--fail-on-violation"])
        assert rc == 2

    def test_bundle_missing_root_exit_1(self, tmp_path):
        rc = cli.main(["bundle", str(tmp_path / "nope"), str(tmp_path / "o.zip")])
        assert rc == 1

    def test_bundle_emits_array_source(self, tmp_path, capsys):
        tree = tmp_path / "tree"
        plant(tree, {"m.py": b"set v 1\n"})
        out_zip, out_c = tmp_path / "o.zip", tmp_path / "o.c"
        rc = cli.main(["bundle", str(tree), str(out_zip),
                       "--array-src", str(out_c), "--array-symbol", "lib_bundle"])
        assert rc == 0
        text = out_c.read_text()
        assert "unsigned char lib_bundle[] = {" in text
        assert f"lib_bundle_len = {out_zip.stat().st_size};" in text


class TestRunCommand:
    def test_run_success(self, lib_bundle):
        assert cli.main(["run", lib_bundle, "greeter"]) == 0

    def test_run_missing_module_exit_3(self, lib_bundle):
        assert cli.main(["run", lib_bundle, "ghost"]) == 3

    def test_run_executor_failure_exit_4(self, lib_bundle):
        assert cli.main(["run", lib_bundle, "broken"]) == 4

    def test_run_native_failure_exit_4(self, lib_bundle):
        assert cli.main(["run", lib_bundle, "badext"]) == 4

    def test_run_unreadable_bundle_exit_1(self, tmp_path):
        assert cli.main(["run", str(tmp_path / "absent.zip"), "m"]) == 1

    def test_run_verbose_traces_parent_first(self, lib_bundle, capsys):
        assert cli.main(["run", lib_bundle, "pkg.mod", "--verbose"]) == 0
        err = capsys.readouterr().err
        assert err.index("IMPORT pkg via") < err.index("IMPORT pkg.mod via")

    def test_run_posix_native_suffix(self, tmp_path, fixture_bins):
        path = tmp_path / "posix.zip"
        path.write_bytes(write_archive([
            ("nat.so", fixture_bins.read("ext_basic")),
            ("caller.py", b"call_native nat.answer\n"),
        ]))
        assert cli.main(["run", str(path), "caller"]) == 3  # .pyd default
        assert cli.main(["run", str(path), "caller", "--native-suffix", ".so"]) == 0


class TestResolveCommand:
    def test_archive_hit_after_builtin_and_frozen_miss(self, lib_bundle, capsys):
        assert cli.main(["resolve", lib_bundle, "codecs"]) == 0
        assert capsys.readouterr().out.splitlines() == [
            "builtin: miss", "frozen: miss", "archive:0: hit"]

    def test_frozen_hit_stops_before_archive(self, lib_bundle, capsys):
        assert cli.main(["resolve", lib_bundle, "bootimport"]) == 0
        assert capsys.readouterr().out.splitlines() == [
            "builtin: miss", "frozen: hit"]

    def test_unresolvable_exit_3(self, lib_bundle, capsys):
        assert cli.main(["resolve", lib_bundle, "ghost"]) == 3
        assert capsys.readouterr().out.splitlines() == [
            "builtin: miss", "frozen: miss", "archive:0: miss"]


class TestDemoCommand:
    def test_demo_prints_greeting(self, demo_bundle, capfd):
        assert cli.main(["demo", demo_bundle]) == 0
        assert "hello from native" in capfd.readouterr().out

    def test_demo_without_extension_exit_3(self, tmp_path, capfd):
        path = tmp_path / "noext.zip"
        path.write_bytes(write_archive([("demo.py", b"call_native ext.hello\n")]))
        assert cli.main(["demo", str(path)]) == 3

    def test_demo_backend_equivalence(self, demo_bundle, capfd):
        outputs = []
        for backend in ("memory_mapper", "descriptor_shim"):
            assert cli.main(["demo", demo_bundle, "--backend", backend]) == 0
            outputs.append(capfd.readouterr().out)
        assert outputs[0] == outputs[1]
        assert "hello from native" in outputs[0]
