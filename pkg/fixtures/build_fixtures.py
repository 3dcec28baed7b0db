#!/usr/bin/env python3
"""Build and verify the native test fixtures.

Compiles every fixture as a position-independent shared object, then checks
each contract two ways before writing the manifest:

- dependency lists against the reference binary-inspection tool (readelf),
- export behavior by loading through the operating system's own loader and
  calling every zero-argument export.

Manifest format, one record per line:

    <fixture>\t<symbol>:<expected-int>
    <fixture>\tdeps:<comma-separated-names-or-->

Exit status: 0 built and verified, 1 verification failed, 2 toolchain missing.
"""

from __future__ import annotations

import argparse
import ctypes
import dataclasses
import re
import shutil
import subprocess
import sys
import time
from pathlib import Path

HERE = Path(__file__).resolve().parent
DEFAULT_OUT = HERE / "build"

LIBC = "libc.so.6"


@dataclasses.dataclass(frozen=True)
class FixtureContract:
    name: str
    exports: dict[str, int]          # zero-argument int exports only
    deps: tuple[str, ...]            # expected DT_NEEDED records, exactly
    soname: str | None = None
    link_against: tuple[str, ...] = ()   # other fixtures linked in


CONTRACTS = (
    FixtureContract("core_stub", {"core_fn": 99}, (), soname="core_stub"),
    FixtureContract("libextra", {"extra_fn": 5}, (), soname="libextra"),
    FixtureContract("ext_basic", {"answer": 42, "hello": 18, "marker_value": 1234},
                    (LIBC,)),
    FixtureContract("ext_needs_core", {"uses_core": 106}, ("core_stub",),
                    link_against=("core_stub",)),
    FixtureContract("ext_bad_dep", {"bad_answer": 13}, ("libextra",),
                    link_against=("libextra",)),
    FixtureContract("ext_counter", {"init_count": 1}, (LIBC,)),
)


def find_compiler() -> str:
    for cc in ("cc", "gcc", "clang"):
        path = shutil.which(cc)
        if path:
            return path
    print("error: no C toolchain (tried cc, gcc, clang)", file=sys.stderr)
    sys.exit(2)


def compile_fixture(cc: str, contract: FixtureContract, out_dir: Path) -> Path:
    target = out_dir / f"{contract.name}.so"
    cmd = [cc, "-shared", "-fPIC", "-O2", "-Wall", "-Wl,--as-needed",
           "-o", str(target), str(HERE / "src" / f"{contract.name}.c")]
    if contract.soname:
        cmd.append(f"-Wl,-soname,{contract.soname}")
    cmd += [str(out_dir / f"{dep}.so") for dep in contract.link_against]
    subprocess.run(cmd, check=True)
    return target


def readelf_needed(path: Path) -> list[str]:
    """DT_NEEDED names per the reference binary-inspection tool."""
    out = subprocess.run(["readelf", "-d", str(path)], check=True,
                         capture_output=True, text=True).stdout
    return re.findall(r"\(NEEDED\)\s+Shared library: \[([^\]]+)\]", out)


def verify(contract: FixtureContract, path: Path, out_dir: Path,
           preloaded: dict[str, ctypes.CDLL]) -> list[str]:
    problems = []

    recorded = readelf_needed(path)
    if sorted(recorded) != sorted(contract.deps):
        problems.append(
            f"{contract.name}: dependency list {recorded} != declared {list(contract.deps)}")

    for dep in contract.link_against:
        if dep not in preloaded:
            preloaded[dep] = ctypes.CDLL(str(out_dir / f"{dep}.so"),
                                         mode=ctypes.RTLD_GLOBAL)
    lib = ctypes.CDLL(str(path))
    for symbol, expected in contract.exports.items():
        got = getattr(lib, symbol)()
        if got != expected:
            problems.append(f"{contract.name}: {symbol}() == {got}, expected {expected}")
    return problems


def build(out_dir: Path, skip_verify: bool = False) -> list[FixtureContract]:
    started = time.monotonic()
    out_dir.mkdir(parents=True, exist_ok=True)
    cc = find_compiler()

    paths = {}
    for contract in CONTRACTS:
        paths[contract.name] = compile_fixture(cc, contract, out_dir)

    if not skip_verify:
        problems = []
        preloaded: dict[str, ctypes.CDLL] = {}
        for contract in CONTRACTS:
            problems += verify(contract, paths[contract.name], out_dir, preloaded)
        if problems:
            for problem in problems:
                print(f"FAIL {problem}", file=sys.stderr)
            sys.exit(1)

    lines = []
    for contract in CONTRACTS:
        for symbol, expected in contract.exports.items():
            lines.append(f"{contract.name}\t{symbol}:{expected}")
        lines.append(f"{contract.name}\tdeps:{','.join(contract.deps) or '-'}")
    (out_dir / "manifest.tsv").write_text("\n".join(lines) + "\n")

    elapsed = time.monotonic() - started
    print(f"built and verified {len(CONTRACTS)} fixtures in {elapsed:.2f}s -> {out_dir}")
    return list(CONTRACTS)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
    parser.add_argument("--skip-verify", action="store_true")
    args = parser.parse_args(argv)
    build(args.out, skip_verify=args.skip_verify)
    return 0


if __name__ == "__main__":
    sys.exit(main())
