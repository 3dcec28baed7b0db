"""Operator commands: bundle, run, resolve, demo.

Every command is a thin mapping over the library layer. Bundles are read
from disk once as a transport convenience, after which the file handle is
dropped and all loading happens on the in-memory buffer.

Exit codes: 0 success, 1 generic failure, 2 audit violation,
3 module not found, 4 execution or native-load failure.
"""

from __future__ import annotations

import argparse
import sys

from . import bundler
from .errors import (
    AuditViolation,
    ExecutionError,
    MembundleError,
    ModuleNotFound,
    NativeLoadError,
)
from .runtime import Runtime, RuntimeConfig

DEMO_MODULE = "demo"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_AUDIT = 2
EXIT_NOT_FOUND = 3
EXIT_EXECUTION = 4


def _read_bundle(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _bootstrap(blob: bytes, verbose: bool = False, native_suffix: str = ".pyd",
               backend: str = "auto") -> Runtime:
    config = RuntimeConfig(isolated=True, verbose=verbose,
                           embedded_archives=(blob,),
                           native_suffix=native_suffix,
                           native_backend=backend)
    return Runtime(config).bootstrap()


def cmd_bundle(args) -> int:
    allowlist = (bundler.load_allowlist(args.allowlist) if args.allowlist
                 else bundler.default_allowlist())
    try:
        manifest = bundler.classify_tree(args.root)
        bundler.audit_manifest(manifest, allowlist, args.core)
        bundler.write_bundle(manifest, out=args.out_zip,
                             fail_on_violation=args.fail_on_violation)
    except AuditViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    if args.array_src:
        source = bundler.emit_embedded_array(_read_bundle(args.out_zip),
                                             args.array_symbol)
        with open(args.array_src, "w", encoding="utf-8") as fh:
            fh.write(source)
    sys.stdout.write(bundler.serialize_manifest(manifest))
    return EXIT_OK


def cmd_run(args) -> int:
    rt = _bootstrap(_read_bundle(args.bundle), verbose=args.verbose,
                    native_suffix=args.native_suffix)
    try:
        rt.import_module(args.module)
    except ModuleNotFound:
        return EXIT_NOT_FOUND
    except (ExecutionError, NativeLoadError):
        return EXIT_EXECUTION
    finally:
        rt.shutdown()
    return EXIT_OK


def cmd_resolve(args) -> int:
    rt = _bootstrap(_read_bundle(args.bundle))
    hit = False
    for finder in rt.chain.finders:
        if finder.find(args.fullname) is not None:
            print(f"{finder.name}: hit")
            hit = True
            break
        print(f"{finder.name}: miss")
    return EXIT_OK if hit else EXIT_NOT_FOUND


def cmd_demo(args) -> int:
    rt = _bootstrap(_read_bundle(args.bundle), backend=args.backend)
    try:
        rt.import_module(DEMO_MODULE)
    except ModuleNotFound:
        return EXIT_NOT_FOUND
    except (ExecutionError, NativeLoadError):
        return EXIT_EXECUTION
    finally:
        rt.shutdown()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="membundle",
        description="Package module trees into in-memory-loadable bundles and run them.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bundle", help="classify, audit, and write a bundle")
    p.add_argument("root", help="module tree to bundle")
    p.add_argument("out_zip", help="output archive path")
    p.add_argument("--array-src", help="also emit an embeddable C array source file")
    p.add_argument("--array-symbol", default="bundle", help="array symbol name")
    p.add_argument("--fail-on-violation", action="store_true",
                   help="abort on forbidden native dependencies")
    p.add_argument("--allowlist", help="allowlist file (default: platform defaults)")
    p.add_argument("--core", help="core library name treated as aliased")
    p.set_defaults(func=cmd_bundle)

    p = sub.add_parser("run", help="import a module from a bundle in memory")
    p.add_argument("bundle")
    p.add_argument("module")
    p.add_argument("--verbose", action="store_true",
                   help="trace each import attempt on stderr")
    p.add_argument("--native-suffix", default=".pyd")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("resolve", help="show which finder answers for a name")
    p.add_argument("bundle")
    p.add_argument("fullname")
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("demo", help="import the demo module and call its native greeting")
    p.add_argument("bundle")
    p.add_argument("--backend", default="auto",
                   choices=["auto", "memory_mapper", "descriptor_shim"])
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MembundleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
