"""Embedding lifecycle: isolated configuration, bootstrap ordering, imports,
the execution gate, and shutdown.

Bootstrap installs finders in a fixed order: the builtin finder, the frozen
finder, one archive finder per embedded archive at the configured position,
and finally the external path finder, which isolated mode disables outright
so that no resolution decision can ever touch the environment, the working
directory, or the disk.
"""

from __future__ import annotations

import dataclasses
import os
import sys
import threading
from typing import Optional

from . import directives, nativeload
from .archive import ArchiveImage, open_archive
from .errors import ArchiveError, BootstrapFailure, GateMisuse, PhaseViolation
from .frozen import FrozenFinder, FrozenTable, freeze, seal
from .nativeload import AliasTable, SymbolResolver
from .resolver import (
    ArchiveFinder,
    BuiltinFinder,
    ExternalPathFinder,
    FinderChain,
    ModuleKind,
    ModuleRecord,
    default_search_order,
    install_finder,
    load_module,
)

ENV_PATH_VAR = "MEMBUNDLE_PATH"

# The bootstrap importer itself ships frozen, so bringing up the import
# machinery never requires an archive or disk lookup.
BOOT_MODULE_NAME = "bootimport"
BOOT_MODULE_SOURCE = "set importer_ready True\n"

PHASE_CREATED = "created"
PHASE_BOOTSTRAPPED = "bootstrapped"
PHASE_SHUT_DOWN = "shut_down"


@dataclasses.dataclass
class RuntimeConfig:
    isolated: bool = True
    verbose: bool = False
    embedded_archives: tuple[bytes, ...] = ()
    finder_position: int = 2
    native_suffix: str = ".pyd"
    native_backend: str = "auto"
    path_sep: str = "/"


@dataclasses.dataclass(frozen=True)
class GateToken:
    thread_id: int
    depth: int


class ExecutionGate:
    """Reentrant mutual exclusion for module execution, acquirable from any
    thread, including threads created inside native extensions."""

    def __init__(self):
        self._lock = threading.Lock()
        self._owner: Optional[int] = None
        self._depth = 0

    def acquire(self) -> GateToken:
        me = threading.get_ident()
        if self._owner == me:
            self._depth += 1
            return GateToken(me, self._depth)
        self._lock.acquire()
        self._owner = me
        self._depth = 1
        return GateToken(me, 1)

    def release(self, token: GateToken) -> None:
        me = threading.get_ident()
        if not isinstance(token, GateToken) or token.thread_id != me:
            raise GateMisuse("token does not belong to the releasing thread")
        if self._owner != me:
            raise GateMisuse("release without a matching acquire")
        if token.depth != self._depth:
            raise GateMisuse(
                f"unbalanced release: token depth {token.depth}, gate depth {self._depth}")
        self._depth -= 1
        if self._depth == 0:
            self._owner = None
            self._lock.release()


class Runtime:
    """One bootstrapped import world over a set of embedded archives."""

    def __init__(self, config: RuntimeConfig,
                 frozen_table: Optional[FrozenTable] = None,
                 executor=directives.execute_module):
        self.config = config
        self.frozen_table = frozen_table if frozen_table is not None else FrozenTable()
        self.executor = executor
        self.chain = FinderChain()
        self.builtin_finder = BuiltinFinder()
        self.archives: list[ArchiveImage] = []
        self.aliases = AliasTable()
        self.resolver = SymbolResolver(self.aliases)
        self.gate = ExecutionGate()
        self.phase = PHASE_CREATED
        self.stage_trace: list[str] = []
        self.trace: list[str] = []
        self.native_images: list[nativeload.LoadedImage] = []
        self._rules = default_search_order(config.path_sep, config.native_suffix)
        self._backend = (nativeload.default_backend()
                         if config.native_backend == "auto" else config.native_backend)

    # -- bootstrap --------------------------------------------------------

    def bootstrap(self) -> "Runtime":
        if self.phase != PHASE_CREATED:
            raise BootstrapFailure("already bootstrapped")

        stage = "builtin"
        try:
            install_finder(self.chain, self.builtin_finder, 0)
            self.stage_trace.append(stage)

            stage = "frozen"
            if BOOT_MODULE_NAME not in self.frozen_table.entries:
                freeze(self.frozen_table, BOOT_MODULE_NAME,
                       BOOT_MODULE_SOURCE.encode(), ModuleKind.SOURCE_MODULE)
            seal(self.frozen_table)
            install_finder(self.chain, FrozenFinder(self.frozen_table), 1)
            self.stage_trace.append(stage)

            for index, blob in enumerate(self.config.embedded_archives):
                stage = f"archive:{index}"
                image = open_archive(blob)
                self.archives.append(image)
                finder = ArchiveFinder(image, self._rules,
                                       self.config.path_sep, name=stage)
                position = min(self.config.finder_position + index,
                               len(self.chain.finders))
                install_finder(self.chain, finder, position)
                self.stage_trace.append(stage)

            stage = "external"
            if self.config.isolated:
                self.stage_trace.append("external-disabled")
            else:
                roots = [os.getcwd()]
                roots += [p for p in os.environ.get(ENV_PATH_VAR, "").split(os.pathsep) if p]
                install_finder(self.chain,
                               ExternalPathFinder(roots, self._rules),
                               len(self.chain.finders))
                self.stage_trace.append(stage)
        except ArchiveError:
            raise
        except BootstrapFailure:
            raise
        except Exception as exc:
            raise BootstrapFailure(stage, str(exc)) from exc

        self.phase = PHASE_BOOTSTRAPPED
        return self

    # -- imports ----------------------------------------------------------

    def _trace_ok(self, fullname: str, finder_name: str) -> None:
        line = f"IMPORT {fullname} via {finder_name}"
        self.trace.append(line)
        if self.config.verbose:
            print(line, file=sys.stderr)

    def _trace_fail(self, fullname: str, error: BaseException) -> None:
        line = f"IMPORT {fullname} FAILED {type(error).__name__}"
        self.trace.append(line)
        if self.config.verbose:
            print(line, file=sys.stderr)

    def _native_loader(self, fullname: str, payload: bytes) -> nativeload.LoadedImage:
        image = nativeload.load_from_memory(payload, self.resolver, self._backend)
        self.native_images.append(image)
        return image

    def import_module(self, fullname: str) -> ModuleRecord:
        if self.phase != PHASE_BOOTSTRAPPED:
            raise PhaseViolation(f"import in phase {self.phase!r}")
        token = self.gate.acquire()
        try:
            return load_module(self.chain, fullname, self.executor,
                               self._native_loader,
                               on_import=self._trace_ok, on_fail=self._trace_fail)
        finally:
            self.gate.release(token)

    # -- gate and shutdown --------------------------------------------------

    def acquire_gate(self) -> GateToken:
        return self.gate.acquire()

    def release_gate(self, token: GateToken) -> None:
        self.gate.release(token)

    def shutdown(self) -> None:
        if self.phase == PHASE_SHUT_DOWN:
            return
        for image in reversed(self.native_images):
            try:
                nativeload.unload(image)
            except nativeload.ImageUnloaded:
                pass
        self.native_images.clear()
        self.chain.module_cache.clear()
        self.phase = PHASE_SHUT_DOWN


def bootstrap(config: RuntimeConfig,
              frozen_table: Optional[FrozenTable] = None,
              executor=directives.execute_module) -> Runtime:
    """Create a runtime and run the staged bootstrap."""
    return Runtime(config, frozen_table, executor).bootstrap()


def import_module(rt: Runtime, fullname: str) -> ModuleRecord:
    return rt.import_module(fullname)


def acquire_gate(rt: Runtime) -> GateToken:
    return rt.acquire_gate()


def release_gate(rt: Runtime, token: GateToken) -> None:
    rt.release_gate(token)


def shutdown(rt: Runtime) -> None:
    rt.shutdown()
