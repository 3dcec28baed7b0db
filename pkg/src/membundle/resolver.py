"""Meta-path style module resolution over in-memory archives.

A :class:`FinderChain` holds an ordered list of finder objects. Each finder
answers ``find(fullname)`` with a loader (itself, by convention) or ``None``;
the first non-empty answer wins. Loaders materialize modules: script-like
payloads go through a pluggable executor, native payloads go through a
pluggable native loader.

Module lookup inside an archive is driven by the suffix search-order table:
one candidate archive path per rule, tried strictly in rule order.
"""

from __future__ import annotations

import dataclasses
import enum
import os
from typing import Callable, Iterable, Optional, Protocol

from .archive import ArchiveImage, read_entry
from .errors import (
    ExecutionError,
    InvalidName,
    ModuleNotFound,
    PositionOutOfRange,
)


class ModuleKind(enum.Enum):
    PACKAGE = "package"
    BYTECODE_MODULE = "bytecode_module"
    SOURCE_MODULE = "source_module"
    NATIVE_EXTENSION = "native_extension"


@dataclasses.dataclass(frozen=True)
class SearchOrderRule:
    """One suffix rule: candidate = dotted name with separators + suffix."""

    suffix: str
    is_bytecode: bool
    is_package: bool
    is_native: bool

    def __post_init__(self):
        if self.is_bytecode and self.is_native:
            raise ValueError("a rule cannot be both bytecode and native")
        if self.is_package and self.is_native:
            raise ValueError("package rules are never native")

    @property
    def kind(self) -> ModuleKind:
        if self.is_package:
            return ModuleKind.PACKAGE
        if self.is_native:
            return ModuleKind.NATIVE_EXTENSION
        if self.is_bytecode:
            return ModuleKind.BYTECODE_MODULE
        return ModuleKind.SOURCE_MODULE

    def as_tuple(self) -> tuple[str, bool, bool, bool]:
        return (self.suffix, self.is_bytecode, self.is_package, self.is_native)


DEFAULT_NATIVE_SUFFIX = ".pyd"


def default_search_order(path_sep: str = "/",
                         native_suffix: str = DEFAULT_NATIVE_SUFFIX,
                         ) -> tuple[SearchOrderRule, ...]:
    """The default rule table: package init (bytecode then source), module
    bytecode, module source, then the native extension suffix."""
    return (
        SearchOrderRule(path_sep + "__init__.pyc", True, True, False),
        SearchOrderRule(path_sep + "__init__.py", False, True, False),
        SearchOrderRule(".pyc", True, False, False),
        SearchOrderRule(".py", False, False, False),
        SearchOrderRule(native_suffix, False, False, True),
    )


@dataclasses.dataclass(frozen=True)
class ModuleCode:
    fullname: str
    kind: ModuleKind
    origin_path: str
    payload: bytes


@dataclasses.dataclass
class ModuleRecord:
    """A loaded module: an executed namespace or a native image handle."""

    fullname: str
    kind: ModuleKind
    loader_id: str
    namespace: Optional[dict] = None
    native_handle: Optional[object] = None

    def __post_init__(self):
        native = self.kind is ModuleKind.NATIVE_EXTENSION
        if native and (self.native_handle is None or self.namespace is not None):
            raise ValueError("native records carry a native_handle and no namespace")
        if not native and (self.namespace is None or self.native_handle is not None):
            raise ValueError("script records carry a namespace and no native_handle")


def candidate_paths(fullname: str,
                    rules: Iterable[SearchOrderRule] | None = None,
                    path_sep: str = "/") -> list[tuple[str, SearchOrderRule]]:
    """One candidate archive path per rule, in rule order."""
    if rules is None:
        rules = default_search_order(path_sep)
    components = fullname.split(".") if fullname else [""]
    if not fullname or any(not c for c in components):
        raise InvalidName(f"malformed dotted name {fullname!r}")
    for c in components:
        if any(sep in c for sep in (path_sep, "/", "\\")):
            raise InvalidName(f"path separator inside name component {c!r}")
    base = path_sep.join(components)
    return [(base + rule.suffix, rule) for rule in rules]


def get_module_info(archive: ArchiveImage, fullname: str,
                    rules: Iterable[SearchOrderRule] | None = None,
                    path_sep: str = "/") -> Optional[ModuleKind]:
    """Kind of the first search-order candidate present, or None."""
    for path, rule in candidate_paths(fullname, rules, path_sep):
        if path in archive.directory:
            return rule.kind
    return None


def get_module_code(archive: ArchiveImage, fullname: str,
                    rules: Iterable[SearchOrderRule] | None = None,
                    path_sep: str = "/") -> ModuleCode:
    """Payload and kind of the first search-order candidate present."""
    for path, rule in candidate_paths(fullname, rules, path_sep):
        if path in archive.directory:
            return ModuleCode(
                fullname=fullname,
                kind=rule.kind,
                origin_path=path,
                payload=read_entry(archive, path),
            )
    raise ModuleNotFound(f"no entry for module {fullname!r} in archive")


class Finder(Protocol):
    name: str

    def find(self, fullname: str) -> Optional["Loader"]: ...


class Loader(Protocol):
    name: str

    def load(self, fullname: str, ctx: "LoadContext") -> ModuleRecord: ...


class FinderChain:
    """Ordered finders plus the module cache shared by all of them."""

    def __init__(self, finders: Iterable[Finder] | None = None):
        self.finders: list[Finder] = list(finders or [])
        self.module_cache: dict[str, ModuleRecord] = {}
        self._loading: list[str] = []


@dataclasses.dataclass
class LoadContext:
    """Everything a loader or executor needs to finish a load, including
    recursion back into the chain for nested imports."""

    chain: FinderChain
    executor: Callable[[ModuleCode, "LoadContext"], dict]
    native_loader: Callable[[str, bytes], object]
    on_import: Optional[Callable[[str, str], None]] = None
    on_fail: Optional[Callable[[str, BaseException], None]] = None

    def import_module(self, fullname: str) -> ModuleRecord:
        return load_module(self.chain, fullname, self.executor,
                           self.native_loader,
                           on_import=self.on_import, on_fail=self.on_fail)


def install_finder(chain: FinderChain, finder: Finder, position: int) -> FinderChain:
    """Insert ``finder`` at ``position``, preserving the order of the rest."""
    if not 0 <= position <= len(chain.finders):
        raise PositionOutOfRange(
            f"position {position} outside chain of {len(chain.finders)} finders")
    chain.finders.insert(position, finder)
    return chain


def find_loader(chain: FinderChain, fullname: str
                ) -> Optional[tuple[Loader, int]]:
    """First finder's answer, with the index of the finder that answered."""
    for index, finder in enumerate(chain.finders):
        loader = finder.find(fullname)
        if loader is not None:
            return loader, index
    return None


def load_module(chain: FinderChain, fullname: str,
                executor: Callable[[ModuleCode, LoadContext], dict],
                native_loader: Callable[[str, bytes], object],
                on_import: Optional[Callable[[str, str], None]] = None,
                on_fail: Optional[Callable[[str, BaseException], None]] = None,
                ) -> ModuleRecord:
    """Resolve and load ``fullname`` through the chain.

    Parent packages load first; repeated loads return the cached record
    without invoking the executor or native loader again. Import cycles
    raise ExecutionError naming the cycle.
    """
    cached = chain.module_cache.get(fullname)
    if cached is not None:
        return cached

    ctx = LoadContext(chain, executor, native_loader, on_import, on_fail)
    try:
        if fullname in chain._loading:
            cycle = " -> ".join(chain._loading + [fullname])
            raise ExecutionError(f"circular import: {cycle}")

        parent = fullname.rpartition(".")[0]
        if parent and parent not in chain.module_cache:
            ctx.import_module(parent)

        answer = find_loader(chain, fullname)
        if answer is None:
            raise ModuleNotFound(f"no finder provides {fullname!r}")
        loader, _index = answer

        chain._loading.append(fullname)
        try:
            record = loader.load(fullname, ctx)
        finally:
            chain._loading.pop()
    except BaseException as exc:
        if on_fail:
            on_fail(fullname, exc)
        raise

    chain.module_cache[fullname] = record
    if on_import:
        on_import(fullname, loader.name)
    return record


class ArchiveFinder:
    """Finder/loader over one in-memory archive (it answers with itself)."""

    def __init__(self, archive: ArchiveImage,
                 rules: Iterable[SearchOrderRule] | None = None,
                 path_sep: str = "/", name: str = "archive"):
        self.archive = archive
        self.path_sep = path_sep
        self.rules = tuple(rules) if rules is not None else default_search_order(path_sep)
        self.name = name

    def find(self, fullname: str) -> Optional["ArchiveFinder"]:
        if get_module_info(self.archive, fullname, self.rules, self.path_sep) is None:
            return None
        return self

    def load(self, fullname: str, ctx: LoadContext) -> ModuleRecord:
        code = get_module_code(self.archive, fullname, self.rules, self.path_sep)
        if code.kind is ModuleKind.NATIVE_EXTENSION:
            handle = ctx.native_loader(fullname, code.payload)
            return ModuleRecord(fullname, code.kind, self.name, native_handle=handle)
        namespace = ctx.executor(code, ctx)
        return ModuleRecord(fullname, code.kind, self.name, namespace=namespace)

    def __repr__(self):
        return f"<ArchiveFinder {self.name} ({len(self.archive.directory)} entries)>"


class BuiltinFinder:
    """Modules provided by the host process itself, ahead of everything."""

    def __init__(self, name: str = "builtin"):
        self.name = name
        self._registry: dict[str, ModuleRecord] = {}

    def register(self, record: ModuleRecord) -> None:
        self._registry[record.fullname] = record

    def find(self, fullname: str) -> Optional["BuiltinFinder"]:
        return self if fullname in self._registry else None

    def load(self, fullname: str, ctx: LoadContext) -> ModuleRecord:
        return self._registry[fullname]


class ExternalPathFinder:
    """Disk-directory fallback, mirroring the stock path-based importer.

    Present only for parity in non-isolated runtimes; isolated runtimes never
    install it.
    """

    def __init__(self, roots: Iterable[str],
                 rules: Iterable[SearchOrderRule] | None = None,
                 name: str = "external"):
        self.roots = [str(r) for r in roots]
        self.rules = tuple(rules) if rules is not None else default_search_order("/")
        self.name = name

    def _locate(self, fullname: str) -> Optional[tuple[str, SearchOrderRule]]:
        for root in self.roots:
            for rel, rule in candidate_paths(fullname, self.rules, "/"):
                path = os.path.join(root, *rel.split("/"))
                if os.path.isfile(path):
                    return path, rule
        return None

    def find(self, fullname: str) -> Optional["ExternalPathFinder"]:
        return self if self._locate(fullname) is not None else None

    def load(self, fullname: str, ctx: LoadContext) -> ModuleRecord:
        located = self._locate(fullname)
        if located is None:
            raise ModuleNotFound(f"{fullname!r} vanished from the external roots")
        path, rule = located
        with open(path, "rb") as fh:
            payload = fh.read()
        if rule.kind is ModuleKind.NATIVE_EXTENSION:
            handle = ctx.native_loader(fullname, payload)
            return ModuleRecord(fullname, rule.kind, self.name, native_handle=handle)
        code = ModuleCode(fullname, rule.kind, path, payload)
        namespace = ctx.executor(code, ctx)
        return ModuleRecord(fullname, rule.kind, self.name, namespace=namespace)
