"""Load native shared objects directly from memory buffers.

Three backends:

``memory_mapper``
    A from-scratch loader: maps the object's segments with anonymous pages,
    applies relative and symbol-import relocations, binds imports through a
    :class:`SymbolResolver`, runs initializers, and indexes the exports.
    Never consults the system loader for the object itself.

``descriptor_shim``
    Writes the bytes to a memory-backed descriptor and lets the system's own
    runtime loader map it via the descriptor's process-local alias, so no
    pathname for the object ever exists in the filesystem namespace.

``os_loader_oracle``
    The operating system's documented disk loader, kept only as an
    equivalence oracle for tests.

Dependency requests for an already-loaded image (the core-library case) are
redirected through an :class:`AliasTable` so that no disk or system-loader
lookup happens for aliased names. Every alias hit and system query is
recorded on the resolver, which tests use to assert the no-disk properties.
"""

from __future__ import annotations

import ctypes
import itertools
import mmap as _mmap_mod
import os
import platform
import struct
import threading

from . import elf
from .errors import (
    AlreadyRegistered,
    ImageUnloaded,
    InitializerFailure,
    MalformedImage,
    MapFailure,
    OsLoaderFailure,
    SymbolNotFound,
    UnresolvedImport,
)

BACKEND_MEMORY = "memory_mapper"
BACKEND_DESCRIPTOR = "descriptor_shim"
BACKEND_ORACLE = "os_loader_oracle"

_PAGE = _mmap_mod.PAGESIZE

_PROT_READ = 1
_PROT_WRITE = 2
_PROT_EXEC = 4
_MAP_PRIVATE = 0x02
_MAP_ANONYMOUS = 0x20
_MAP_FAILED = ctypes.c_void_p(-1).value

_RTLD_NOW = os.RTLD_NOW
_RTLD_LOCAL = os.RTLD_LOCAL
_RTLD_GLOBAL = os.RTLD_GLOBAL
_RTLD_NOLOAD = getattr(os, "RTLD_NOLOAD", 0x04)
_RTLD_LAZY = os.RTLD_LAZY
_RTLD_DI_LINKMAP = 2

_MACHINE_BY_UNAME = {"x86_64": elf.EM_X86_64, "aarch64": elf.EM_AARCH64}

_libc = ctypes.CDLL(None, use_errno=True)
_libc.mmap.restype = ctypes.c_void_p
_libc.mmap.argtypes = [ctypes.c_void_p, ctypes.c_size_t, ctypes.c_int,
                       ctypes.c_int, ctypes.c_int, ctypes.c_long]
_libc.mprotect.restype = ctypes.c_int
_libc.mprotect.argtypes = [ctypes.c_void_p, ctypes.c_size_t, ctypes.c_int]
_libc.munmap.restype = ctypes.c_int
_libc.munmap.argtypes = [ctypes.c_void_p, ctypes.c_size_t]
_libc.dlopen.restype = ctypes.c_void_p
_libc.dlopen.argtypes = [ctypes.c_char_p, ctypes.c_int]
_libc.dlsym.restype = ctypes.c_void_p
_libc.dlsym.argtypes = [ctypes.c_void_p, ctypes.c_char_p]
_libc.dlclose.restype = ctypes.c_int
_libc.dlclose.argtypes = [ctypes.c_void_p]
_libc.dlerror.restype = ctypes.c_char_p
_libc.dlerror.argtypes = []
try:
    _libc.dlinfo.restype = ctypes.c_int
    _libc.dlinfo.argtypes = [ctypes.c_void_p, ctypes.c_int, ctypes.c_void_p]
    _HAVE_DLINFO = True
except AttributeError:
    _HAVE_DLINFO = False

_loader_lock = threading.Lock()
_handle_ids = itertools.count(1)


def _dlerror() -> str:
    msg = _libc.dlerror()
    return msg.decode("utf-8", "replace") if msg else "unknown dl error"


def _dlopen(path: str | None, flags: int) -> int:
    _libc.dlerror()  # clear any stale error
    handle = _libc.dlopen(path.encode() if path is not None else None, flags)
    return handle or 0


def _dlsym(handle: int | None, name: str) -> int:
    return _libc.dlsym(handle, name.encode()) or 0


def _linkmap_base(handle: int) -> int:
    """Load address recorded in the loader's link map for ``handle``."""
    if not _HAVE_DLINFO:
        return 0
    lm = ctypes.c_void_p(0)
    if _libc.dlinfo(handle, _RTLD_DI_LINKMAP, ctypes.byref(lm)) != 0 or not lm.value:
        return 0
    return ctypes.cast(lm.value, ctypes.POINTER(ctypes.c_size_t))[0]


def _page_floor(x: int) -> int:
    return x & ~(_PAGE - 1)


def _page_ceil(x: int) -> int:
    return (x + _PAGE - 1) & ~(_PAGE - 1)


def host_machine() -> int:
    try:
        return _MACHINE_BY_UNAME[platform.machine()]
    except KeyError:
        raise MalformedImage(f"no relocation support for host {platform.machine()!r}")


def default_backend() -> str:
    """descriptor_shim where the platform offers memory-backed descriptors."""
    return BACKEND_DESCRIPTOR if hasattr(os, "memfd_create") else BACKEND_MEMORY


class LoadedImage:
    """A native object mapped into this process, with its export table."""

    def __init__(self, backend: str, base_address: int, exports: dict[str, int],
                 soname: str | None = None, needed: tuple[str, ...] = ()):
        self.handle_id = f"img-{next(_handle_ids)}"
        self.backend = backend
        self.base_address = base_address
        self.exports = exports
        self.soname = soname
        self.needed = needed
        self.initialized = False
        self.imports: dict[str, int] = {}   # undefined symbol -> bound address
        self.address_ranges: list[tuple[int, int]] = []
        self._unloaded = False
        # backend internals
        self._span = 0
        self._fini_addr = 0
        self._fini_array = (0, 0)           # (address, count)
        self._os_handle = 0
        self._fd = -1

    def _ensure_usable(self):
        if self._unloaded:
            raise ImageUnloaded(f"{self.handle_id} has been unloaded")
        if not self.initialized:
            raise ImageUnloaded(f"{self.handle_id} is not initialized")

    def contains_address(self, address: int) -> bool:
        return any(start <= address < end for start, end in self.address_ranges)

    def __repr__(self):
        state = "unloaded" if self._unloaded else "live"
        return (f"<LoadedImage {self.handle_id} backend={self.backend}"
                f" base=0x{self.base_address:x} {state}>")


class AliasTable:
    """Dependency-name redirection map, plus the core-library handle."""

    def __init__(self):
        self.aliases: dict[str, LoadedImage] = {}
        self.core_handle: LoadedImage | None = None


def register_alias(table: AliasTable, name: str, image: LoadedImage) -> AliasTable:
    """Redirect future dependency requests for ``name`` to ``image``."""
    if name in table.aliases:
        raise AlreadyRegistered(f"alias {name!r} is already registered")
    image._ensure_usable()
    table.aliases[name] = image
    return table


def register_core_alias(table: AliasTable, canonical_name: str,
                        image: LoadedImage) -> AliasTable:
    """Register the core library's image and remember it as the core handle."""
    register_alias(table, canonical_name, image)
    table.core_handle = image
    return table


class SymbolResolver:
    """Ordered symbol/dependency providers: alias table, then the system
    loader, then failure. Every query is recorded for inspection."""

    def __init__(self, aliases: AliasTable | None = None):
        self.aliases = aliases if aliases is not None else AliasTable()
        self.events: list[tuple[str, str]] = []

    def _record(self, channel: str, name: str):
        self.events.append((channel, name))

    def system_queries(self, name: str) -> int:
        return sum(1 for channel, n in self.events
                   if channel.startswith("system") and n == name)

    def dependency_alias(self, name: str) -> LoadedImage | None:
        return self.aliases.aliases.get(name)

    def check_dependency(self, name: str) -> str:
        """Classify one DT_NEEDED name: ``"alias"`` or ``"system"``.

        The system check asks the loader only for objects already present in
        the process (no disk search). Raises UnresolvedImport otherwise.
        """
        alias = self.aliases.aliases.get(name)
        if alias is not None:
            if alias._unloaded:
                raise UnresolvedImport(name, "aliased image has been unloaded")
            self._record("alias-dep", name)
            return "alias"
        self._record("system-dep", name)
        handle = _dlopen(name, _RTLD_LAZY | _RTLD_NOLOAD)
        if handle:
            _libc.dlclose(handle)
            return "system"
        raise UnresolvedImport(name, "neither aliased nor already loaded in this process")

    def open_system_dependency(self, name: str) -> int:
        """NOLOAD handle for an already-loaded system object (caller closes)."""
        self._record("system-dep", name)
        return _dlopen(name, _RTLD_LAZY | _RTLD_NOLOAD)

    def resolve_symbol(self, name: str, *, own: dict[str, int] | None = None,
                       weak: bool = False, system_handles: tuple[int, ...] = ()) -> int:
        """Bind one imported symbol. Order: aliases, the image's own exports,
        the system scope. Weak symbols fall back to the null address."""
        for image in self.aliases.aliases.values():
            if image._unloaded:
                continue
            addr = image.exports.get(name)
            if addr:
                self._record("alias-sym", name)
                return addr
        if own:
            addr = own.get(name)
            if addr:
                self._record("self-sym", name)
                return addr
        for handle in system_handles:
            addr = _dlsym(handle, name)
            if addr:
                self._record("system-sym", name)
                return addr
        addr = _dlsym(None, name)   # process global scope
        if addr:
            self._record("system-sym", name)
            return addr
        if weak:
            self._record("weak-zero", name)
            return 0
        raise UnresolvedImport(name, "symbol not provided by aliases or the system scope")

    def lookup_by_base(self, base_address: int, symbol: str) -> int:
        """Foreign-function lookup by image base. When the base names the
        registered core image, answer from its in-memory export index instead
        of asking the system loader."""
        core = self.aliases.core_handle
        if core is not None and not core._unloaded \
                and base_address == core.base_address:
            self._record("alias-sym", symbol)
            addr = core.exports.get(symbol)
            if not addr:
                raise SymbolNotFound(f"core image does not export {symbol!r}")
            return addr
        self._record("system-sym", symbol)
        addr = _dlsym(None, symbol)
        if not addr:
            raise SymbolNotFound(f"no loaded image exports {symbol!r}")
        return addr


def _exported_names(so: elf.SharedObject):
    for sym in so.symbols:
        if sym.defined and sym.name and sym.bind in (elf.STB_GLOBAL, elf.STB_WEAK):
            yield sym


def _load_memory_mapper(blob: bytes, resolver: SymbolResolver) -> LoadedImage:
    so = elf.parse_shared_object(blob)
    if so.machine != host_machine():
        raise MalformedImage("object was built for a different machine")

    system_handles = []
    try:
        for dep in so.needed:
            if resolver.check_dependency(dep) == "system":
                handle = _dlopen(dep, _RTLD_LAZY | _RTLD_NOLOAD)
                if handle:
                    system_handles.append(handle)

        # Per-segment protection needs page-disjoint segments; anything else
        # is outside the supported subset.
        pages = sorted((_page_floor(s.vaddr), _page_ceil(s.vaddr + s.memsz))
                       for s in so.segments)
        for (_, prev_end), (next_start, _) in zip(pages, pages[1:]):
            if next_start < prev_end:
                raise MalformedImage("load segments share pages")

        min_v = pages[0][0]
        span = pages[-1][1] - min_v
        base = _libc.mmap(None, span, _PROT_READ | _PROT_WRITE,
                          _MAP_PRIVATE | _MAP_ANONYMOUS, -1, 0)
        if base in (None, 0, _MAP_FAILED):
            raise MapFailure(f"anonymous mapping of {span} bytes failed")
        bias = base - min_v

        image = LoadedImage(BACKEND_MEMORY, base, {}, soname=so.soname, needed=so.needed)
        image._span = span
        try:
            for seg in so.segments:
                if seg.filesz:
                    ctypes.memmove(bias + seg.vaddr,
                                   blob[seg.offset:seg.offset + seg.filesz],
                                   seg.filesz)
                image.address_ranges.append(
                    (_page_floor(bias + seg.vaddr), _page_ceil(bias + seg.vaddr + seg.memsz)))

            own_exports = {sym.name: bias + sym.value for sym in _exported_names(so)}

            def in_span(vaddr: int, size: int = 8) -> bool:
                return min_v <= vaddr and vaddr + size <= min_v + span

            rt = so.reloc_types
            for rel in so.relocations:
                if not in_span(rel.offset):
                    raise MalformedImage(
                        f"relocation target {rel.offset:#x} outside the image")
                where = bias + rel.offset
                if rel.type == rt["relative"] or \
                        (rel.symbol_index == 0 and
                         (rel.type in rt["slots"] or rel.type == rt["direct"])):
                    value = bias + rel.addend
                elif rel.type in rt["slots"] or rel.type == rt["direct"]:
                    sym = so.symbols[rel.symbol_index]
                    value = resolver.resolve_symbol(
                        sym.name, own=own_exports, weak=sym.bind == elf.STB_WEAK,
                        system_handles=tuple(system_handles))
                    if not sym.defined:
                        image.imports[sym.name] = value
                    if rel.type == rt["direct"]:
                        value += rel.addend
                else:
                    raise MalformedImage(f"relocation type {rel.type} is outside the supported subset")
                ctypes.memmove(where, struct.pack("<Q", value & 0xFFFFFFFFFFFFFFFF), 8)

            for seg in so.segments:
                prot = ((_PROT_READ if seg.flags & elf.PF_R else 0)
                        | (_PROT_WRITE if seg.flags & elf.PF_W else 0)
                        | (_PROT_EXEC if seg.flags & elf.PF_X else 0))
                start = _page_floor(bias + seg.vaddr)
                length = _page_ceil(bias + seg.vaddr + seg.memsz) - start
                if _libc.mprotect(start, length, prot) != 0:
                    raise MapFailure(f"mprotect({prot:#x}) failed")

            init = so.dyn_first(elf.DT_INIT, 0)
            init_arr = so.dyn_first(elf.DT_INIT_ARRAY, 0)
            init_arr_sz = so.dyn_first(elf.DT_INIT_ARRAYSZ, 0)
            fini = so.dyn_first(elf.DT_FINI, 0)
            fini_arr = so.dyn_first(elf.DT_FINI_ARRAY, 0)
            fini_arr_sz = so.dyn_first(elf.DT_FINI_ARRAYSZ, 0)
            for vaddr, size in ((init, 1), (init_arr, init_arr_sz),
                                (fini, 1), (fini_arr, fini_arr_sz)):
                if vaddr and not in_span(vaddr, size):
                    raise MalformedImage("initializer table outside the image")

            image.exports = own_exports
            _run_initializers(bias, init, init_arr, init_arr_sz)
            if fini:
                image._fini_addr = bias + fini
            if fini_arr:
                image._fini_array = (bias + fini_arr, fini_arr_sz // 8)
            image.initialized = True
            return image
        except Exception:
            _libc.munmap(base, span)
            raise
    finally:
        for handle in system_handles:
            _libc.dlclose(handle)


def _run_initializers(bias: int, init: int, init_array: int, init_array_size: int):
    try:
        if init:
            ctypes.CFUNCTYPE(None)(bias + init)()
        if init_array:
            funcs = (ctypes.c_uint64 * (init_array_size // 8)).from_address(bias + init_array)
            for addr in funcs:
                if addr not in (0, 0xFFFFFFFFFFFFFFFF):
                    ctypes.CFUNCTYPE(None)(addr)()
    except Exception as exc:
        raise InitializerFailure(f"initializer raised: {exc}") from exc


def _run_finalizers(image: LoadedImage):
    addr, count = image._fini_array
    if addr:
        funcs = (ctypes.c_uint64 * count).from_address(addr)
        for fn in reversed(list(funcs)):
            if fn not in (0, 0xFFFFFFFFFFFFFFFF):
                ctypes.CFUNCTYPE(None)(fn)()
    if image._fini_addr:
        ctypes.CFUNCTYPE(None)(image._fini_addr)()


def _load_descriptor(blob: bytes, resolver: SymbolResolver) -> LoadedImage:
    so = elf.parse_shared_object(blob)
    if so.machine != host_machine():
        raise MalformedImage("object was built for a different machine")

    for dep in so.needed:
        if resolver.check_dependency(dep) == "alias":
            alias = resolver.dependency_alias(dep)
            if alias is not None and alias.backend == BACKEND_MEMORY:
                raise UnresolvedImport(
                    dep, "aliased image is invisible to the system loader;"
                         " load the alias with the descriptor backend")

    fd = os.memfd_create(f"membundle-{next(_handle_ids)}")
    try:
        os.write(fd, blob)
        handle = _dlopen(f"/proc/self/fd/{fd}", _RTLD_NOW | _RTLD_LOCAL)
        if not handle:
            raise MapFailure(f"system loader rejected the descriptor image: {_dlerror()}")
    except Exception:
        os.close(fd)
        raise

    image = LoadedImage(BACKEND_DESCRIPTOR, _linkmap_base(handle), {},
                        soname=so.soname, needed=so.needed)
    image._os_handle = handle
    image._fd = fd
    for sym in _exported_names(so):
        addr = _dlsym(handle, sym.name)
        if addr:
            image.exports[sym.name] = addr
    image.initialized = True
    return image


def load_from_memory(image_bytes: bytes, resolver: SymbolResolver | None = None,
                     backend: str | None = None) -> LoadedImage:
    """Map a shared object held in ``image_bytes`` into this process.

    ``backend`` selects the strategy (default: the platform's preferred one).
    Raises MalformedImage, UnresolvedImport, MapFailure, or
    InitializerFailure; on failure nothing stays mapped.
    """
    if resolver is None:
        resolver = SymbolResolver()
    backend = backend or default_backend()
    with _loader_lock:
        if backend == BACKEND_MEMORY:
            return _load_memory_mapper(bytes(image_bytes), resolver)
        if backend == BACKEND_DESCRIPTOR:
            return _load_descriptor(bytes(image_bytes), resolver)
        raise ValueError(f"unknown backend {backend!r}")


def os_load_oracle(path: str, global_symbols: bool = False) -> LoadedImage:
    """Load from disk via the operating system's documented loader.

    Test-only comparison oracle; the only loader here that takes a pathname.
    """
    flags = _RTLD_NOW | (_RTLD_GLOBAL if global_symbols else _RTLD_LOCAL)
    handle = _dlopen(path, flags)
    if not handle:
        raise OsLoaderFailure(f"{path}: {_dlerror()}")
    soname = None
    exports: dict[str, int] = {}
    needed: tuple[str, ...] = ()
    try:
        with open(path, "rb") as fh:
            so = elf.parse_shared_object(fh.read())
        soname, needed = so.soname, so.needed
        for sym in _exported_names(so):
            addr = _dlsym(handle, sym.name)
            if addr:
                exports[sym.name] = addr
    except (OSError, MalformedImage):
        pass
    image = LoadedImage(BACKEND_ORACLE, _linkmap_base(handle), exports,
                        soname=soname, needed=needed)
    image._os_handle = handle
    image.initialized = True
    return image


def get_symbol(image: LoadedImage, name: str) -> int:
    """Machine address of an exported symbol, callable through ctypes."""
    image._ensure_usable()
    addr = image.exports.get(name)
    if addr:
        return addr
    if image._os_handle:
        addr = _dlsym(image._os_handle, name)
        if addr:
            image.exports[name] = addr
            return addr
    raise SymbolNotFound(f"{image.handle_id} does not export {name!r}")


def invoke_export(image: LoadedImage, name: str, restype=ctypes.c_int):
    """Call a no-argument export and return its value."""
    return ctypes.CFUNCTYPE(restype)(get_symbol(image, name))()


def unload(image: LoadedImage) -> None:
    """Release the image. Terminal: every later operation raises ImageUnloaded."""
    with _loader_lock:
        if image._unloaded:
            raise ImageUnloaded(f"{image.handle_id} was already unloaded")
        if image.backend == BACKEND_MEMORY:
            _run_finalizers(image)
            if _libc.munmap(image.base_address, image._span) != 0:
                raise MapFailure("munmap failed")
        else:
            if image._os_handle:
                _libc.dlclose(image._os_handle)
            if image._fd >= 0:
                os.close(image._fd)
        image._unloaded = True
