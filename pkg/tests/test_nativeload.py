"""Native in-memory loading: both backends, aliasing, and the OS oracle."""

import ctypes
import os

import pytest

from membundle import nativeload as nl
from membundle.errors import (
    AlreadyRegistered,
    ImageUnloaded,
    MalformedImage,
    OsLoaderFailure,
    SymbolNotFound,
    UnresolvedImport,
)

BACKENDS = [nl.BACKEND_MEMORY, nl.BACKEND_DESCRIPTOR]

pytestmark = pytest.mark.usefixtures("fixture_bins")


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


class TestLoadFromMemory:
    def test_exports_indexed(self, fixture_bins, tracked_loader, backend):
        image = tracked_loader(fixture_bins.read("ext_basic"), backend=backend)
        assert {"answer", "hello", "own_global_address"} <= set(image.exports)
        assert image.initialized

    def test_fixture_contract_values(self, fixture_bins, tracked_loader, backend):
        image = tracked_loader(fixture_bins.read("ext_basic"), backend=backend)
        assert nl.invoke_export(image, "answer") == 42
        assert nl.invoke_export(image, "marker_value") == 1234

    def test_random_bytes_rejected(self, backend):
        with pytest.raises(MalformedImage):
            nl.load_from_memory(bytes(range(16)), backend=backend)

    def test_missing_dependency_named(self, fixture_bins, backend):
        with pytest.raises(UnresolvedImport) as err:
            nl.load_from_memory(fixture_bins.read("ext_needs_core"), backend=backend)
        assert err.value.name == "core_stub"

    def test_no_disk_path_for_descriptor_images(self, fixture_bins, tmp_path,
                                                tracked_loader):
        # Source file deleted before the load; the mapping must come from a
        # memory-backed descriptor, not any filesystem pathname.
        staged = tmp_path / "staged_ext.so"
        staged.write_bytes(fixture_bins.read("ext_basic"))
        blob = staged.read_bytes()
        staged.unlink()
        image = tracked_loader(blob, backend=nl.BACKEND_DESCRIPTOR)
        with open("/proc/self/maps") as fh:
            maps = fh.read()
        assert "staged_ext.so" not in maps
        assert "memfd:" in maps
        assert nl.invoke_export(image, "answer") == 42

    def test_relocated_pointer_lands_in_data_mapping(self, fixture_bins,
                                                     tracked_loader):
        image = tracked_loader(fixture_bins.read("ext_basic"),
                               backend=nl.BACKEND_MEMORY)
        own = nl.invoke_export(image, "own_global_address", ctypes.c_void_p)
        relocated = nl.invoke_export(image, "relocated_pointer", ctypes.c_void_p)
        assert own == relocated
        assert image.contains_address(own)

    def test_initializer_ran_exactly_once(self, fixture_bins, tracked_loader, backend):
        image = tracked_loader(fixture_bins.read("ext_counter"), backend=backend)
        assert nl.invoke_export(image, "init_count") == 1


class TestGetSymbol:
    def test_callable_address(self, fixture_bins, tracked_loader, backend):
        image = tracked_loader(fixture_bins.read("ext_basic"), backend=backend)
        addr = nl.get_symbol(image, "answer")
        assert ctypes.CFUNCTYPE(ctypes.c_int)(addr)() == 42

    def test_unknown_symbol(self, fixture_bins, tracked_loader, backend):
        image = tracked_loader(fixture_bins.read("ext_basic"), backend=backend)
        with pytest.raises(SymbolNotFound):
            nl.get_symbol(image, "nonexistent")

    def test_export_addresses_inside_mapped_ranges(self, fixture_bins,
                                                   tracked_loader):
        image = tracked_loader(fixture_bins.read("ext_basic"),
                               backend=nl.BACKEND_MEMORY)
        for name in image.exports:
            assert image.contains_address(image.exports[name]), name


class TestUnload:
    def test_operations_fail_after_unload(self, fixture_bins, backend):
        image = nl.load_from_memory(fixture_bins.read("ext_basic"), backend=backend)
        nl.unload(image)
        with pytest.raises(ImageUnloaded):
            nl.get_symbol(image, "answer")

    def test_double_unload_rejected(self, fixture_bins, backend):
        image = nl.load_from_memory(fixture_bins.read("ext_basic"), backend=backend)
        nl.unload(image)
        with pytest.raises(ImageUnloaded):
            nl.unload(image)

    def test_finalizer_runs_on_unload(self, fixture_bins, backend):
        image = nl.load_from_memory(fixture_bins.read("ext_counter"), backend=backend)
        sink = ctypes.c_int(0)
        hook = ctypes.CFUNCTYPE(None, ctypes.POINTER(ctypes.c_int))(
            nl.get_symbol(image, "set_fini_sink"))
        hook(ctypes.byref(sink))
        nl.unload(image)
        assert sink.value == 1

    def test_descriptor_handle_closed_on_unload(self, fixture_bins):
        import membundle  # noqa: F401 - keep import graph warm before counting
        before = len(os.listdir("/proc/self/fd"))
        image = nl.load_from_memory(fixture_bins.read("ext_basic"),
                                    backend=nl.BACKEND_DESCRIPTOR)
        assert len(os.listdir("/proc/self/fd")) > before
        nl.unload(image)
        assert len(os.listdir("/proc/self/fd")) == before


class TestAliasing:
    def test_alias_satisfies_dependency(self, fixture_bins, tracked_loader, backend):
        resolver = nl.SymbolResolver()
        core = tracked_loader(fixture_bins.read("core_stub"), resolver, backend)
        nl.register_core_alias(resolver.aliases, "core_stub", core)
        dependent = tracked_loader(fixture_bins.read("ext_needs_core"),
                                   resolver, backend)
        assert nl.invoke_export(dependent, "uses_core") == 106
        assert resolver.aliases.core_handle is core

    def test_alias_hits_issue_no_system_queries(self, fixture_bins, tracked_loader,
                                                backend):
        resolver = nl.SymbolResolver()
        core = tracked_loader(fixture_bins.read("core_stub"), resolver, backend)
        nl.register_core_alias(resolver.aliases, "core_stub", core)
        tracked_loader(fixture_bins.read("ext_needs_core"), resolver, backend)
        assert resolver.system_queries("core_stub") == 0
        assert ("alias-dep", "core_stub") in resolver.events

    def test_imports_bind_inside_alias_image(self, fixture_bins, tracked_loader):
        resolver = nl.SymbolResolver()
        core = tracked_loader(fixture_bins.read("core_stub"), resolver,
                              nl.BACKEND_MEMORY)
        nl.register_core_alias(resolver.aliases, "core_stub", core)
        dependent = tracked_loader(fixture_bins.read("ext_needs_core"), resolver,
                                   nl.BACKEND_MEMORY)
        for symbol in ("core_fn", "core_value"):
            assert core.contains_address(dependent.imports[symbol]), symbol

    def test_unloaded_alias_no_longer_satisfies_dependencies(self, fixture_bins,
                                                             backend):
        resolver = nl.SymbolResolver()
        core = nl.load_from_memory(fixture_bins.read("core_stub"), resolver, backend)
        nl.register_core_alias(resolver.aliases, "core_stub", core)
        nl.unload(core)
        with pytest.raises(UnresolvedImport) as err:
            nl.load_from_memory(fixture_bins.read("ext_needs_core"), resolver, backend)
        assert err.value.name == "core_stub"

    def test_double_registration_rejected(self, fixture_bins, tracked_loader):
        resolver = nl.SymbolResolver()
        core = tracked_loader(fixture_bins.read("core_stub"))
        nl.register_core_alias(resolver.aliases, "core_stub", core)
        with pytest.raises(AlreadyRegistered):
            nl.register_alias(resolver.aliases, "core_stub", core)

    def test_lookup_by_base_uses_in_memory_index(self, fixture_bins, tracked_loader):
        resolver = nl.SymbolResolver()
        core = tracked_loader(fixture_bins.read("core_stub"), resolver,
                              nl.BACKEND_MEMORY)
        nl.register_core_alias(resolver.aliases, "core_stub", core)
        resolver.events.clear()
        addr = resolver.lookup_by_base(core.base_address, "core_fn")
        assert addr == core.exports["core_fn"]
        assert resolver.system_queries("core_fn") == 0
        # a foreign base falls through to the system loader
        assert resolver.lookup_by_base(0xdead0000, "malloc") != 0
        assert resolver.system_queries("malloc") == 1


class TestOsLoaderOracle:
    def test_oracle_matches_fixture_contract(self, fixture_bins, tracked_loader):
        image = tracked_loader.oracle(fixture_bins.path("ext_basic"))
        assert nl.invoke_export(image, "answer") == 42

    def test_missing_path(self):
        with pytest.raises(OsLoaderFailure):
            nl.os_load_oracle("/nonexistent/lib.so")

    def test_memory_load_equals_oracle_for_all_fixture_exports(
            self, fixture_bins, tracked_loader):
        preload = {"ext_needs_core": "core_stub", "ext_bad_dep": "libextra"}
        for name in fixture_bins.names:
            resolver = nl.SymbolResolver()
            dep = preload.get(name)
            if dep:
                tracked_loader.oracle(fixture_bins.path(dep), global_symbols=True)
                dep_image = tracked_loader(fixture_bins.read(dep), resolver,
                                           nl.BACKEND_MEMORY)
                nl.register_alias(resolver.aliases, dep, dep_image)
            oracle = tracked_loader.oracle(fixture_bins.path(name))
            mem = tracked_loader(fixture_bins.read(name), resolver,
                                 nl.BACKEND_MEMORY)
            for symbol, expected in fixture_bins.exports[name].items():
                assert nl.invoke_export(oracle, symbol) == expected, (name, symbol)
                assert nl.invoke_export(mem, symbol) == expected, (name, symbol)
