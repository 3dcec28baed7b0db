"""membundle: package script modules and native extensions into a single
in-memory archive, then resolve, load, and execute them entirely from memory.

The pieces, bottom up:

- :mod:`membundle.archive` parses ZIP images held in byte buffers.
- :mod:`membundle.resolver` walks an ordered finder chain using the suffix
  search-order table and loads modules through pluggable executors.
- :mod:`membundle.frozen` serves modules compiled into the host itself.
- :mod:`membundle.nativeload` maps native shared objects straight from
  memory, with core-library aliasing and an OS-loader oracle for tests.
- :mod:`membundle.runtime` ties it together: isolated bootstrap, imports
  under the execution gate, shutdown.
- :mod:`membundle.bundler` builds deterministic bundles and audits native
  dependencies.
- :mod:`membundle.cli` exposes the operator commands.
"""

from .archive import ArchiveImage, EntryRecord, contains_prefix, open_archive, read_entry
from .bundler import (
    BundleManifest,
    DependencyFinding,
    audit_manifest,
    audit_native,
    classify_tree,
    default_allowlist,
    emit_embedded_array,
    load_allowlist,
    serialize_manifest,
    write_archive,
    write_bundle,
)
from .directives import compile_directives, execute_module
from .frozen import FrozenFinder, FrozenTable, freeze, frozen_find, seal
from .nativeload import (
    AliasTable,
    LoadedImage,
    SymbolResolver,
    default_backend,
    get_symbol,
    invoke_export,
    load_from_memory,
    os_load_oracle,
    register_alias,
    register_core_alias,
    unload,
)
from .resolver import (
    ArchiveFinder,
    BuiltinFinder,
    ExternalPathFinder,
    FinderChain,
    ModuleCode,
    ModuleKind,
    ModuleRecord,
    SearchOrderRule,
    candidate_paths,
    default_search_order,
    find_loader,
    get_module_code,
    get_module_info,
    install_finder,
    load_module,
)
from .runtime import (
    ExecutionGate,
    GateToken,
    Runtime,
    RuntimeConfig,
    acquire_gate,
    bootstrap,
    import_module,
    release_gate,
    shutdown,
)

from . import errors

__version__ = "0.1.0"
