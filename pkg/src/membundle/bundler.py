"""Build bundles: classify a module tree, audit native dependencies, write a
deterministic in-memory-loadable ZIP, and emit the embeddable byte array.

Archives come out byte-identical for identical trees: entries are sorted by
archive path, timestamps are zeroed, and the store-vs-deflate choice is a
pure function of payload size.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import os
import re
import struct
import sys
import zlib
from importlib import resources
from typing import Iterable, Optional

from .elf import dynamic_dependencies
from .errors import AuditViolation, InvalidSymbol, IoFailure, UnreadableTree
from .resolver import ModuleKind, SearchOrderRule, default_search_order

VERDICT_SYSTEM = "system_allowlisted"
VERDICT_CORE = "core_aliased"
VERDICT_VIOLATION = "violation"

# Entries smaller than this stay uncompressed; deflate rarely pays below it.
STORE_LIMIT = 64

_DOS_EPOCH = (0, 0)     # zeroed time/date fields


@dataclasses.dataclass(frozen=True)
class DependencyFinding:
    extension: str
    dependency: str
    verdict: str


@dataclasses.dataclass(frozen=True)
class ManifestEntry:
    source_path: str
    archive_path: str
    kind: ModuleKind


@dataclasses.dataclass
class BundleManifest:
    entries: list[ManifestEntry] = dataclasses.field(default_factory=list)
    skipped: list[str] = dataclasses.field(default_factory=list)
    audit: list[DependencyFinding] = dataclasses.field(default_factory=list)
    archive_bytes_digest: Optional[str] = None
    created_at: str = ""

    def native_entries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.kind is ModuleKind.NATIVE_EXTENSION]

    def violations(self) -> list[DependencyFinding]:
        return [f for f in self.audit if f.verdict == VERDICT_VIOLATION]


# -- classification ----------------------------------------------------------

def classify_tree(root: str, rules: Iterable[SearchOrderRule] | None = None
                  ) -> BundleManifest:
    """Map every rule-matching file under ``root`` to an archive path.

    Suffix matching is case-sensitive; non-matching files land in the
    manifest's skipped list.
    """
    if not os.path.isdir(root):
        raise UnreadableTree(f"{root!r} is not a readable directory")
    rules = tuple(rules) if rules is not None else default_search_order("/")

    manifest = BundleManifest(
        created_at=datetime.datetime.now(datetime.timezone.utc).isoformat())
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for fname in sorted(filenames):
            source = os.path.join(dirpath, fname)
            rel = os.path.relpath(source, root).replace(os.sep, "/")
            rule = next((r for r in rules if rel.endswith(r.suffix)), None)
            if rule is None:
                manifest.skipped.append(rel)
            else:
                manifest.entries.append(ManifestEntry(source, rel, rule.kind))
    manifest.entries.sort(key=lambda e: e.archive_path)
    return manifest


# -- dependency audit --------------------------------------------------------

def default_allowlist(platform: str | None = None) -> frozenset[str]:
    """Shipped allowlist for the given (or current) platform."""
    key = platform or sys.platform
    if key.startswith("linux"):
        name = "linux.txt"
    elif key == "darwin":
        name = "darwin.txt"
    elif key in ("win32", "cygwin", "windows"):
        name = "windows.txt"
    else:
        name = "linux.txt"
    text = resources.files(__package__).joinpath(f"data/allowlists/{name}").read_text()
    return _parse_allowlist(text)


def load_allowlist(path: str) -> frozenset[str]:
    """Allowlist file: one library name per line, ``#`` comments."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return _parse_allowlist(fh.read())
    except OSError as exc:
        raise IoFailure(f"cannot read allowlist {path!r}: {exc}") from exc


def _parse_allowlist(text: str) -> frozenset[str]:
    names = set()
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            names.add(line)
    return frozenset(names)


def audit_native(extension_bytes: bytes, allowlist: Iterable[str],
                 core_name: str | None = None,
                 extension: str = "") -> list[DependencyFinding]:
    """One finding per dynamic dependency recorded in the object."""
    allowed = frozenset(allowlist)
    findings = []
    for dep in dynamic_dependencies(extension_bytes):
        if core_name is not None and dep == core_name:
            verdict = VERDICT_CORE
        elif dep in allowed:
            verdict = VERDICT_SYSTEM
        else:
            verdict = VERDICT_VIOLATION
        findings.append(DependencyFinding(extension, dep, verdict))
    return findings


def audit_manifest(manifest: BundleManifest, allowlist: Iterable[str],
                   core_name: str | None = None) -> BundleManifest:
    """Run the dependency audit over every native entry in the manifest."""
    manifest.audit = []
    for entry in manifest.native_entries():
        with open(entry.source_path, "rb") as fh:
            manifest.audit.extend(
                audit_native(fh.read(), allowlist, core_name, entry.archive_path))
    return manifest


# -- deterministic archive writer --------------------------------------------

def write_archive(files: Iterable[tuple[str, bytes]]) -> bytes:
    """Write a ZIP archive with sorted entries and zeroed timestamps.

    Entries below STORE_LIMIT bytes are stored; the rest are deflated.
    """
    ordered = sorted(files, key=lambda item: item[0])
    seen: set[str] = set()
    body = bytearray()
    central = bytearray()
    count = 0
    for path, data in ordered:
        if path in seen:
            raise ValueError(f"duplicate archive path {path!r}")
        seen.add(path)
        name = path.encode("utf-8")
        flags = 0x0800 if not path.isascii() else 0
        crc = zlib.crc32(data)
        if len(data) < STORE_LIMIT:
            method, payload = 0, data
        else:
            compressor = zlib.compressobj(9, zlib.DEFLATED, -15)
            method, payload = 8, compressor.compress(data) + compressor.flush()
        offset = len(body)
        body += struct.pack("<4sHHHHHIIIHH", b"PK\x03\x04", 20, flags, method,
                            *_DOS_EPOCH, crc, len(payload), len(data),
                            len(name), 0)
        body += name
        body += payload
        central += struct.pack("<4sHHHHHHIIIHHHHHII", b"PK\x01\x02", 20, 20,
                               flags, method, *_DOS_EPOCH, crc, len(payload),
                               len(data), len(name), 0, 0, 0, 0, 0, offset)
        central += name
        count += 1
    end = struct.pack("<4sHHHHIIH", b"PK\x05\x06", 0, 0, count, count,
                      len(central), len(body), 0)
    return bytes(body) + bytes(central) + end


def write_bundle(manifest: BundleManifest, out=None,
                 fail_on_violation: bool = False) -> bytes:
    """Produce the archive for a classified (and audited) manifest.

    ``out`` may be a path or a binary file object. With ``fail_on_violation``
    the write aborts on any audit violation or any unaudited native entry.
    """
    if fail_on_violation:
        bad = manifest.violations()
        audited = {f.extension for f in manifest.audit}
        bad += [DependencyFinding(e.archive_path, "<unaudited>", VERDICT_VIOLATION)
                for e in manifest.native_entries() if e.archive_path not in audited]
        if bad:
            raise AuditViolation(bad)

    def payloads():
        for entry in manifest.entries:
            try:
                with open(entry.source_path, "rb") as fh:
                    yield entry.archive_path, fh.read()
            except OSError as exc:
                raise IoFailure(f"cannot read {entry.source_path!r}: {exc}") from exc

    archive = write_archive(payloads())
    manifest.archive_bytes_digest = "sha256:" + hashlib.sha256(archive).hexdigest()

    if out is not None:
        try:
            if hasattr(out, "write"):
                out.write(archive)
            else:
                with open(out, "wb") as fh:
                    fh.write(archive)
        except OSError as exc:
            raise IoFailure(f"cannot write archive: {exc}") from exc
    return archive


# -- embeddable array ---------------------------------------------------------

_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def emit_embedded_array(archive_bytes: bytes, symbol: str) -> str:
    """C source declaring ``symbol[]`` with the archive bytes and
    ``symbol_len``, 12 two-digit hex literals per line."""
    if not _IDENTIFIER.match(symbol):
        raise InvalidSymbol(f"{symbol!r} is not a valid identifier")
    lines = [f"unsigned char {symbol}[] = {{"]
    hexed = [f"0x{b:02x}" for b in archive_bytes]
    for i in range(0, len(hexed), 12):
        chunk = ", ".join(hexed[i:i + 12])
        tail = "," if i + 12 < len(hexed) else ""
        lines.append(f"  {chunk}{tail}")
    lines.append("};")
    lines.append(f"unsigned int {symbol}_len = {len(archive_bytes)};")
    return "\n".join(lines) + "\n"


# -- manifest text form --------------------------------------------------------

def serialize_manifest(manifest: BundleManifest) -> str:
    """Line-oriented form: ``<kind>\\t<archive-path>\\t<source-path>`` per
    entry, with skipped files and audit findings as ``#`` comment lines."""
    lines = [f"{e.kind.value}\t{e.archive_path}\t{e.source_path}"
             for e in manifest.entries]
    lines += [f"# skipped\t{path}" for path in manifest.skipped]
    lines += [f"# audit\t{f.extension}\t{f.dependency}\t{f.verdict}"
              for f in manifest.audit]
    if manifest.archive_bytes_digest:
        lines.append(f"# digest\t{manifest.archive_bytes_digest}")
    return "\n".join(lines) + "\n"


def parse_manifest_entries(text: str) -> list[tuple[str, str, str]]:
    """Inverse of serialize_manifest for the entry lines."""
    rows = []
    for line in text.splitlines():
        if line and not line.startswith("#"):
            kind, archive_path, source_path = line.split("\t")
            rows.append((kind, archive_path, source_path))
    return rows
