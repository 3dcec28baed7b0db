"""Frozen-module table: payloads compiled into the host artifact.

The frozen finder sits ahead of every archive finder, so a frozen name is
served without touching any archive or disk. Native kinds are forbidden, and
the table seals when the runtime bootstraps; after that no mutation succeeds.
"""

from __future__ import annotations

from typing import Optional

from .errors import NativeNotFreezable, TableSealed
from .resolver import LoadContext, ModuleCode, ModuleKind, ModuleRecord


class FrozenTable:
    def __init__(self):
        self.entries: dict[str, tuple[bytes, ModuleKind]] = {}
        self._sealed = False

    @property
    def sealed(self) -> bool:
        return self._sealed


def freeze(table: FrozenTable, fullname: str, payload: bytes,
           kind: ModuleKind) -> FrozenTable:
    """Add (or replace) a frozen entry. Fails once the table is sealed."""
    if table.sealed:
        raise TableSealed(f"cannot freeze {fullname!r}: table is sealed")
    if kind is ModuleKind.NATIVE_EXTENSION:
        raise NativeNotFreezable(f"{fullname!r}: native extensions cannot be frozen")
    table.entries[fullname] = (bytes(payload), kind)
    return table


def seal(table: FrozenTable) -> FrozenTable:
    table._sealed = True
    return table


class FrozenFinder:
    """Chain finder serving the frozen table."""

    def __init__(self, table: FrozenTable, name: str = "frozen"):
        self.table = table
        self.name = name

    def find(self, fullname: str) -> Optional["FrozenFinder"]:
        return self if fullname in self.table.entries else None

    def load(self, fullname: str, ctx: LoadContext) -> ModuleRecord:
        payload, kind = self.table.entries[fullname]
        code = ModuleCode(fullname, kind, f"<frozen {fullname}>", payload)
        namespace = ctx.executor(code, ctx)
        return ModuleRecord(fullname, kind, self.name, namespace=namespace)


def frozen_find(table: FrozenTable, fullname: str) -> Optional[FrozenFinder]:
    """Loader for a frozen name, or None. Never consults archives or disk."""
    return FrozenFinder(table).find(fullname)
