"""Minimal ELF64 shared-object reader.

Parses just enough of the format from a byte buffer to map, relocate, and
audit the small position-independent objects this toolkit handles: the file
header, program headers, the dynamic table, the dynamic symbol table, and
RELA relocation tables. Everything outside that subset (32-bit objects,
foreign machines, REL-style relocations, TLS) raises MalformedImage.
"""

from __future__ import annotations

import dataclasses
import struct

from .errors import MalformedImage

ELF_MAGIC = b"\x7fELF"
ELFCLASS64 = 2
ELFDATA2LSB = 1
ET_DYN = 3

EM_X86_64 = 62
EM_AARCH64 = 183

PT_LOAD = 1
PT_DYNAMIC = 2

PF_X = 1
PF_W = 2
PF_R = 4

SHT_RELA = 4
SHT_DYNSYM = 11

SHN_UNDEF = 0

STB_GLOBAL = 1
STB_WEAK = 2

DT_NEEDED = 1
DT_SONAME = 14
DT_INIT = 12
DT_FINI = 13
DT_INIT_ARRAY = 25
DT_INIT_ARRAYSZ = 27
DT_FINI_ARRAY = 26
DT_FINI_ARRAYSZ = 28

# Relocation types we apply, keyed by e_machine. Meaning of the columns:
# relative (B + A), direct (S + A), jump/got slot (S).
_RELOC_TABLES = {
    EM_X86_64: {"relative": 8, "direct": 1, "slots": (6, 7)},
    EM_AARCH64: {"relative": 1027, "direct": 257, "slots": (1025, 1026)},
}

_EHDR = struct.Struct("<HHIQQQIHHHHHH")   # after the 16-byte ident
_PHDR = struct.Struct("<IIQQQQQQ")
_SHDR = struct.Struct("<IIQQQQIIQQ")
_SYM = struct.Struct("<IBBHQQ")
_RELA = struct.Struct("<QQq")
_DYN = struct.Struct("<qQ")


@dataclasses.dataclass(frozen=True)
class Segment:
    vaddr: int
    offset: int
    filesz: int
    memsz: int
    flags: int


@dataclasses.dataclass(frozen=True)
class DynSymbol:
    index: int
    name: str
    value: int
    size: int
    bind: int
    shndx: int

    @property
    def defined(self) -> bool:
        return self.shndx != SHN_UNDEF


@dataclasses.dataclass(frozen=True)
class Relocation:
    offset: int
    type: int
    symbol_index: int
    addend: int


@dataclasses.dataclass(frozen=True)
class SharedObject:
    """Parsed view of one shared object, still backed by its raw bytes."""

    data: bytes
    machine: int
    segments: tuple[Segment, ...]
    dynamic: dict[int, tuple[int, ...]]      # tag -> all values, file order
    symbols: tuple[DynSymbol, ...]
    relocations: tuple[Relocation, ...]
    needed: tuple[str, ...]
    soname: str | None

    def dyn_first(self, tag: int, default: int | None = None) -> int | None:
        values = self.dynamic.get(tag)
        return values[0] if values else default

    @property
    def reloc_types(self) -> dict:
        return _RELOC_TABLES[self.machine]


def _cstring(data: bytes, offset: int) -> str:
    if not 0 <= offset < len(data):
        raise MalformedImage("string table reference out of bounds")
    end = data.find(b"\x00", offset)
    if end < 0:
        raise MalformedImage("unterminated string table")
    return data[offset:end].decode("utf-8", "replace")


def parse_shared_object(data: bytes) -> SharedObject:
    """Parse ``data`` as a 64-bit little-endian ET_DYN object.

    Raises MalformedImage for anything that is not a well-formed object in
    the supported subset, including damaged tables; never an internal error.
    """
    try:
        return _parse(bytes(data))
    except MalformedImage:
        raise
    except (struct.error, IndexError, ValueError, OverflowError) as exc:
        raise MalformedImage(f"damaged object: {exc}") from exc


def _parse(data: bytes) -> SharedObject:
    if len(data) < 64 or data[:4] != ELF_MAGIC:
        raise MalformedImage("not an ELF image")
    if data[4] != ELFCLASS64 or data[5] != ELFDATA2LSB:
        raise MalformedImage("only 64-bit little-endian objects are supported")

    (e_type, e_machine, _ver, _entry, e_phoff, e_shoff, _flags, _ehsize,
     e_phentsize, e_phnum, e_shentsize, e_shnum, _shstrndx) = \
        _EHDR.unpack_from(data, 16)

    if e_type != ET_DYN:
        raise MalformedImage(f"not a shared object (e_type={e_type})")
    if e_machine not in _RELOC_TABLES:
        raise MalformedImage(f"unsupported machine {e_machine}")

    segments = []
    dyn_off = dyn_size = None
    for i in range(e_phnum):
        base = e_phoff + i * e_phentsize
        if base + _PHDR.size > len(data):
            raise MalformedImage("program header table out of bounds")
        p_type, p_flags, p_offset, p_vaddr, _paddr, p_filesz, p_memsz, _align = \
            _PHDR.unpack_from(data, base)
        if p_type == PT_LOAD:
            if p_offset + p_filesz > len(data) or p_filesz > p_memsz:
                raise MalformedImage("load segment out of bounds")
            segments.append(Segment(p_vaddr, p_offset, p_filesz, p_memsz, p_flags))
        elif p_type == PT_DYNAMIC:
            dyn_off, dyn_size = p_offset, p_filesz
    if not segments:
        raise MalformedImage("no loadable segments")
    if dyn_off is None or dyn_off + dyn_size > len(data):
        raise MalformedImage("missing or truncated dynamic segment")

    dynamic: dict[int, tuple[int, ...]] = {}
    pos = dyn_off
    while pos + _DYN.size <= dyn_off + dyn_size:
        tag, value = _DYN.unpack_from(data, pos)
        pos += _DYN.size
        if tag == 0:
            break
        dynamic[tag] = dynamic.get(tag, ()) + (value,)

    # Symbols and relocations come from the section headers; the full file
    # image is in memory, so file offsets are directly addressable.
    if e_shoff == 0 or e_shnum == 0:
        raise MalformedImage("object has no section headers")
    sections = []
    for i in range(e_shnum):
        base = e_shoff + i * e_shentsize
        if base + _SHDR.size > len(data):
            raise MalformedImage("section header table out of bounds")
        sections.append(_SHDR.unpack_from(data, base))

    dynsym = next((s for s in sections if s[1] == SHT_DYNSYM), None)
    if dynsym is None:
        raise MalformedImage("object has no dynamic symbol table")
    if dynsym[6] >= len(sections):
        raise MalformedImage("dynamic symbol table links to a missing string table")
    strtab_off = sections[dynsym[6]][4]  # sh_link -> .dynstr sh_offset

    symbols = []
    sym_off, sym_size = dynsym[4], dynsym[5]
    if sym_off + sym_size > len(data):
        raise MalformedImage("dynamic symbol table out of bounds")
    for i in range(sym_size // _SYM.size):
        st_name, st_info, _other, st_shndx, st_value, st_size = \
            _SYM.unpack_from(data, sym_off + i * _SYM.size)
        symbols.append(DynSymbol(
            index=i,
            name=_cstring(data, strtab_off + st_name) if st_name else "",
            value=st_value,
            size=st_size,
            bind=st_info >> 4,
            shndx=st_shndx,
        ))

    relocations = []
    for s in sections:
        if s[1] != SHT_RELA:
            continue
        rel_off, rel_size = s[4], s[5]
        if rel_off + rel_size > len(data):
            raise MalformedImage("relocation table out of bounds")
        for j in range(rel_size // _RELA.size):
            r_offset, r_info, r_addend = _RELA.unpack_from(data, rel_off + j * _RELA.size)
            relocations.append(Relocation(
                offset=r_offset,
                type=r_info & 0xFFFFFFFF,
                symbol_index=r_info >> 32,
                addend=r_addend,
            ))

    needed = tuple(_cstring(data, strtab_off + v) for v in dynamic.get(DT_NEEDED, ()))
    soname_off = dynamic.get(DT_SONAME)
    soname = _cstring(data, strtab_off + soname_off[0]) if soname_off else None

    return SharedObject(
        data=data,
        machine=e_machine,
        segments=tuple(segments),
        dynamic=dynamic,
        symbols=tuple(symbols),
        relocations=tuple(relocations),
        needed=needed,
        soname=soname,
    )


def dynamic_dependencies(data: bytes) -> tuple[str, ...]:
    """DT_NEEDED names recorded in the object, in file order."""
    return parse_shared_object(data).needed
