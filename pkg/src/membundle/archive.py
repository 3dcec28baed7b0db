"""In-memory ZIP archive reader.

Parses a byte buffer as a ZIP archive and serves entry data without ever
touching a file. Only the subset of the format needed for module bundles is
accepted: compression methods 0 (stored) and 8 (deflate), no ZIP64, no
encryption, no spanning. Anything else is rejected loudly rather than
misparsed.

The reader tolerates a fixed-size prefix before the archive proper (the
self-extracting layout) by rebasing all offsets on the end record, the same
way common extractors do.
"""

from __future__ import annotations

import dataclasses
import struct
import zlib
from types import MappingProxyType
from typing import Mapping

from .errors import (
    ChecksumMismatch,
    CorruptDirectory,
    DecompressFailure,
    EntryNotFound,
    NotAnArchive,
    UnsupportedArchiveFeature,
)

END_RECORD_SIG = b"PK\x05\x06"
CENTRAL_ENTRY_SIG = b"PK\x01\x02"
LOCAL_HEADER_SIG = b"PK\x03\x04"
ZIP64_LOCATOR_SIG = b"PK\x06\x07"

END_RECORD_SIZE = 22
MAX_COMMENT = 0xFFFF

COMPRESSION_STORED = 0
COMPRESSION_DEFLATE = 8

_FLAG_ENCRYPTED = 0x0001
_FLAG_UTF8 = 0x0800
_ZIP64_EXTRA_ID = 0x0001


@dataclasses.dataclass(frozen=True)
class EntryRecord:
    """One central-directory entry, offsets relative to the buffer start."""

    path: str
    compression: int
    compressed_size: int
    uncompressed_size: int
    crc32: int
    local_header_offset: int
    is_dir: bool


@dataclasses.dataclass(frozen=True)
class ArchiveImage:
    """An immutable parsed archive: the raw buffer plus its entry index."""

    data: bytes
    directory: Mapping[str, EntryRecord]
    comment: bytes


def _normalize_path(raw: str) -> str:
    if "\\" in raw:
        raise CorruptDirectory(f"backslash in entry path {raw!r}")
    if raw.startswith("/"):
        raise CorruptDirectory(f"absolute entry path {raw!r}")
    if not raw:
        raise CorruptDirectory("empty entry path")
    for segment in raw.split("/"):
        if segment == "..":
            raise CorruptDirectory(f"parent-directory segment in entry path {raw!r}")
    return raw


def _decode_name(raw: bytes, flags: int) -> str:
    if flags & _FLAG_UTF8:
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptDirectory(f"undecodable entry name {raw!r}") from exc
    try:
        return raw.decode("ascii")
    except UnicodeDecodeError:
        return raw.decode("cp437")


def _find_end_record(data: bytes) -> int:
    """Locate the end-of-central-directory record, scanning at most the
    trailing 64 KiB + 22 bytes. Returns its offset in ``data``."""
    window_start = max(0, len(data) - (MAX_COMMENT + END_RECORD_SIZE))
    pos = data.rfind(END_RECORD_SIG, window_start)
    while pos >= 0:
        if pos + END_RECORD_SIZE <= len(data):
            (comment_len,) = struct.unpack_from("<H", data, pos + 20)
            if pos + END_RECORD_SIZE + comment_len == len(data):
                return pos
        pos = data.rfind(END_RECORD_SIG, window_start, pos)
    raise NotAnArchive("no end-of-central-directory record found")


def _reject_zip64_extra(extra: bytes, path: str) -> None:
    pos = 0
    while pos + 4 <= len(extra):
        field_id, size = struct.unpack_from("<HH", extra, pos)
        if field_id == _ZIP64_EXTRA_ID:
            raise UnsupportedArchiveFeature(f"ZIP64 extra field on entry {path!r}")
        pos += 4 + size


def _local_data_range(data: bytes, entry: EntryRecord) -> tuple[int, int]:
    """Start/end of the compressed payload, validated against the local header."""
    off = entry.local_header_offset
    if off + 30 > len(data):
        raise CorruptDirectory(f"local header of {entry.path!r} out of bounds")
    if data[off:off + 4] != LOCAL_HEADER_SIG:
        raise CorruptDirectory(f"bad local header signature for {entry.path!r}")
    name_len, extra_len = struct.unpack_from("<HH", data, off + 26)
    start = off + 30 + name_len + extra_len
    end = start + entry.compressed_size
    if end > len(data):
        raise CorruptDirectory(f"data of {entry.path!r} extends past buffer end")
    return start, end


def open_archive(data: bytes) -> ArchiveImage:
    """Parse ``data`` as a ZIP archive held fully in memory.

    Raises NotAnArchive when no end record is present, CorruptDirectory when
    the central directory is inconsistent with the end record, and
    UnsupportedArchiveFeature for ZIP64/encrypted/odd-compression archives.
    """
    data = bytes(data)
    if len(data) < END_RECORD_SIZE:
        raise NotAnArchive(f"buffer of {len(data)} bytes is smaller than an end record")

    end_pos = _find_end_record(data)
    (disk_no, cd_disk, disk_entries, total_entries, cd_size, cd_offset) = \
        struct.unpack_from("<HHHHII", data, end_pos + 4)
    comment = data[end_pos + END_RECORD_SIZE:]

    if disk_no != 0 or cd_disk != 0 or disk_entries != total_entries:
        raise UnsupportedArchiveFeature("spanned archives are not supported")
    if total_entries == 0xFFFF or cd_size == 0xFFFFFFFF or cd_offset == 0xFFFFFFFF:
        raise UnsupportedArchiveFeature("ZIP64 end-record markers present")
    if end_pos >= 20 and data[end_pos - 20:end_pos - 16] == ZIP64_LOCATOR_SIG:
        raise UnsupportedArchiveFeature("ZIP64 locator present")

    if cd_size > end_pos:
        raise CorruptDirectory("central directory larger than the space before the end record")
    cd_start = end_pos - cd_size
    prefix = cd_start - cd_offset
    if prefix < 0:
        raise CorruptDirectory("central directory offset past its actual position")

    directory: dict[str, EntryRecord] = {}
    pos = cd_start
    for _ in range(total_entries):
        if pos + 46 > end_pos or data[pos:pos + 4] != CENTRAL_ENTRY_SIG:
            raise CorruptDirectory("central directory ends before the recorded entry count")
        (flags, method, _time, _date, crc, csize, usize, name_len, extra_len,
         comment_len, _disk, _iattr, _eattr, local_off) = \
            struct.unpack_from("<HHHHIIIHHHHHII", data, pos + 8)

        if flags & _FLAG_ENCRYPTED:
            raise UnsupportedArchiveFeature("encrypted entries are not supported")
        if method not in (COMPRESSION_STORED, COMPRESSION_DEFLATE):
            raise UnsupportedArchiveFeature(f"compression method {method} not supported")
        if 0xFFFFFFFF in (csize, usize, local_off):
            raise UnsupportedArchiveFeature("ZIP64 entry markers present")

        raw_name = data[pos + 46:pos + 46 + name_len]
        if len(raw_name) != name_len:
            raise CorruptDirectory("entry name extends past buffer end")
        extra = data[pos + 46 + name_len:pos + 46 + name_len + extra_len]
        _reject_zip64_extra(extra, raw_name.decode("latin1"))

        path = _normalize_path(_decode_name(raw_name, flags))
        if method == COMPRESSION_STORED and csize != usize:
            raise CorruptDirectory(f"stored entry {path!r} has mismatched sizes")

        entry = EntryRecord(
            path=path,
            compression=method,
            compressed_size=csize,
            uncompressed_size=usize,
            crc32=crc,
            local_header_offset=local_off + prefix,
            is_dir=path.endswith("/"),
        )
        if not entry.is_dir:
            _local_data_range(data, entry)  # bounds check up front
        directory[path] = entry  # duplicate names: last one wins
        pos += 46 + name_len + extra_len + comment_len

    if pos != end_pos:
        raise CorruptDirectory("central directory size disagrees with the end record")

    return ArchiveImage(data=data, directory=MappingProxyType(directory), comment=comment)


def read_entry(archive: ArchiveImage, path: str) -> bytes:
    """Return the fully decompressed bytes of an entry, verifying its CRC-32."""
    try:
        entry = archive.directory[path]
    except KeyError:
        raise EntryNotFound(f"no entry {path!r} in archive") from None

    if entry.is_dir:
        return b""

    start, end = _local_data_range(archive.data, entry)
    raw = archive.data[start:end]

    if entry.compression == COMPRESSION_STORED:
        payload = raw
    else:
        try:
            payload = zlib.decompress(raw, -15)
        except zlib.error as exc:
            raise DecompressFailure(f"entry {path!r}: {exc}") from exc
        if len(payload) != entry.uncompressed_size:
            raise DecompressFailure(
                f"entry {path!r} inflated to {len(payload)} bytes,"
                f" expected {entry.uncompressed_size}")

    if zlib.crc32(payload) != entry.crc32:
        raise ChecksumMismatch(f"entry {path!r} failed its CRC-32 check")
    return payload


def contains_prefix(archive: ArchiveImage, dir_path: str) -> bool:
    """True when some entry lives under ``dir_path/``."""
    needle = dir_path.rstrip("/") + "/"
    return any(name.startswith(needle) for name in archive.directory)
