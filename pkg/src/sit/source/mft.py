"""MFT file record decoding: update-sequence fixups, attributes and paths."""

import struct
from dataclasses import dataclass, field
from typing import List, Optional

from sit.errors import SitError
from sit.source.runlist import DataRun, decode_data_runs

FILE_SIGNATURE = b"FILE"
UPDATE_SEQUENCE_STRIDE = 512  # fixed by NTFS, independent of the physical sector size

ATTR_STANDARD_INFORMATION = 0x10
ATTR_ATTRIBUTE_LIST = 0x20
ATTR_FILE_NAME = 0x30
ATTR_DATA = 0x80
ATTR_END = 0xFFFFFFFF

RECORD_IN_USE = 0x0001
RECORD_IS_DIRECTORY = 0x0002

ATTR_FLAG_COMPRESSED = 0x0001
ATTR_FLAG_ENCRYPTED = 0x4000
ATTR_FLAG_SPARSE = 0x8000

NS_POSIX, NS_WIN32, NS_DOS, NS_WIN32_AND_DOS = 0, 1, 2, 3

ROOT_RECORD = 5
FIRST_USER_RECORD = 16
ORPHAN_DIR = "$Orphan"


class MftError(SitError):
    """Base class for file record decoding problems."""


class FixupError(MftError):
    """The update sequence header is out of bounds."""


class TornWrite(FixupError):
    """A sector's trailing word does not match the update sequence number."""


class BadSignature(MftError):
    """The record does not start with ``FILE``."""


class TruncatedAttribute(MftError):
    """An attribute header or value runs past the record."""


def apply_fixups(record, bytes_per_sector):
    """Verify and undo the update-sequence protection of a multi-sector record.

    Every *bytes_per_sector*-sized block must end with the update sequence
    number; those words are replaced by the saved entries from the update
    sequence array. Returns repaired bytes and never modifies *record*.
    """
    if bytes_per_sector <= 0 or len(record) % bytes_per_sector:
        raise FixupError("record length %d is not a multiple of %d" % (len(record), bytes_per_sector))
    if len(record) < 8:
        raise FixupError("record too short for a multi-sector header")
    usa_offset, usa_count = struct.unpack_from("<HH", record, 4)
    sectors = usa_count - 1
    if usa_count < 2 or usa_offset + 2 * usa_count > len(record):
        raise FixupError("update sequence array (offset %d, count %d) out of bounds" % (usa_offset, usa_count))
    if sectors * bytes_per_sector > len(record):
        raise FixupError("update sequence covers %d sectors, record holds %d"
                         % (sectors, len(record) // bytes_per_sector))
    fixed = bytearray(record)
    usn = fixed[usa_offset:usa_offset + 2]
    for i in range(sectors):
        end = (i + 1) * bytes_per_sector
        if fixed[end - 2:end] != usn:
            raise TornWrite("sector %d ends with %s, expected USN %s"
                            % (i, fixed[end - 2:end].hex(), usn.hex()))
        entry = usa_offset + 2 + 2 * i
        fixed[end - 2:end] = fixed[entry:entry + 2]
    return bytes(fixed)


@dataclass
class StandardInformation:
    created: int
    modified: int
    mft_changed: int
    accessed: int
    attr_flags: int


@dataclass
class FileName:
    parent_record: int
    parent_sequence: int
    name: str
    namespace: int


@dataclass
class DataAttribute:
    name: str
    flags: int
    resident: bool
    content: bytes = b""
    runs: List[DataRun] = field(default_factory=list)
    start_vcn: int = 0
    last_vcn: int = 0
    allocated_size: int = 0
    real_size: int = 0
    initialized_size: int = 0
    instance: int = 0

    @property
    def compressed(self):
        return bool(self.flags & ATTR_FLAG_COMPRESSED)

    @property
    def encrypted(self):
        return bool(self.flags & ATTR_FLAG_ENCRYPTED)


@dataclass
class AttributeListEntry:
    type: int
    name: str
    start_vcn: int
    record_no: int
    sequence: int
    instance: int


@dataclass
class MftRecord:
    record_no: int
    sequence: int
    flags: int
    base_record: int
    std_info: Optional[StandardInformation] = None
    file_names: List[FileName] = field(default_factory=list)
    data: List[DataAttribute] = field(default_factory=list)
    attribute_list: Optional[DataAttribute] = None

    @property
    def in_use(self):
        return bool(self.flags & RECORD_IN_USE)

    @property
    def is_directory(self):
        return bool(self.flags & RECORD_IS_DIRECTORY)

    @property
    def is_extension(self):
        return self.base_record != 0

    @property
    def file_name(self):
        """Preferred name: Win32 or POSIX namespace first, DOS 8.3 only as a fallback."""
        for fn in self.file_names:
            if fn.namespace != NS_DOS:
                return fn
        return self.file_names[0] if self.file_names else None

    @property
    def unnamed_data(self):
        return [d for d in self.data if d.name == ""]

    @property
    def named_streams(self):
        return [d.name for d in self.data if d.name != ""]


def split_reference(ref):
    """Split a 64-bit file reference into (record number, sequence number)."""
    return ref & 0xFFFFFFFFFFFF, ref >> 48


def _utf16(buf, offset, chars):
    raw = buf[offset:offset + 2 * chars]
    if len(raw) != 2 * chars:
        raise TruncatedAttribute("name runs past attribute")
    return raw.decode("utf-16-le", errors="surrogatepass")


def _parse_std_info(value):
    if len(value) < 36:
        raise TruncatedAttribute("$STANDARD_INFORMATION is %d bytes" % len(value))
    created, modified, changed, accessed, flags = struct.unpack_from("<QQQQI", value, 0)
    return StandardInformation(created, modified, changed, accessed, flags)


def _parse_file_name(value):
    if len(value) < 66:
        raise TruncatedAttribute("$FILE_NAME is %d bytes" % len(value))
    parent_ref, = struct.unpack_from("<Q", value, 0)
    chars, namespace = value[64], value[65]
    parent, seq = split_reference(parent_ref)
    return FileName(parent, seq, _utf16(value, 66, chars), namespace)


def parse_attribute_list(value):
    entries = []
    pos = 0
    while pos + 26 <= len(value):
        atype, length, name_len, name_off = struct.unpack_from("<IHBB", value, pos)
        if length < 26 or pos + length > len(value):
            raise TruncatedAttribute("attribute list entry at %d has length %d" % (pos, length))
        start_vcn, ref, instance = struct.unpack_from("<QQH", value, pos + 8)
        name = _utf16(value, pos + name_off, name_len) if name_len else ""
        record_no, seq = split_reference(ref)
        entries.append(AttributeListEntry(atype, name, start_vcn, record_no, seq, instance))
        pos += length
    return entries


def parse_mft_record(fixed, record_no):
    """Decode a fixed-up file record into an ``MftRecord``."""
    if fixed[:4] != FILE_SIGNATURE:
        raise BadSignature("record %d has signature %r" % (record_no, bytes(fixed[:4])))
    if len(fixed) < 0x30:
        raise TruncatedAttribute("record %d is only %d bytes" % (record_no, len(fixed)))
    sequence, = struct.unpack_from("<H", fixed, 16)
    first_attr, flags, used = struct.unpack_from("<HHI", fixed, 20)
    base_ref, = struct.unpack_from("<Q", fixed, 32)
    rec = MftRecord(record_no, sequence, flags, split_reference(base_ref)[0])
    limit = min(used, len(fixed)) if used else len(fixed)

    pos = first_attr
    while True:
        if pos + 4 > limit:
            raise TruncatedAttribute("record %d: attribute chain ran past byte %d" % (record_no, limit))
        atype, = struct.unpack_from("<I", fixed, pos)
        if atype == ATTR_END:
            break
        if pos + 16 > limit:
            raise TruncatedAttribute("record %d: attribute header at %d truncated" % (record_no, pos))
        length, nonresident, name_len, name_off, aflags, instance = struct.unpack_from(
            "<IBBHHH", fixed, pos + 4)
        if length < 16 or length % 8 or pos + length > limit:
            raise TruncatedAttribute("record %d: attribute at %d has length %d" % (record_no, pos, length))
        attr = fixed[pos:pos + length]
        name = _utf16(attr, name_off, name_len) if name_len else ""
        if nonresident:
            if length < 64:
                raise TruncatedAttribute("record %d: non-resident header at %d truncated" % (record_no, pos))
            start_vcn, last_vcn, runs_off = struct.unpack_from("<QQH", attr, 16)
            alloc, real, init = struct.unpack_from("<QQQ", attr, 40)
            if runs_off >= length:
                raise TruncatedAttribute("record %d: runlist offset %d past attribute" % (record_no, runs_off))
            parsed = DataAttribute(
                name=name, flags=aflags, resident=False,
                runs=decode_data_runs(attr[runs_off:]),
                start_vcn=start_vcn, last_vcn=last_vcn,
                allocated_size=alloc, real_size=real, initialized_size=init,
                instance=instance,
            )
        else:
            if length < 24:
                raise TruncatedAttribute("record %d: resident header at %d truncated" % (record_no, pos))
            value_len, value_off = struct.unpack_from("<IH", attr, 16)
            if value_off + value_len > length:
                raise TruncatedAttribute("record %d: resident value at %d truncated" % (record_no, pos))
            value = attr[value_off:value_off + value_len]
            parsed = DataAttribute(
                name=name, flags=aflags, resident=True, content=bytes(value),
                real_size=value_len, allocated_size=value_len, initialized_size=value_len,
                instance=instance,
            )

        if atype == ATTR_STANDARD_INFORMATION and parsed.resident:
            rec.std_info = _parse_std_info(parsed.content)
        elif atype == ATTR_FILE_NAME and parsed.resident:
            rec.file_names.append(_parse_file_name(parsed.content))
        elif atype == ATTR_DATA:
            rec.data.append(parsed)
        elif atype == ATTR_ATTRIBUTE_LIST:
            rec.attribute_list = parsed
        pos += length
    return rec


def _valid_parent(parent, fn):
    if parent is None or not parent.in_use or not parent.is_directory:
        return False
    return not fn.parent_sequence or parent.sequence == fn.parent_sequence


def resolve_paths(records, on_orphan=None):
    """Map record number to a backslash-rooted full path.

    Parents are followed up to the root directory (record 5). Entries whose
    ancestry is broken (missing, deleted or reused parent, or a cycle) are
    placed under ``\\$Orphan\\``; *on_orphan* is called with the number of
    each record re-rooted there. Records without a name get no path.
    """
    paths = {}

    def resolve(rn):
        chain = []
        seen = set()
        cur = rn
        while True:
            if cur in paths:
                prefix = paths[cur]
                break
            if cur == ROOT_RECORD:
                prefix = paths[cur] = "\\"
                break
            rec = records.get(cur)
            fn = rec.file_name if rec is not None else None
            if fn is None or cur in seen:
                if not chain:
                    return
                broken = chain[-1][0]
                if on_orphan is not None:
                    on_orphan(broken)
                prefix = "\\" + ORPHAN_DIR
                break
            seen.add(cur)
            chain.append((cur, fn.name))
            if not _valid_parent(records.get(fn.parent_record), fn):
                if on_orphan is not None:
                    on_orphan(cur)
                prefix = "\\" + ORPHAN_DIR
                break
            cur = fn.parent_record
        for rec_no, name in reversed(chain):
            prefix = prefix.rstrip("\\") + "\\" + name
            paths[rec_no] = prefix

    for rn in sorted(records):
        if rn not in paths:
            resolve(rn)
    return paths
